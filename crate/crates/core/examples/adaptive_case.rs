//! Adaptive controller on one bundled transient, printed cycle by cycle
//! around the step.
//!
//!     cargo run --release --example adaptive_case -- case3

use combphase::scenario::{self, ControllerKind, Preset, ScenarioConfig};

fn main() -> combphase::Result<()> {
    let preset: Preset = std::env::args().nth(1).as_deref().unwrap_or("case1").parse()?;
    let out = scenario::run_scenario(&ScenarioConfig::preset(preset, ControllerKind::Adaptive))?;

    println!("{:>6} {:>7} {:>7} {:>8} {:>8} {:>8}", "t", "soi", "ca50", "ref", "x1_hat", "x2_hat");
    for r in out.records.iter().filter(|r| (4.6..6.0).contains(&r.time_s)) {
        let s = r.controller.expect("adaptive state");
        let ca50 = r.ca50.map_or("--".into(), |y| format!("{y:.3}"));
        println!(
            "{:>6.3} {:>7.2} {:>7} {:>8.3} {:>8.5} {:>8.4}",
            r.time_s, r.soi_actuated, ca50, r.ca50_ref, s.x1_hat, s.x2_hat
        );
    }
    print!("\n{}", out.metrics.to_toml());
    Ok(())
}

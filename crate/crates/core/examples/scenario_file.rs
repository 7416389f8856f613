//! Run a scenario described in TOML.
//!
//!     cargo run --release --example scenario_file -- crates/core/examples/scenarios/egr_step.toml

use combphase::scenario;

fn main() -> combphase::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/scenarios/egr_step.toml").into());
    let cfg = scenario::load_scenario(&path)?;
    let out = scenario::run_scenario(&cfg)?;
    println!("{}: {} cycles", cfg.name, out.records.len());
    for (name, seg) in ["pre", "post"].iter().zip(&out.metrics.segments) {
        println!(
            "{name:>4}: settling {:?}, band {:?}, peak {:+.3}",
            seg.settling_cycles, seg.steady_state_error_band, seg.transient_peak_error
        );
    }
    Ok(())
}

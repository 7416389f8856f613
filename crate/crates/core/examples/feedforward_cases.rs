//! Feedforward tracking across all five transients, with and without
//! plant-model mismatch.

use combphase::scenario::{self, ControllerKind, Preset, ScenarioConfig};
use combphase::PlantConfig;

fn main() -> combphase::Result<()> {
    println!("{:<6} {:>10} {:>20} {:>20} {:>8}", "case", "plant", "pre band", "post band", "peak");
    for preset in Preset::ALL {
        for (label, plant) in [("mismatch", PlantConfig::default()), ("matched", PlantConfig::matched())] {
            let mut cfg = ScenarioConfig::preset(preset, ControllerKind::Feedforward);
            cfg.plant = plant;
            let m = scenario::run_scenario(&cfg)?.metrics;
            let band = |b: [f64; 2]| format!("[{:+.3}, {:+.3}]", b[0], b[1]);
            println!(
                "{:<6} {label:>10} {:>20} {:>20} {:>+8.3}",
                preset.name(),
                band(m.pre().steady_state_error_band),
                band(m.post().steady_state_error_band),
                m.post().transient_peak_error
            );
        }
    }
    Ok(())
}

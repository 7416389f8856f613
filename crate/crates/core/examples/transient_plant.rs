//! Open-loop plant under an EGR ramp: intake lag, fuel delay and SOI
//! quantization, no controller.

use combphase::plant::Ramp;
use combphase::{Plant, PlantConfig, TransientProfile};

fn main() -> combphase::Result<()> {
    let profile = TransientProfile {
        egr: Ramp::new(0.1, 0.4, 0.5, 0.5),
        ..TransientProfile::flat(1300.0, 0.1, 0.7, 2.0, 305.0, 7.0)
    };
    let mut plant = Plant::new(PlantConfig::default(), profile)?;
    println!("{:>6} {:>6} {:>7} {:>7} {:>6} {:>7}", "t", "egr", "p_ivc", "t_ivc", "soi", "ca50");
    while plant.time() < 2.0 {
        let r = plant.step_cycle(-1.23);
        let ca50 = r.ca50.map_or("--".into(), |y| format!("{y:.3}"));
        println!(
            "{:>6.3} {:>6.3} {:>7.3} {:>7.2} {:>6.1} {:>7}",
            r.time_s, r.cond.egr, r.cond.ivc.p_ivc, r.cond.ivc.t_ivc, r.soi_actuated, ca50
        );
    }
    Ok(())
}

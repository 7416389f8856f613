//! One-step decrease of V = (y_d − y)² when the plant is exactly the
//! control model and the observer starts off.

use combphase::control::{self, AdaptiveController, LyapunovMonitor, SoiBounds};
use combphase::scenario;
use combphase::{Plant, PlantConfig, TransientProfile};

fn main() -> combphase::Result<()> {
    let cfg = PlantConfig::matched();
    let mut plant = Plant::new(cfg.clone(), TransientProfile::flat(1300.0, 0.25, 0.7, 2.0, 305.0, 7.0))?;
    let mut init = control::observer_init(&plant.current_condition(), &cfg.true_params, &cfg.geom, cfg.x_r);
    init.x1_hat *= 1.5;
    init.x2_hat *= 0.9;
    let mut ctl = AdaptiveController::new(cfg.true_params, SoiBounds::default(), init);

    let mut mon = LyapunovMonitor::new();
    for r in scenario::run_closed_loop(&mut plant, &mut ctl, 1.0)? {
        match r.ca50 {
            Some(y) => println!("cycle {:>2}: ca50 {y:.6}  V {:.3e}", r.cycle_index, mon.record(r.ca50_ref_latched, y)),
            None => println!("cycle {:>2}: no fuel yet", r.cycle_index),
        }
    }
    println!("ΔV: {:?}", mon.differences());
    println!("max |ΔV + V| = {:.1e}", mon.max_decrease_violation());
    Ok(())
}

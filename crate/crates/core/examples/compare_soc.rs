//! Closed-form SOC against the integrated knock model over the
//! 516-point condition lattice.

use combphase::analysis;
use combphase::lattice::{halton_lattice, ConditionBox};
use combphase::model::PressureTrace;
use combphase::{EngineGeometry, ModelParams};

fn main() -> combphase::Result<()> {
    let geom = EngineGeometry::default();
    let conds = halton_lattice(&ConditionBox::SIMULATION, ConditionBox::DEFAULT_POINTS, &geom);
    for trace in [PressureTrace::Polytropic, PressureTrace::FrozenAtSoi] {
        let c = analysis::compare_soc(&conds, &ModelParams::REFERENCE, &geom, 0.01, trace)?;
        println!(
            "{trace:?}: mean {:+.5}  std {:.5}  max {:.5}  beyond 1 CAD: {}",
            c.mean, c.std_dev, c.max_abs_error, c.beyond_one_cad
        );
    }
    Ok(())
}

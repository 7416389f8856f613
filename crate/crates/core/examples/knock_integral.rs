//! Step-size convergence of the knock-integral crossing, and the two
//! pressure histories it can run on.

use combphase::engine::IvcState;
use combphase::model::{self, ModelParams, OperatingCondition, PressureTrace};
use combphase::EngineGeometry;

fn main() -> combphase::Result<()> {
    let geom = EngineGeometry::default();
    let params = ModelParams::REFERENCE;
    let cond = OperatingCondition {
        n: 1400.0,
        egr: 0.25,
        phi: 0.6,
        ivc: IvcState::at_ivc(&geom, 3.2, 395.0),
        x_r: 0.04,
        soi: -3.0,
    };

    let fine = model::soc_full_integral(&cond, &params, &geom, 0.001)?;
    for step in [1.0, 0.5, 0.1, 0.05, 0.01] {
        let soc = model::soc_full_integral(&cond, &params, &geom, step)?;
        println!("step {step:>5}: SOC {soc:.6}  (Δ {:+.2e})", soc - fine);
    }

    let frozen = model::soc_integral(&cond, &params, &geom, 0.01, PressureTrace::FrozenAtSoi)?;
    let (p, t) = model::soi_state(&cond, &params, &geom)?;
    println!("frozen at SOI: {frozen:.4}, closed form: {:.4}", model::soc_simplified(&cond, p, t, &params)?);

    // A late, lean, heavily diluted point never ignites before EVO.
    let cold = OperatingCondition { egr: 0.6, phi: 0.2, soi: 15.0, ivc: IvcState::at_ivc(&geom, 1.0, 300.0), ..cond };
    match model::soc_full_integral(&cold, &params, &geom, 0.1) {
        Err(e) => println!("{e}"),
        Ok(soc) => println!("unexpected SOC {soc:.3}"),
    }
    Ok(())
}

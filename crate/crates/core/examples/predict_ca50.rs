//! SOC and CA50 at a single operating point, closed form against the
//! integrated knock model.
//!
//!     cargo run --example predict_ca50 -- 1350 0.3 0.7 3.5 390

use combphase::engine::IvcState;
use combphase::model::{self, ModelParams, OperatingCondition, WiebeParams};
use combphase::EngineGeometry;

fn main() -> combphase::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let [n, egr, phi, p_ivc, t_ivc] = match args[..] {
        [a, b, c, d, e] => [a, b, c, d, e],
        _ => [1350.0, 0.3, 0.7, 3.5, 390.0],
    };
    let geom = EngineGeometry::default();
    let params = ModelParams::REFERENCE;
    let wiebe = WiebeParams::default_for(params.c9);

    println!("{:>6} {:>9} {:>9} {:>9} {:>9}", "soi", "soc", "soc_int", "ca50", "ca50_int");
    for soi in [-5.0, -2.5, 0.0, 2.5, 5.0] {
        let cond = OperatingCondition {
            n,
            egr,
            phi,
            ivc: IvcState::at_ivc(&geom, p_ivc, t_ivc),
            x_r: 0.04,
            soi,
        };
        cond.validate()?;
        let (p, t) = model::soi_state(&cond, &params, &geom)?;
        let soc = model::soc_simplified(&cond, p, t, &params)?;
        let ca50 = model::ca50_predict(&cond, p, t, &params)?;
        let soc_int = model::soc_full_integral(&cond, &params, &geom, 0.01)?;
        let bd = model::burn_duration(cond.dilution(), phi, &params, &wiebe);
        let ca50_int = model::ca50_by_wiebe_root(soc_int, bd, &wiebe)?;
        println!("{soi:>6.1} {soc:>9.3} {soc_int:>9.3} {ca50:>9.3} {ca50_int:>9.3}");
    }
    Ok(())
}

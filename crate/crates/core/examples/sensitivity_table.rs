//! Prediction error statistics when one measured input is off by a fixed
//! amount.

use combphase::analysis::{self, GenDataOptions, InputError};
use combphase::{EngineGeometry, ModelParams};

fn main() -> combphase::Result<()> {
    let geom = EngineGeometry::default();
    let data = analysis::gen_data(&GenDataOptions::default(), &geom)?;
    let rows = analysis::sensitivity(&data, &ModelParams::REFERENCE, &geom, &InputError::standard_rows())?;
    println!("{:<8} {:>7} {:>9} {:>9} {:>9}", "input", "delta", "mean", "std", "max");
    for r in rows {
        println!(
            "{:<8} {:>+7.2} {:>+9.4} {:>9.4} {:>9.4}",
            r.error.source(),
            r.error.delta(),
            r.mean,
            r.std_dev,
            r.max_abs_error
        );
    }
    Ok(())
}

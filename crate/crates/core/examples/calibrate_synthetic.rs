//! Fit the nine model constants to a noisy synthetic dataset from a
//! perturbed start.
//!
//!     cargo run --release --example calibrate_synthetic -- 0.2

use combphase::analysis::{self, GenDataOptions};
use combphase::calibration::{self, CalibrationOptions};
use combphase::{EngineGeometry, ModelParams};

fn main() -> combphase::Result<()> {
    let noise = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let geom = EngineGeometry::default();
    let data = analysis::gen_data(&GenDataOptions { noise, seed: 11, ..Default::default() }, &geom)?;

    let mut start = ModelParams::REFERENCE.to_array();
    for (i, v) in start.iter_mut().enumerate().take(8) {
        *v *= if i % 2 == 0 { 1.15 } else { 0.85 };
    }
    let start = ModelParams::from_array(start);

    let opts = CalibrationOptions { max_epochs: 3000, ..Default::default() };
    let report = calibration::calibrate(&data, &start, &geom, &opts)?;
    for (k, r) in report.rmse_trace.iter().enumerate().step_by(500) {
        println!("epoch {k:>5}  rmse {r:.4}");
    }
    print!("{}", report.summary());
    println!("{:>4} {:>14} {:>14}", "", "reference", "fitted");
    let (a, b) = (ModelParams::REFERENCE.to_array(), report.final_params.to_array());
    for (i, name) in ModelParams::NAMES.iter().enumerate() {
        println!("{name:>4} {:>14.6e} {:>14.6e}", a[i], b[i]);
    }
    Ok(())
}

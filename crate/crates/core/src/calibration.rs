//! Batch gradient-descent fitting of [`ModelParams`] to observed CA50 (and
//! optionally SOC).
//!
//! Parameters are scaled by the magnitude of the starting point so every
//! coordinate is of order one. The batch gradient comes from central
//! differences and each epoch takes one step along it, with backtracking
//! on the step length.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, EngineGeometry, IvcState};
use crate::error::{Error, Result};
use crate::model::{self, ModelParams, OperatingCondition};

/// Dataset CSV header, in column order.
pub const DATASET_HEADER: [&str; 9] = [
    "N", "EGR", "phi", "P_IVC", "T_IVC", "X_r", "SOI", "SOC_obs", "CA50_obs",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub cond: OperatingCondition,
    pub observed_soc: Option<f64>,
    pub observed_ca50: f64,
}

impl CalibrationSample {
    pub const CA50_RANGE: (f64, f64) = (-10.0, 40.0);

    pub fn validate(&self) -> Result<()> {
        self.cond.validate()?;
        let (lo, hi) = Self::CA50_RANGE;
        if !(lo..=hi).contains(&self.observed_ca50) {
            return Err(Error::invalid(
                "observed CA50",
                format!("{} outside [{lo}, {hi}]", self.observed_ca50),
            ));
        }
        if let Some(soc) = self.observed_soc {
            if !soc.is_finite() {
                return Err(Error::invalid("observed SOC", format!("{soc}")));
            }
        }
        Ok(())
    }
}

fn parse_field(
    record: &csv::StringRecord,
    idx: usize,
    origin: &str,
    line: usize,
) -> Result<Option<f64>> {
    let raw = record.get(idx).unwrap_or("").trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<f64>().map(Some).map_err(|e| Error::Parse {
        path: origin.to_string(),
        line,
        reason: format!("column {}: `{raw}`: {e}", DATASET_HEADER[idx]),
    })
}

/// Reads a dataset from CSV text. Only `SOC_obs` may be left empty.
pub fn read_dataset(reader: impl Read, origin: &str, geom: &EngineGeometry) -> Result<Vec<CalibrationSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r?,
        None => {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: 1,
                reason: format!("missing header `{}`", DATASET_HEADER.join(",")),
            })
        }
    };
    let found: Vec<&str> = header.iter().collect();
    if found != DATASET_HEADER {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: header.position().map_or(1, |p| p.line() as usize),
            reason: format!("expected header `{}`, found `{}`", DATASET_HEADER.join(","), found.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != DATASET_HEADER.len() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line,
                reason: format!("expected {} fields, found {}", DATASET_HEADER.len(), rec.len()),
            });
        }
        let mut v = [0.0; 9];
        for (i, slot) in v.iter_mut().enumerate() {
            match parse_field(&rec, i, origin, line)? {
                Some(x) => *slot = x,
                None if i == 7 => *slot = f64::NAN,
                None => {
                    return Err(Error::Parse {
                        path: origin.to_string(),
                        line,
                        reason: format!("column {} is empty", DATASET_HEADER[i]),
                    })
                }
            }
        }
        let sample = CalibrationSample {
            cond: OperatingCondition {
                n: v[0],
                egr: v[1],
                phi: v[2],
                ivc: IvcState::at_ivc(geom, v[3], v[4]),
                x_r: v[5],
                soi: v[6],
            },
            observed_soc: (!v[7].is_nan()).then_some(v[7]),
            observed_ca50: v[8],
        };
        sample.validate().map_err(|e| Error::Parse {
            path: origin.to_string(),
            line,
            reason: e.to_string(),
        })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>, geom: &EngineGeometry) -> Result<Vec<CalibrationSample>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, &path.display().to_string(), geom)
}

pub fn write_dataset(writer: impl Write, samples: &[CalibrationSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DATASET_HEADER)?;
    for s in samples {
        let c = &s.cond;
        let soc = s.observed_soc.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            c.n.to_string(),
            c.egr.to_string(),
            c.phi.to_string(),
            c.ivc.p_ivc.to_string(),
            c.ivc.t_ivc.to_string(),
            c.x_r.to_string(),
            c.soi.to_string(),
            soc,
            s.observed_ca50.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<dataset>", e))?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, samples: &[CalibrationSample]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(std::io::BufWriter::new(file), samples)
}

/// Per-sample constants that do not depend on the parameters.
struct Prepared {
    cond: OperatingCondition,
    /// V_IVC / V(SOI)
    ratio: f64,
    soc: Option<f64>,
    ca50: f64,
}

fn prepare(dataset: &[CalibrationSample], geom: &EngineGeometry) -> Result<Vec<Prepared>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dataset
        .iter()
        .map(|s| {
            if !geom.in_closed_span(s.cond.soi) {
                return Err(Error::OutOfSpan {
                    theta: s.cond.soi,
                    ivc: geom.ivc_angle,
                    evo: geom.evo_angle,
                });
            }
            Ok(Prepared {
                cond: s.cond,
                ratio: s.cond.ivc.v_ivc / engine::cylinder_volume(s.cond.soi, geom),
                soc: s.observed_soc,
                ca50: s.observed_ca50,
            })
        })
        .collect()
}

impl Prepared {
    /// Predicted (SOC, CA50).
    fn predict(&self, p: &ModelParams) -> (f64, f64) {
        let c = &self.cond;
        let p_soi = c.ivc.p_ivc * self.ratio.powf(p.kc);
        let t_soi = c.ivc.t_ivc * self.ratio.powf(p.kc - 1.0);
        let soc = c.soi
            + p.egr_scale(c.egr) * c.n * c.phi.powf(-p.c3) * (p.c4 * p_soi.powf(p.c5) / t_soi).exp();
        (soc, soc + model::ca50_offset(c.dilution(), c.phi, p))
    }
}

/// Squared-error sums over the batch, reduced in sample order.
#[derive(Debug, Clone, Copy, Default)]
struct Residuals {
    ca50_sq: f64,
    soc_sq: f64,
    soc_count: usize,
}

fn residuals(prepared: &[Prepared], p: &ModelParams) -> Residuals {
    let terms: Vec<(f64, Option<f64>)> = prepared
        .par_iter()
        .map(|s| {
            let (soc, ca50) = s.predict(p);
            (ca50 - s.ca50, s.soc.map(|o| soc - o))
        })
        .collect();
    let mut r = Residuals::default();
    for (e, es) in terms {
        r.ca50_sq += e * e;
        if let Some(es) = es {
            r.soc_sq += es * es;
            r.soc_count += 1;
        }
    }
    r
}

/// Root-mean-square CA50 prediction error with P, T taken at each sample's
/// SOI.
pub fn rmse(dataset: &[CalibrationSample], params: &ModelParams, geom: &EngineGeometry) -> Result<f64> {
    let prepared = prepare(dataset, geom)?;
    Ok((residuals(&prepared, params).ca50_sq / prepared.len() as f64).sqrt())
}

/// Prediction minus observation for every sample, in dataset order.
pub fn prediction_errors(dataset: &[CalibrationSample], params: &ModelParams, geom: &EngineGeometry) -> Result<Vec<f64>> {
    let prepared = prepare(dataset, geom)?;
    Ok(prepared.iter().map(|s| s.predict(params).1 - s.ca50).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationOptions {
    /// Initial step length in scaled parameter space.
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop when the relative RMSE decrease over `window` epochs falls
    /// below this.
    pub tolerance: f64,
    pub window: usize,
    /// Halve the step until the sufficient-decrease test passes, at most
    /// this many times per epoch. Zero gives plain fixed-rate descent.
    pub max_backtracks: usize,
    /// Step growth after an accepted step.
    pub growth: f64,
    /// Weight of the SOC term when samples carry SOC observations; CA50
    /// gets `1 − soc_weight`.
    pub soc_weight: f64,
    /// Consecutive RMSE increases tolerated in fixed-rate mode.
    pub patience: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 10_000,
            tolerance: 1e-9,
            window: 50,
            max_backtracks: 60,
            growth: 1.5,
            soc_weight: 0.5,
            patience: 10,
        }
    }
}

impl CalibrationOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("calibration.learning_rate", "must be > 0"));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::config("calibration.tolerance", "must be ≥ 0"));
        }
        if self.window == 0 {
            return Err(Error::config("calibration.window", "must be ≥ 1"));
        }
        if !(self.growth.is_finite() && self.growth >= 1.0) {
            return Err(Error::config("calibration.growth", "must be ≥ 1"));
        }
        if !(0.0..=1.0).contains(&self.soc_weight) {
            return Err(Error::config("calibration.soc_weight", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Objective is exactly zero.
    ExactFit,
    /// Relative improvement over the window fell below tolerance.
    Converged,
    /// No step length passed the sufficient-decrease test.
    LineSearchExhausted,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub initial_params: ModelParams,
    pub final_params: ModelParams,
    /// Root of the weighted mean-squared objective, entry 0 at the start
    /// and one per epoch. Equals the CA50 RMSE when no SOC term is active.
    pub rmse_trace: Vec<f64>,
    /// CA50 prediction minus observation at the final parameters.
    pub per_sample_errors: Vec<f64>,
    pub ca50_rmse: f64,
    pub soc_rmse: Option<f64>,
    pub std_dev: f64,
    pub max_abs_error: f64,
    pub epochs: usize,
    pub stop_reason: StopReason,
}

impl CalibrationReport {
    pub fn final_rmse(&self) -> f64 {
        *self.rmse_trace.last().expect("trace holds the initial value")
    }

    /// `iteration,rmse` rows followed by a `#`-prefixed summary block.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration,rmse")?;
        for (i, r) in self.rmse_trace.iter().enumerate() {
            writeln!(w, "{i},{r}")?;
        }
        for line in self.summary().lines() {
            writeln!(w, "# {line}")?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "epochs = {}\nstop = {:?}\nca50_rmse = {}\nstd_dev = {}\nmax_abs_error = {}\n",
            self.epochs, self.stop_reason, self.ca50_rmse, self.std_dev, self.max_abs_error
        );
        if let Some(soc) = self.soc_rmse {
            s.push_str(&format!("soc_rmse = {soc}\n"));
        }
        s
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Weighted mean-squared prediction error as a function of parameters
/// scaled to unit magnitude: `z[i] = p[i] / |reference[i]|`.
pub struct ScaledObjective {
    prepared: Vec<Prepared>,
    scale: [f64; 9],
    w_ca50: f64,
    w_soc: f64,
    soc_count: usize,
}

impl ScaledObjective {
    /// `soc_weight` applies only when some sample carries an observed SOC.
    pub fn new(
        dataset: &[CalibrationSample],
        geom: &EngineGeometry,
        reference: &ModelParams,
        soc_weight: f64,
    ) -> Result<Self> {
        let prepared = prepare(dataset, geom)?;
        let soc_count = prepared.iter().filter(|s| s.soc.is_some()).count();
        let (w_ca50, w_soc) = if soc_count > 0 {
            (1.0 - soc_weight, soc_weight)
        } else {
            (1.0, 0.0)
        };
        Ok(Self {
            prepared,
            scale: reference.to_array().map(|v| if v == 0.0 { 1.0 } else { v.abs() }),
            w_ca50,
            w_soc,
            soc_count,
        })
    }

    pub fn scaled(&self, p: &ModelParams) -> [f64; 9] {
        let v = p.to_array();
        std::array::from_fn(|i| v[i] / self.scale[i])
    }

    pub fn params(&self, z: &[f64; 9]) -> ModelParams {
        ModelParams::from_array(std::array::from_fn(|i| z[i] * self.scale[i]))
    }

    pub fn value(&self, z: &[f64; 9]) -> f64 {
        let r = residuals(&self.prepared, &self.params(z));
        let mut j = self.w_ca50 * r.ca50_sq / self.prepared.len() as f64;
        if self.soc_count > 0 {
            j += self.w_soc * r.soc_sq / self.soc_count as f64;
        }
        j
    }

    /// Central differences with step `1e-6·max(|z_i|, 1)`.
    pub fn gradient(&self, z: &[f64; 9]) -> [f64; 9] {
        let mut g = [0.0; 9];
        for i in 0..9 {
            let h = 1e-6 * z[i].abs().max(1.0);
            let (mut up, mut dn) = (*z, *z);
            up[i] += h;
            dn[i] -= h;
            g[i] = (self.value(&up) - self.value(&dn)) / (up[i] - dn[i]);
        }
        g
    }
}

/// Fits all nine constants by batch gradient descent starting from `init`.
pub fn calibrate(
    dataset: &[CalibrationSample],
    init: &ModelParams,
    geom: &EngineGeometry,
    opts: &CalibrationOptions,
) -> Result<CalibrationReport> {
    init.validate()?;
    opts.validate()?;
    let obj = ScaledObjective::new(dataset, geom, init, opts.soc_weight)?;

    let mut z = obj.scaled(init);
    let mut j = obj.value(&z);
    if !j.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            reason: "objective is not finite at the initial parameters".into(),
        });
    }
    let mut trace = vec![j.sqrt()];
    let mut lr = opts.learning_rate;
    let mut increases = 0usize;
    let mut epochs = 0usize;
    let mut stop = StopReason::MaxEpochs;

    while epochs < opts.max_epochs {
        if j == 0.0 {
            stop = StopReason::ExactFit;
            break;
        }
        epochs += 1;
        let g = obj.gradient(&z);
        let g2: f64 = g.iter().map(|x| x * x).sum();
        if !g2.is_finite() {
            return Err(Error::Divergence {
                epoch: epochs,
                reason: "non-finite gradient".into(),
            });
        }

        if opts.max_backtracks == 0 {
            // Fixed-rate descent: take the step regardless.
            let cand: [f64; 9] = std::array::from_fn(|i| z[i] - lr * g[i]);
            let jc = obj.value(&cand);
            if !jc.is_finite() || obj.params(&cand).validate().is_err() {
                return Err(Error::Divergence {
                    epoch: epochs,
                    reason: "step left the valid parameter region".into(),
                });
            }
            increases = if jc > j { increases + 1 } else { 0 };
            if increases >= opts.patience.max(1) {
                return Err(Error::Divergence {
                    epoch: epochs,
                    reason: format!("RMSE grew for {increases} consecutive epochs"),
                });
            }
            z = cand;
            j = jc;
        } else {
            let mut accepted = None;
            let mut step = lr;
            for _ in 0..=opts.max_backtracks {
                let cand: [f64; 9] = std::array::from_fn(|i| z[i] - step * g[i]);
                let jc = obj.value(&cand);
                if jc.is_finite() && jc <= j - 1e-4 * step * g2 && obj.params(&cand).validate().is_ok() {
                    accepted = Some((cand, jc));
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some((cand, jc)) => {
                    z = cand;
                    j = jc;
                    lr = step * opts.growth;
                }
                None => {
                    trace.push(j.sqrt());
                    stop = StopReason::LineSearchExhausted;
                    break;
                }
            }
        }
        trace.push(j.sqrt());

        if trace.len() > opts.window {
            let old = trace[trace.len() - 1 - opts.window];
            let new = *trace.last().unwrap();
            if old > 0.0 && (old - new) / old < opts.tolerance {
                stop = StopReason::Converged;
                break;
            }
        }
    }

    let final_params = obj.params(&z);
    let mut per_sample = Vec::with_capacity(obj.prepared.len());
    let mut soc_sq = 0.0;
    for s in &obj.prepared {
        let (soc, ca50) = s.predict(&final_params);
        per_sample.push(ca50 - s.ca50);
        if let Some(o) = s.soc {
            soc_sq += (soc - o) * (soc - o);
        }
    }
    let ca50_rmse = (per_sample.iter().map(|e| e * e).sum::<f64>() / per_sample.len() as f64).sqrt();
    let (_, std_dev) = mean_std(&per_sample);
    let max_abs_error = per_sample.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    Ok(CalibrationReport {
        initial_params: *init,
        final_params,
        rmse_trace: trace,
        per_sample_errors: per_sample,
        ca50_rmse,
        soc_rmse: (obj.soc_count > 0).then(|| (soc_sq / obj.soc_count as f64).sqrt()),
        std_dev,
        max_abs_error,
        epochs,
        stop_reason: stop,
    })
}

/// Observations produced by the closed-form model itself.
pub fn self_consistent_dataset(
    conds: &[OperatingCondition],
    params: &ModelParams,
    geom: &EngineGeometry,
    with_soc: bool,
) -> Result<Vec<CalibrationSample>> {
    conds
        .iter()
        .map(|c| {
            let (p, t) = model::soi_state(c, params, geom)?;
            let soc = model::soc_simplified(c, p, t, params)?;
            Ok(CalibrationSample {
                cond: *c,
                observed_soc: with_soc.then_some(soc),
                observed_ca50: soc + model::ca50_offset(c.dilution(), c.phi, params),
            })
        })
        .collect()
}

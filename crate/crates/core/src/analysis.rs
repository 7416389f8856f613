//! Dataset generation and offline studies: synthetic data, input-error
//! sensitivity of the CA50 predictor, and closed-form vs integrated SOC.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{mean_std, CalibrationSample};
use crate::engine::EngineGeometry;
use crate::error::{Error, Result};
use crate::lattice::{halton_lattice, ConditionBox};
use crate::model::{self, ModelParams, OperatingCondition, PressureTrace, WiebeParams};

/// Which model produces the synthetic observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthModel {
    /// Knock integral over dynamic P(θ), T(θ), then Wiebe.
    #[default]
    FullIntegral,
    /// The closed-form predictor itself.
    Simplified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenDataOptions {
    pub bounds: ConditionBox,
    pub count: usize,
    pub params: ModelParams,
    pub truth: TruthModel,
    /// Knock-integral step for the full-integral truth (CAD).
    pub step: f64,
    /// Standard deviation of Gaussian noise added to SOC and CA50 (CAD).
    pub noise: f64,
    pub seed: u64,
}

impl Default for GenDataOptions {
    fn default() -> Self {
        Self {
            bounds: ConditionBox::SIMULATION,
            count: ConditionBox::DEFAULT_POINTS,
            params: ModelParams::REFERENCE,
            truth: TruthModel::FullIntegral,
            step: 0.1,
            noise: 0.0,
            seed: 0,
        }
    }
}

fn truth_point(
    c: &OperatingCondition,
    opts: &GenDataOptions,
    wiebe: &WiebeParams,
    geom: &EngineGeometry,
) -> Result<(f64, f64)> {
    let p = &opts.params;
    match opts.truth {
        TruthModel::FullIntegral => {
            let soc = model::soc_full_integral(c, p, geom, opts.step)?;
            let bd = model::burn_duration(c.dilution(), c.phi, p, wiebe);
            Ok((soc, soc + wiebe.half_burn_fraction() * bd))
        }
        TruthModel::Simplified => {
            let (ps, ts) = model::soi_state(c, p, geom)?;
            let soc = model::soc_simplified(c, ps, ts, p)?;
            Ok((soc, soc + model::ca50_offset(c.dilution(), c.phi, p)))
        }
    }
}

/// Synthetic observations on a Halton lattice. Noise is drawn in sample
/// order from a ChaCha stream seeded with `opts.seed`.
pub fn gen_data(opts: &GenDataOptions, geom: &EngineGeometry) -> Result<Vec<CalibrationSample>> {
    opts.params.validate()?;
    opts.bounds.validate()?;
    if !(opts.noise.is_finite() && opts.noise >= 0.0) {
        return Err(Error::invalid("noise", format!("{}", opts.noise)));
    }
    let conds = halton_lattice(&opts.bounds, opts.count, geom);
    let wiebe = WiebeParams::default_for(opts.params.c9);
    let clean: Vec<(f64, f64)> = conds
        .par_iter()
        .map(|c| truth_point(c, opts, &wiebe, geom))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, opts.noise).map_err(|e| Error::invalid("noise", e.to_string()))?;
    let mut draw = || if opts.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
    Ok(conds
        .iter()
        .zip(clean)
        .map(|(c, (soc, ca50))| CalibrationSample {
            cond: *c,
            observed_soc: Some(soc + draw()),
            observed_ca50: ca50 + draw(),
        })
        .collect())
}

/// A measurement error injected into one predictor input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", content = "delta", rename_all = "snake_case")]
pub enum InputError {
    None,
    /// bar
    PIvc(f64),
    /// K
    TIvc(f64),
    /// Absolute change of the EGR fraction.
    Egr(f64),
    Phi(f64),
    XR(f64),
}

impl InputError {
    /// The ten single-input errors plus the clean row.
    pub fn standard_rows() -> Vec<InputError> {
        vec![
            InputError::None,
            InputError::PIvc(0.05),
            InputError::PIvc(-0.05),
            InputError::TIvc(5.0),
            InputError::TIvc(-5.0),
            InputError::Egr(0.05),
            InputError::Egr(-0.05),
            InputError::Phi(0.05),
            InputError::Phi(-0.05),
            InputError::XR(0.03),
            InputError::XR(-0.03),
        ]
    }

    pub fn source(&self) -> &'static str {
        match self {
            InputError::None => "none",
            InputError::PIvc(_) => "p_ivc",
            InputError::TIvc(_) => "t_ivc",
            InputError::Egr(_) => "egr",
            InputError::Phi(_) => "phi",
            InputError::XR(_) => "x_r",
        }
    }

    pub fn delta(&self) -> f64 {
        match *self {
            InputError::None => 0.0,
            InputError::PIvc(d)
            | InputError::TIvc(d)
            | InputError::Egr(d)
            | InputError::Phi(d)
            | InputError::XR(d) => d,
        }
    }

    /// The corrupted condition; fractions are clamped to their valid ranges.
    pub fn apply(&self, c: &OperatingCondition) -> OperatingCondition {
        let mut out = *c;
        match *self {
            InputError::None => {}
            InputError::PIvc(d) => out.ivc.p_ivc += d,
            InputError::TIvc(d) => out.ivc.t_ivc += d,
            InputError::Egr(d) => out.egr = (c.egr + d).clamp(0.0, OperatingCondition::EGR_MAX),
            InputError::Phi(d) => out.phi = (c.phi + d).clamp(1e-3, 1.0),
            InputError::XR(d) => out.x_r = (c.x_r + d).clamp(0.0, 0.99),
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub error: InputError,
    pub mean: f64,
    pub std_dev: f64,
    pub max_abs_error: f64,
}

/// CA50 prediction error statistics against the observations, once per
/// injected input error. Rows keep the order of `errors`.
pub fn sensitivity(
    dataset: &[CalibrationSample],
    params: &ModelParams,
    geom: &EngineGeometry,
    errors: &[InputError],
) -> Result<Vec<SensitivityRow>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    errors
        .iter()
        .map(|err| {
            let residuals: Vec<f64> = dataset
                .par_iter()
                .map(|s| Ok(model::ca50_predict_at_soi(&err.apply(&s.cond), params, geom)? - s.observed_ca50))
                .collect::<Result<_>>()?;
            let (mean, std_dev) = mean_std(&residuals);
            let max_abs_error = residuals.iter().fold(0.0f64, |m, e| m.max(e.abs()));
            Ok(SensitivityRow {
                error: *err,
                mean,
                std_dev,
                max_abs_error,
            })
        })
        .collect()
}

pub fn write_sensitivity_csv(w: impl Write, rows: &[SensitivityRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["source", "delta", "mean", "std_dev", "max_abs_error"])?;
    for r in rows {
        w.write_record([
            r.error.source().to_string(),
            r.error.delta().to_string(),
            r.mean.to_string(),
            r.std_dev.to_string(),
            r.max_abs_error.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<sensitivity csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocComparisonRow {
    pub cond: OperatingCondition,
    pub soc_full: f64,
    pub soc_simplified: f64,
    pub ca50_full: f64,
    pub ca50_simplified: f64,
}

impl SocComparisonRow {
    /// Simplified minus integrated SOC.
    pub fn soc_error(&self) -> f64 {
        self.soc_simplified - self.soc_full
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocComparison {
    pub rows: Vec<SocComparisonRow>,
    pub mean: f64,
    pub std_dev: f64,
    pub max_abs_error: f64,
    /// Points where the simplified SOC is off by more than 1 CAD.
    pub beyond_one_cad: usize,
}

/// Knock-integral SOC (with `trace`) against the closed-form SOC at every
/// condition. Both CA50 columns add the same burn offset.
pub fn compare_soc(
    conds: &[OperatingCondition],
    params: &ModelParams,
    geom: &EngineGeometry,
    step: f64,
    trace: PressureTrace,
) -> Result<SocComparison> {
    if conds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rows: Vec<SocComparisonRow> = conds
        .par_iter()
        .map(|c| {
            let soc_full = model::soc_integral(c, params, geom, step, trace)?;
            let (p, t) = model::soi_state(c, params, geom)?;
            let soc_simplified = model::soc_simplified(c, p, t, params)?;
            let offset = model::ca50_offset(c.dilution(), c.phi, params);
            Ok(SocComparisonRow {
                cond: *c,
                soc_full,
                soc_simplified,
                ca50_full: soc_full + offset,
                ca50_simplified: soc_simplified + offset,
            })
        })
        .collect::<Result<_>>()?;
    let errs: Vec<f64> = rows.iter().map(SocComparisonRow::soc_error).collect();
    let (mean, std_dev) = mean_std(&errs);
    Ok(SocComparison {
        mean,
        std_dev,
        max_abs_error: errs.iter().fold(0.0f64, |m, e| m.max(e.abs())),
        beyond_one_cad: errs.iter().filter(|e| e.abs() > 1.0).count(),
        rows,
    })
}

pub fn write_comparison_csv(w: impl Write, cmp: &SocComparison) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "N", "EGR", "phi", "P_IVC", "T_IVC", "X_r", "SOI", "soc_full", "soc_simplified", "ca50_full",
        "ca50_simplified",
    ])?;
    for r in &cmp.rows {
        let c = &r.cond;
        w.write_record(
            [
                c.n,
                c.egr,
                c.phi,
                c.ivc.p_ivc,
                c.ivc.t_ivc,
                c.x_r,
                c.soi,
                r.soc_full,
                r.soc_simplified,
                r.ca50_full,
                r.ca50_simplified,
            ]
            .map(|v| v.to_string()),
        )?;
    }
    w.flush().map_err(|e| Error::io("<comparison csv>", e))?;
    Ok(())
}

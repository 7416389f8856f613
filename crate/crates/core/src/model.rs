//! Combustion-phasing model: Arrhenius ignition-delay kernel, knock-integral
//! start of combustion, burn duration, Wiebe mass fraction burned and the
//! closed-form CA50 predictor used by the controllers.

use std::f64::consts::LN_2;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{self, EngineGeometry, IvcState};
use crate::error::{Error, Result};

/// Calibrated constants of the CA50 model.
///
/// `c1`/`c2` carry units of 1/(RPM·CAD), `c4` of K·bar^(−c5); the rest are
/// dimensionless except `c9` (CAD).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c7: f64,
    pub c8: f64,
    pub c9: f64,
    pub kc: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::REFERENCE
    }
}

impl ModelParams {
    /// Constants identified on the 516-point high-EGR/high-boost data set.
    pub const REFERENCE: ModelParams = ModelParams {
        c1: 2.000e-6,
        c2: 2.705e-6,
        c3: -0.128,
        c4: 10643.118,
        c5: -0.312,
        c7: 0.371,
        c8: 0.0165,
        c9: 4.784,
        kc: 1.176,
    };

    /// Parameter names in vector order, also the parameter-file keys.
    pub const NAMES: [&'static str; 9] = ["c1", "c2", "c3", "c4", "c5", "c7", "c8", "c9", "kc"];

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.c1, self.c2, self.c3, self.c4, self.c5, self.c7, self.c8, self.c9, self.kc,
        ]
    }

    pub fn from_array(v: [f64; 9]) -> Self {
        let [c1, c2, c3, c4, c5, c7, c8, c9, kc] = v;
        Self {
            c1,
            c2,
            c3,
            c4,
            c5,
            c7,
            c8,
            c9,
            kc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((name, v)) = Self::NAMES
            .iter()
            .zip(self.to_array())
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::invalid("model parameters", format!("{name} = {v}")));
        }
        if self.c2 <= 0.0 {
            return Err(Error::invalid("model parameters", "c2 must be > 0"));
        }
        // c1·EGR + c2 is affine in EGR, so checking the end points covers [0, 1).
        if self.c1 + self.c2 <= 0.0 {
            return Err(Error::invalid("model parameters", "c1·EGR + c2 must stay > 0 on [0, 1)"));
        }
        if self.c9 <= 0.0 {
            return Err(Error::invalid("model parameters", "c9 must be > 0"));
        }
        if !(self.kc > 1.0 && self.kc < 1.4) {
            return Err(Error::invalid(
                "model parameters",
                format!("kc = {} outside (1, 1.4)", self.kc),
            ));
        }
        Ok(())
    }

    /// Serializes to the flat `key = value` parameter format. Values are
    /// written in shortest round-trip decimal form.
    pub fn to_param_string(&self) -> String {
        let mut out = String::new();
        for (name, v) in Self::NAMES.iter().zip(self.to_array()) {
            let _ = writeln!(out, "{name} = {v}");
        }
        out
    }

    /// Parses the `key = value` parameter format. `#` starts a comment; all
    /// nine keys are required exactly once.
    pub fn from_param_str(text: &str, origin: &str) -> Result<Self> {
        let mut values: [Option<f64>; 9] = [None; 9];
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                path: origin.to_string(),
                line: line_no,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let slot = Self::NAMES
                .iter()
                .position(|n| *n == key)
                .ok_or_else(|| parse_err(format!("unknown parameter `{key}`")))?;
            if values[slot].is_some() {
                return Err(parse_err(format!("duplicate parameter `{key}`")));
            }
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("`{key}`: {e}")))?;
            values[slot] = Some(v);
        }
        let mut arr = [0.0; 9];
        for (i, v) in values.iter().enumerate() {
            arr[i] = v.ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: 0,
                reason: format!("missing parameter `{}`", Self::NAMES[i]),
            })?;
        }
        let params = Self::from_array(arr);
        params.validate()?;
        Ok(params)
    }

    pub fn read_param_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_param_str(&text, &path.display().to_string())
    }

    pub fn write_param_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_param_string()).map_err(|e| Error::io(path, e))
    }

    /// `c1·EGR + c2`, the dilution-dependent reciprocal rate scale.
    pub fn egr_scale(&self, egr: f64) -> f64 {
        self.c1 * egr + self.c2
    }
}

/// Wiebe shape parameters and burn-duration scale.
///
/// Only the composite `c9 = (ln2/a)^(1/b)·c6` is identifiable from CA50
/// data; `a` and `b` shape the plant's burn curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WiebeParams {
    pub a: f64,
    pub b: f64,
    /// CAD
    pub c6: f64,
}

impl WiebeParams {
    pub const DEFAULT_A: f64 = 5.0;
    pub const DEFAULT_B: f64 = 2.0;

    /// Solves `c6` so that the composite equals `c9`.
    pub fn consistent(a: f64, b: f64, c9: f64) -> Self {
        Self {
            a,
            b,
            c6: c9 / (LN_2 / a).powf(1.0 / b),
        }
    }

    /// `a = 5`, `b = 2`, with `c6` matched to `c9`.
    pub fn default_for(c9: f64) -> Self {
        Self::consistent(Self::DEFAULT_A, Self::DEFAULT_B, c9)
    }

    /// Fraction of the burn duration between SOC and CA50, (ln2/a)^(1/b).
    pub fn half_burn_fraction(&self) -> f64 {
        (LN_2 / self.a).powf(1.0 / self.b)
    }

    pub fn composite_c9(&self) -> f64 {
        self.half_burn_fraction() * self.c6
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b), ("c6", self.c6)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid("Wiebe parameters", format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Checks the composite against a model's `c9` to `rel_tol`.
    pub fn check_consistency(&self, c9: f64, rel_tol: f64) -> Result<()> {
        let composite = self.composite_c9();
        if (composite - c9).abs() > rel_tol * c9.abs() {
            return Err(Error::invalid(
                "Wiebe parameters",
                format!("(ln2/a)^(1/b)·c6 = {composite} does not match c9 = {c9}"),
            ));
        }
        Ok(())
    }
}

/// Per-cycle boundary conditions seen by the combustion model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingCondition {
    /// RPM
    pub n: f64,
    pub egr: f64,
    pub phi: f64,
    pub ivc: IvcState,
    pub x_r: f64,
    /// ° aTDC
    pub soi: f64,
}

impl OperatingCondition {
    pub const EGR_MAX: f64 = 0.6;
    pub const SOI_BOUNDS: (f64, f64) = (-20.0, 20.0);

    pub fn validate(&self) -> Result<()> {
        if !(self.n.is_finite() && self.n > 0.0) {
            return Err(Error::invalid("operating condition", format!("n = {}", self.n)));
        }
        if !(0.0..=Self::EGR_MAX).contains(&self.egr) {
            return Err(Error::invalid("operating condition", format!("egr = {}", self.egr)));
        }
        if !(self.phi > 0.0 && self.phi <= 1.0) {
            return Err(Error::invalid("operating condition", format!("phi = {}", self.phi)));
        }
        if !(0.0..1.0).contains(&self.x_r) {
            return Err(Error::invalid("operating condition", format!("x_r = {}", self.x_r)));
        }
        let (lo, hi) = Self::SOI_BOUNDS;
        if !(lo..=hi).contains(&self.soi) {
            return Err(Error::invalid("operating condition", format!("soi = {}", self.soi)));
        }
        self.ivc.validate()
    }

    /// X_d = EGR + X_r.
    pub fn dilution(&self) -> f64 {
        self.egr + self.x_r
    }

    pub fn with_soi(mut self, soi: f64) -> Self {
        self.soi = soi;
        self
    }
}

/// Arrhenius delay kernel τ = φ^c3·exp(−c4·P^c5/T)/(c1·EGR + c2).
pub fn arrhenius_tau(phi: f64, p: f64, t: f64, egr: f64, params: &ModelParams) -> Result<f64> {
    if !(p > 0.0 && t > 0.0) {
        return Err(Error::invalid("Arrhenius state", format!("p = {p}, t = {t}")));
    }
    Ok(phi.powf(params.c3) * (-params.c4 * p.powf(params.c5) / t).exp() / params.egr_scale(egr))
}

/// Finds the angle where the trapezoidal integral of `rate` (per CAD),
/// started at `start`, reaches one. The crossing is linearly interpolated
/// inside the final step; the last step is shortened to end exactly at `end`.
pub fn knock_integral_crossing(
    start: f64,
    end: f64,
    step: f64,
    mut rate: impl FnMut(f64) -> f64,
) -> Result<f64> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid("integration step", format!("{step}")));
    }
    let mut acc = 0.0;
    let mut theta = start;
    let mut f_lo = rate(theta);
    let mut k = 0u64;
    while theta < end {
        k += 1;
        // Recompute from the start angle so long spans do not drift.
        let next = (start + k as f64 * step).min(end);
        let h = next - theta;
        let f_hi = rate(next);
        let inc = 0.5 * h * (f_lo + f_hi);
        if acc + inc >= 1.0 && inc > 0.0 {
            return Ok(theta + h * (1.0 - acc) / inc);
        }
        acc += inc;
        theta = next;
        f_lo = f_hi;
    }
    Err(Error::Misfire {
        soi: start,
        evo: end,
        reached: acc,
    })
}

/// In-cylinder pressure/temperature history used inside the knock integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PressureTrace {
    /// P(θ), T(θ) from polytropic compression of the IVC state.
    Polytropic,
    /// P and T held at their SOI values.
    FrozenAtSoi,
}

/// P and T at the condition's SOI by polytropic compression.
pub fn soi_state(cond: &OperatingCondition, params: &ModelParams, geom: &EngineGeometry) -> Result<(f64, f64)> {
    engine::polytropic_state(cond.soi, &cond.ivc, params.kc, geom)
}

/// P and T at TDC (volume V₀) by polytropic compression.
pub fn tdc_state(ivc: &IvcState, params: &ModelParams, geom: &EngineGeometry) -> (f64, f64) {
    ivc.compressed_to(geom.v0(), params.kc)
}

/// Start of combustion from the knock integral with the given trace.
pub fn soc_integral(
    cond: &OperatingCondition,
    params: &ModelParams,
    geom: &EngineGeometry,
    step: f64,
    trace: PressureTrace,
) -> Result<f64> {
    cond.ivc.validate()?;
    if !geom.in_closed_span(cond.soi) {
        return Err(Error::OutOfSpan {
            theta: cond.soi,
            ivc: geom.ivc_angle,
            evo: geom.evo_angle,
        });
    }
    let scale = 1.0 / (params.egr_scale(cond.egr) * cond.n);
    let phi_term = cond.phi.powf(params.c3);
    let kernel = |p: f64, t: f64| phi_term * (-params.c4 * p.powf(params.c5) / t).exp() * scale;
    match trace {
        PressureTrace::Polytropic => knock_integral_crossing(cond.soi, geom.evo_angle, step, |th| {
            let (p, t) = cond.ivc.compressed_to(engine::cylinder_volume(th, geom), params.kc);
            kernel(p, t)
        }),
        PressureTrace::FrozenAtSoi => {
            let (p, t) = soi_state(cond, params, geom)?;
            let k = kernel(p, t);
            knock_integral_crossing(cond.soi, geom.evo_angle, step, |_| k)
        }
    }
}

/// Start of combustion from the full knock integral with dynamic P(θ), T(θ).
pub fn soc_full_integral(
    cond: &OperatingCondition,
    params: &ModelParams,
    geom: &EngineGeometry,
    step: f64,
) -> Result<f64> {
    soc_integral(cond, params, geom, step, PressureTrace::Polytropic)
}

/// Ignition delay (CAD) of the closed-form SOC model.
pub fn ignition_delay(cond: &OperatingCondition, p_soi: f64, t_soi: f64, params: &ModelParams) -> Result<f64> {
    if !(p_soi > 0.0 && t_soi > 0.0) {
        return Err(Error::invalid("SOI state", format!("p = {p_soi}, t = {t_soi}")));
    }
    Ok(params.egr_scale(cond.egr)
        * cond.n
        * cond.phi.powf(-params.c3)
        * (params.c4 * p_soi.powf(params.c5) / t_soi).exp())
}

/// Closed-form SOC with P and T frozen at their SOI values.
pub fn soc_simplified(cond: &OperatingCondition, p_soi: f64, t_soi: f64, params: &ModelParams) -> Result<f64> {
    Ok(cond.soi + ignition_delay(cond, p_soi, t_soi, params)?)
}

/// Burn duration BD = c6·(1 + X_d)^c7·φ^c8 (CAD), exponents from `params`.
pub fn burn_duration(x_d: f64, phi: f64, params: &ModelParams, wiebe: &WiebeParams) -> f64 {
    wiebe.c6 * (1.0 + x_d).powf(params.c7) * phi.powf(params.c8)
}

/// Wiebe mass fraction burned at `theta`.
pub fn wiebe_mfb(theta: f64, soc: f64, bd: f64, wiebe: &WiebeParams) -> Result<f64> {
    if theta < soc {
        return Err(Error::invalid("Wiebe angle", format!("θ = {theta} before SOC = {soc}")));
    }
    if bd.is_nan() || bd <= 0.0 {
        return Err(Error::invalid("burn duration", format!("{bd}")));
    }
    Ok(1.0 - (-wiebe.a * ((theta - soc) / bd).powf(wiebe.b)).exp())
}

/// CA50 − SOC = c9·(1 + X_d)^c7·φ^c8.
pub fn ca50_offset(x_d: f64, phi: f64, params: &ModelParams) -> f64 {
    params.c9 * (1.0 + x_d).powf(params.c7) * phi.powf(params.c8)
}

/// Closed-form CA50 = simplified SOC + burn offset at X_d = EGR + X_r.
pub fn ca50_predict(cond: &OperatingCondition, p_soi: f64, t_soi: f64, params: &ModelParams) -> Result<f64> {
    Ok(soc_simplified(cond, p_soi, t_soi, params)? + ca50_offset(cond.dilution(), cond.phi, params))
}

/// CA50 predicted with P, T evaluated at the condition's own SOI.
pub fn ca50_predict_at_soi(cond: &OperatingCondition, params: &ModelParams, geom: &EngineGeometry) -> Result<f64> {
    let (p, t) = soi_state(cond, params, geom)?;
    ca50_predict(cond, p, t, params)
}

/// CA50 found by bisection on `wiebe_mfb = 0.5`, independent of the
/// closed-form inversion.
pub fn ca50_by_wiebe_root(soc: f64, bd: f64, wiebe: &WiebeParams) -> Result<f64> {
    let mfb = |th: f64| wiebe_mfb(th, soc, bd, wiebe);
    let mut lo = soc;
    let mut hi = soc + bd;
    let mut grow = 0;
    while mfb(hi)? < 0.5 {
        lo = hi;
        hi = soc + 2.0 * (hi - soc);
        grow += 1;
        if grow > 200 {
            return Err(Error::invalid("Wiebe root", "no bracket for x_b = 0.5"));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mfb(mid)? < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

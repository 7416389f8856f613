//! Cycle-discrete surrogate engine plant.
//!
//! Each call to [`Plant::step_cycle`] fires one cycle: the commanded SOI is
//! quantized, the in-cylinder conditions are taken from first-order lagged
//! manifold targets, and CA50 is evaluated with the plant-side constants.
//! The first `fuel_delay_cycles` cycles are motored.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::{ControllerState, X_R_BAR};
use crate::engine::{EngineGeometry, IvcState, ManifoldToIvc};
use crate::error::{Error, Result};
use crate::model::{self, ModelParams, OperatingCondition, WiebeParams};

/// Smooth transition of one channel: `initial` until `start`, a half-cosine
/// ramp over `duration` seconds, then `final`. A zero duration is a step
/// taken at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ramp {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_value: f64,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub duration: f64,
}

impl Ramp {
    pub fn constant(value: f64) -> Self {
        Self {
            initial: value,
            final_value: value,
            start: 0.0,
            duration: 0.0,
        }
    }

    pub fn new(initial: f64, final_value: f64, start: f64, duration: f64) -> Self {
        Self {
            initial,
            final_value,
            start,
            duration,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t < self.start {
            return self.initial;
        }
        if t >= self.start + self.duration {
            return self.final_value;
        }
        let s = (t - self.start) / self.duration;
        let w = 0.5 * (1.0 - (std::f64::consts::PI * s).cos());
        self.initial + (self.final_value - self.initial) * w
    }

    fn range(&self) -> (f64, f64) {
        (self.initial.min(self.final_value), self.initial.max(self.final_value))
    }
}

/// Per-channel schedules for a transient run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientProfile {
    /// RPM
    pub n: Ramp,
    pub egr: Ramp,
    pub phi: Ramp,
    /// Average intake-manifold pressure (bar).
    pub p_man: Ramp,
    /// Average intake-manifold temperature (K).
    pub t_man: Ramp,
    /// ° aTDC
    pub ca50_ref: Ramp,
}

/// Channel values at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    pub n: f64,
    pub egr: f64,
    pub phi: f64,
    pub p_man: f64,
    pub t_man: f64,
    pub ca50_ref: f64,
}

impl TransientProfile {
    /// All channels held at a single operating point.
    pub fn flat(n: f64, egr: f64, phi: f64, p_man: f64, t_man: f64, ca50_ref: f64) -> Self {
        Self {
            n: Ramp::constant(n),
            egr: Ramp::constant(egr),
            phi: Ramp::constant(phi),
            p_man: Ramp::constant(p_man),
            t_man: Ramp::constant(t_man),
            ca50_ref: Ramp::constant(ca50_ref),
        }
    }

    fn channels(&self) -> [(&'static str, &Ramp); 6] {
        [
            ("n", &self.n),
            ("egr", &self.egr),
            ("phi", &self.phi),
            ("p_man", &self.p_man),
            ("t_man", &self.t_man),
            ("ca50_ref", &self.ca50_ref),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, ramp) in self.channels() {
            let field = format!("profile.{name}");
            if ![ramp.initial, ramp.final_value, ramp.start, ramp.duration]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::config(field, "non-finite value"));
            }
            if ramp.duration < 0.0 {
                return Err(Error::config(field, "ramp duration must be ≥ 0"));
            }
            let (lo, hi) = ramp.range();
            let ok = match name {
                "n" | "p_man" | "t_man" => lo > 0.0,
                "egr" => lo >= 0.0 && hi <= OperatingCondition::EGR_MAX,
                "phi" => lo > 0.0 && hi <= 1.0,
                _ => true,
            };
            if !ok {
                return Err(Error::config(field, format!("values [{lo}, {hi}] out of bounds")));
            }
        }
        Ok(())
    }
}

pub fn profile_eval(profile: &TransientProfile, t: f64) -> ProfileSample {
    ProfileSample {
        n: profile.n.eval(t),
        egr: profile.egr.eval(t),
        phi: profile.phi.eval(t),
        p_man: profile.p_man.eval(t),
        t_man: profile.t_man.eval(t),
        ca50_ref: profile.ca50_ref.eval(t),
    }
}

fn relax(current: f64, target: f64, gain: f64) -> f64 {
    current + (target - current) * gain
}

fn lag_gain(dt: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        1.0
    } else {
        1.0 - (-dt / tau).exp()
    }
}

/// First-order relaxation of P_IVC and T_IVC toward the target over `dt`
/// seconds with time constant `tau`; `tau = 0` jumps to the target.
pub fn ivc_lag_update(current: &IvcState, target: &IvcState, dt: f64, tau: f64) -> IvcState {
    let g = lag_gain(dt, tau);
    IvcState {
        p_ivc: relax(current.p_ivc, target.p_ivc, g),
        t_ivc: relax(current.t_ivc, target.t_ivc, g),
        v_ivc: target.v_ivc,
    }
}

/// How the plant evaluates combustion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantFidelity {
    /// Full knock integral with dynamic P(θ), T(θ), burn duration and
    /// Wiebe inversion.
    #[default]
    FullIntegral,
    /// The controllers' own closed-form model with P, T at TDC. Together
    /// with matched constants this is the state-space model exactly.
    ControlModel,
}

/// Standard deviations of per-cycle Gaussian disturbances.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// CAD added to the combustion outcome.
    pub ca50: f64,
    /// bar added to the realized P_IVC.
    pub p_ivc: f64,
    /// K added to the realized T_IVC.
    pub t_ivc: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn is_zero(&self) -> bool {
        self.ca50 == 0.0 && self.p_ivc == 0.0 && self.t_ivc == 0.0
    }
}

/// Relative perturbations applied to the reference constants to obtain
/// plant-side constants.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamMismatch {
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

impl ParamMismatch {
    /// Plant c4 −1 %, c9 −5 %: feedforward steady errors of −0.2…−0.4 CAD
    /// against the full-integral plant on the bundled cases.
    pub const DEFAULT: ParamMismatch = ParamMismatch {
        c1: 0.0,
        c2: 0.0,
        c3: 0.0,
        c4: -0.01,
        c5: 0.0,
        c7: 0.0,
        c8: 0.0,
        c9: -0.05,
        kc: 0.0,
    };

    pub fn none() -> Self {
        Self::default()
    }

    pub fn apply(&self, base: &ModelParams) -> ModelParams {
        let rel = [
            self.c1, self.c2, self.c3, self.c4, self.c5, self.c7, self.c8, self.c9, self.kc,
        ];
        let mut v = base.to_array();
        for (x, r) in v.iter_mut().zip(rel) {
            *x *= 1.0 + r;
        }
        ModelParams::from_array(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub geom: EngineGeometry,
    pub true_params: ModelParams,
    pub wiebe: WiebeParams,
    pub fidelity: PlantFidelity,
    /// SOI actuation resolution (CAD); `None` disables quantization.
    pub soi_quantum: Option<f64>,
    pub fuel_delay_cycles: u32,
    /// Time constant (s) of the manifold-to-cylinder lag on P_IVC, T_IVC
    /// and in-cylinder EGR.
    pub lag_tau: f64,
    pub noise: NoiseConfig,
    /// Trapped residual fraction realized by the plant.
    pub x_r: f64,
    /// Knock-integral step (CAD).
    pub integration_step: f64,
    pub ivc_map: ManifoldToIvc,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self::with_params(ParamMismatch::DEFAULT.apply(&ModelParams::REFERENCE))
    }
}

impl PlantConfig {
    /// Default surrogate settings around the given plant-side constants.
    pub fn with_params(true_params: ModelParams) -> Self {
        Self {
            geom: EngineGeometry::default(),
            true_params,
            wiebe: WiebeParams::default_for(true_params.c9),
            fidelity: PlantFidelity::FullIntegral,
            soi_quantum: Some(0.1),
            fuel_delay_cycles: 2,
            lag_tau: 0.2,
            noise: NoiseConfig::default(),
            x_r: X_R_BAR,
            integration_step: 0.1,
            ivc_map: ManifoldToIvc::default(),
        }
    }

    /// Plant that is exactly the controllers' model: reference constants,
    /// closed-form combustion, no quantization, lag or noise.
    pub fn matched() -> Self {
        Self {
            fidelity: PlantFidelity::ControlModel,
            soi_quantum: None,
            lag_tau: 0.0,
            ..Self::with_params(ModelParams::REFERENCE)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geom
            .validate()
            .map_err(|e| Error::config("plant.geom", e.to_string()))?;
        self.true_params
            .validate()
            .map_err(|e| Error::config("plant.true_params", e.to_string()))?;
        self.wiebe
            .validate()
            .and_then(|_| self.wiebe.check_consistency(self.true_params.c9, 1e-9))
            .map_err(|e| Error::config("plant.wiebe", e.to_string()))?;
        if let Some(q) = self.soi_quantum {
            if !(q.is_finite() && q > 0.0) {
                return Err(Error::config("plant.soi_quantum", "must be > 0"));
            }
        }
        if !(self.lag_tau.is_finite() && self.lag_tau >= 0.0) {
            return Err(Error::config("plant.lag_tau", "must be ≥ 0"));
        }
        for (name, v) in [
            ("ca50", self.noise.ca50),
            ("p_ivc", self.noise.p_ivc),
            ("t_ivc", self.noise.t_ivc),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("plant.noise.{name}"), "must be ≥ 0"));
            }
        }
        if !(0.0..1.0).contains(&self.x_r) {
            return Err(Error::config("plant.x_r", "must lie in [0, 1)"));
        }
        if !(self.integration_step.is_finite() && self.integration_step > 0.0) {
            return Err(Error::config("plant.integration_step", "must be > 0"));
        }
        Ok(())
    }

    /// Rounds to the nearest multiple of the quantum, ties away from zero.
    pub fn quantize(&self, soi: f64) -> f64 {
        match self.soi_quantum {
            Some(q) => (soi / q).round() * q,
            None => soi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    Misfire,
    Saturation,
}

impl Fault {
    pub fn as_str(&self) -> &'static str {
        match self {
            Fault::None => "none",
            Fault::Misfire => "misfire",
            Fault::Saturation => "saturation",
        }
    }
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Fault::None),
            "misfire" => Ok(Fault::Misfire),
            "saturation" => Ok(Fault::Saturation),
            other => Err(format!("unknown fault `{other}`")),
        }
    }
}

/// One engine cycle as seen by the harness.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle_index: usize,
    /// Cycle start (s).
    pub time_s: f64,
    pub soi_cmd: f64,
    pub soi_actuated: f64,
    pub soc: Option<f64>,
    pub ca50: Option<f64>,
    /// Reference in force when the cycle burns (mid-cycle).
    pub ca50_ref: f64,
    /// Reference latched at cycle start, the one the controller acted on.
    pub ca50_ref_latched: f64,
    /// Conditions as realized in-cylinder (`soi` is the actuated SOI).
    pub cond: OperatingCondition,
    pub controller: Option<ControllerState>,
    pub lyapunov: Option<f64>,
    pub fault: Fault,
}

impl CycleRecord {
    /// CA50 tracking error `CA50 − ref`.
    pub fn error(&self) -> Option<f64> {
        self.ca50.map(|y| y - self.ca50_ref)
    }

    pub fn fueled(&self) -> bool {
        self.ca50.is_some()
    }
}

#[derive(Debug, Clone, Copy)]
struct LaggedCharge {
    p_ivc: f64,
    t_ivc: f64,
    egr: f64,
}

/// Surrogate plant stepping one cycle at a time.
#[derive(Debug, Clone)]
pub struct Plant {
    config: PlantConfig,
    profile: TransientProfile,
    time: f64,
    cycle: usize,
    charge: LaggedCharge,
    rng: ChaCha8Rng,
}

impl Plant {
    pub fn new(config: PlantConfig, profile: TransientProfile) -> Result<Self> {
        config.validate()?;
        profile.validate()?;
        let s = profile_eval(&profile, 0.0);
        let ivc = config.ivc_map.apply(&config.geom, s.p_man, s.t_man);
        let rng = ChaCha8Rng::seed_from_u64(config.noise.seed);
        Ok(Self {
            config,
            profile,
            time: 0.0,
            cycle: 0,
            charge: LaggedCharge {
                p_ivc: ivc.p_ivc,
                t_ivc: ivc.t_ivc,
                egr: s.egr,
            },
            rng,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    pub fn profile(&self) -> &TransientProfile {
        &self.profile
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn cycle_index(&self) -> usize {
        self.cycle
    }

    /// Reference at the start of the upcoming cycle.
    pub fn latched_reference(&self) -> f64 {
        self.profile.ca50_ref.eval(self.time)
    }

    /// Noise-free conditions the upcoming cycle would see, with SOI 0.
    pub fn current_condition(&self) -> OperatingCondition {
        let s = profile_eval(&self.profile, self.time);
        OperatingCondition {
            n: s.n,
            egr: self.charge.egr,
            phi: s.phi,
            ivc: IvcState {
                p_ivc: self.charge.p_ivc,
                t_ivc: self.charge.t_ivc,
                v_ivc: self.config.geom.v_ivc(),
            },
            x_r: self.config.x_r,
            soi: 0.0,
        }
    }

    fn gaussian(&mut self, sd: f64) -> f64 {
        if sd == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, sd).map(|d| d.sample(&mut self.rng)).unwrap_or(0.0)
    }

    fn combust(&self, cond: &OperatingCondition) -> Result<(f64, f64)> {
        let c = &self.config;
        let p = &c.true_params;
        match c.fidelity {
            PlantFidelity::FullIntegral => {
                let soc = model::soc_full_integral(cond, p, &c.geom, c.integration_step)?;
                let bd = model::burn_duration(cond.dilution(), cond.phi, p, &c.wiebe);
                Ok((soc, soc + c.wiebe.half_burn_fraction() * bd))
            }
            PlantFidelity::ControlModel => {
                let (p0, t0) = model::tdc_state(&cond.ivc, p, &c.geom);
                let soc = model::soc_simplified(cond, p0, t0, p)?;
                Ok((soc, soc + model::ca50_offset(cond.dilution(), cond.phi, p)))
            }
        }
    }

    /// Fires one cycle at the commanded SOI and advances time by 120/N s.
    pub fn step_cycle(&mut self, soi_cmd: f64) -> CycleRecord {
        let t = self.time;
        let sample = profile_eval(&self.profile, t);
        let soi_actuated = self.config.quantize(soi_cmd);
        let mut cond = self.current_condition();
        cond.soi = soi_actuated;
        let (dp, dt_k) = (self.gaussian(self.config.noise.p_ivc), self.gaussian(self.config.noise.t_ivc));
        cond.ivc.p_ivc += dp;
        cond.ivc.t_ivc += dt_k;

        let fueled = self.cycle >= self.config.fuel_delay_cycles as usize;
        let (soc, ca50, fault) = if !fueled {
            (None, None, Fault::None)
        } else if !soi_actuated.is_finite() {
            (None, None, Fault::Misfire)
        } else {
            match self.combust(&cond) {
                Ok((soc, ca50)) => {
                    let jitter = self.gaussian(self.config.noise.ca50);
                    (Some(soc), Some(ca50 + jitter), Fault::None)
                }
                Err(_) => (None, None, Fault::Misfire),
            }
        };

        let period = 120.0 / sample.n;
        let record = CycleRecord {
            cycle_index: self.cycle,
            time_s: t,
            soi_cmd,
            soi_actuated,
            soc,
            ca50,
            ca50_ref: self.profile.ca50_ref.eval(t + 0.5 * period),
            ca50_ref_latched: sample.ca50_ref,
            cond,
            controller: None,
            lyapunov: None,
            fault,
        };

        let next = t + period;
        let target = profile_eval(&self.profile, next);
        let target_ivc = self.config.ivc_map.apply(&self.config.geom, target.p_man, target.t_man);
        let lagged = ivc_lag_update(
            &IvcState {
                p_ivc: self.charge.p_ivc,
                t_ivc: self.charge.t_ivc,
                v_ivc: target_ivc.v_ivc,
            },
            &target_ivc,
            period,
            self.config.lag_tau,
        );
        self.charge = LaggedCharge {
            p_ivc: lagged.p_ivc,
            t_ivc: lagged.t_ivc,
            egr: relax(self.charge.egr, target.egr, lag_gain(period, self.config.lag_tau)),
        };
        self.time = next;
        self.cycle += 1;
        record
    }
}

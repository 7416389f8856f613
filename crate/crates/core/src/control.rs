//! CA50 controllers built on the closed-form model.
//!
//! The model in state-space form is `y = u + α·x1 + β·x2`, with SOI as the
//! input `u`, CA50 as the output `y`, and
//!
//! ```text
//! x1 = (c1·EGR + c2)·exp(c4·P_SOI^c5 / T_SOI)    α = N·φ^(−c3)
//! x2 = c9·(1 + X_d)^c7                           β = φ^c8
//! ```
//!
//! [`AdaptiveController`] inverts the model at observed states and updates
//! them by one gradient step with learning rate `1/(α² + β²)`.
//! [`FeedforwardController`] inverts the model directly from measured
//! conditions with V₀ standing in for V_SOI and a mean residual fraction.

use serde::{Deserialize, Serialize};

use crate::engine::EngineGeometry;
use crate::error::Result;
use crate::model::{self, ModelParams, OperatingCondition};

/// Mean trapped residual fraction assumed by the feedforward inverse.
pub const X_R_BAR: f64 = 0.0384;

/// Observed model states and the current input gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub x1_hat: f64,
    pub x2_hat: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
}

impl ControllerState {
    pub fn new(x1_hat: f64, x2_hat: f64, alpha: f64, beta: f64) -> Self {
        Self {
            x1_hat,
            x2_hat,
            alpha,
            beta,
            eta: learning_rate(alpha, beta),
        }
    }

    /// Replaces α, β (and η) with freshly measured values.
    pub fn with_gains(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self.eta = learning_rate(alpha, beta);
        self
    }

    /// Model output `α·x̄1 + β·x̄2` at the observed states (CA50 − SOI).
    pub fn predicted_offset(&self) -> f64 {
        self.alpha * self.x1_hat + self.beta * self.x2_hat
    }

    /// Both observed states positive, as the physical states are.
    pub fn is_physical(&self) -> bool {
        self.x1_hat > 0.0 && self.x2_hat > 0.0
    }
}

fn learning_rate(alpha: f64, beta: f64) -> f64 {
    1.0 / (alpha * alpha + beta * beta)
}

/// Actuator limits on SOI (° aTDC).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoiBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for SoiBounds {
    fn default() -> Self {
        Self { min: -20.0, max: 20.0 }
    }
}

/// Requested injection timing for the next cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    /// ° aTDC, unquantized and clamped to the actuator bounds.
    pub soi: f64,
    pub ca50_ref: f64,
    /// The raw inverse fell outside the bounds and was clamped.
    pub saturated: bool,
}

impl ControlCommand {
    fn clamped(raw_soi: f64, ca50_ref: f64, bounds: &SoiBounds) -> Self {
        let soi = raw_soi.clamp(bounds.min, bounds.max);
        Self {
            soi,
            ca50_ref,
            saturated: soi != raw_soi,
        }
    }
}

/// Input gains α = N·φ^(−c3), β = φ^c8.
pub fn alpha_beta(n: f64, phi: f64, params: &ModelParams) -> (f64, f64) {
    (n * phi.powf(-params.c3), phi.powf(params.c8))
}

/// Deadbeat inverse `u = y_d − α·x̄1 − β·x̄2` at the observed states.
pub fn adaptive_soi(state: &ControllerState, ca50_ref: f64, bounds: &SoiBounds) -> ControlCommand {
    ControlCommand::clamped(ca50_ref - state.predicted_offset(), ca50_ref, bounds)
}

/// One gradient step on ½(y − y_d)² with η = 1/(α² + β²).
pub fn observer_update(state: &ControllerState, y_measured: f64, y_desired: f64) -> ControllerState {
    let innovation = state.eta * (y_measured - y_desired);
    ControllerState {
        x1_hat: state.x1_hat + state.alpha * innovation,
        x2_hat: state.x2_hat + state.beta * innovation,
        ..*state
    }
}

/// Observer seeded from the model at nominal conditions: P and T at TDC,
/// X_d = EGR + X̄_r.
pub fn observer_init(
    cond: &OperatingCondition,
    params: &ModelParams,
    geom: &EngineGeometry,
    x_r_bar: f64,
) -> ControllerState {
    let (p, t) = model::tdc_state(&cond.ivc, params, geom);
    let x1 = params.egr_scale(cond.egr) * (params.c4 * p.powf(params.c5) / t).exp();
    let x2 = params.c9 * (1.0 + cond.egr + x_r_bar).powf(params.c7);
    let (alpha, beta) = alpha_beta(cond.n, cond.phi, params);
    ControllerState::new(x1, x2, alpha, beta)
}

/// Lyapunov candidate V = (y_d − y)².
pub fn lyapunov_value(y_desired: f64, y_measured: f64) -> f64 {
    let e = y_desired - y_measured;
    e * e
}

/// Feedforward SOI from the model inverse with V₀ for V_SOI and `x_r_bar`
/// for the residual fraction. `cond.soi` is ignored.
pub fn ff_soi(
    ca50_ref: f64,
    cond: &OperatingCondition,
    params: &ModelParams,
    geom: &EngineGeometry,
    x_r_bar: f64,
    bounds: &SoiBounds,
) -> Result<ControlCommand> {
    let (p0, t0) = model::tdc_state(&cond.ivc, params, geom);
    let at_tdc = OperatingCondition { soi: 0.0, x_r: x_r_bar, ..*cond };
    let delay = model::ignition_delay(&at_tdc, p0, t0, params)?;
    let offset = model::ca50_offset(cond.egr + x_r_bar, cond.phi, params);
    Ok(ControlCommand::clamped(ca50_ref - delay - offset, ca50_ref, bounds))
}

/// Per-cycle controller interface used by the closed-loop harness.
///
/// Timing: `command` is called before cycle k with the conditions measured
/// on cycle k−1 and the reference latched at the start of cycle k;
/// `observe` is called after cycle k with what cycle k realized.
pub trait PhasingController: Send {
    fn command(&mut self, measured: &OperatingCondition, ca50_ref: f64) -> Result<ControlCommand>;

    fn observe(&mut self, realized: &OperatingCondition, ca50: Option<f64>, ca50_ref: f64);

    /// Observer state, for controllers that have one.
    fn state(&self) -> Option<ControllerState> {
        None
    }
}

/// Adaptive feedback controller: deadbeat inverse plus gradient observer.
#[derive(Debug, Clone)]
pub struct AdaptiveController {
    params: ModelParams,
    bounds: SoiBounds,
    state: ControllerState,
}

impl AdaptiveController {
    pub fn new(params: ModelParams, bounds: SoiBounds, initial: ControllerState) -> Self {
        Self {
            params,
            bounds,
            state: initial,
        }
    }

    /// Seeds the observer with [`observer_init`] at `nominal`.
    pub fn from_nominal(
        params: ModelParams,
        geom: &EngineGeometry,
        nominal: &OperatingCondition,
        x_r_bar: f64,
        bounds: SoiBounds,
    ) -> Self {
        Self::new(params, bounds, observer_init(nominal, &params, geom, x_r_bar))
    }

    fn refresh_gains(&mut self, cond: &OperatingCondition) {
        let (alpha, beta) = alpha_beta(cond.n, cond.phi, &self.params);
        self.state = self.state.with_gains(alpha, beta);
    }
}

impl PhasingController for AdaptiveController {
    fn command(&mut self, measured: &OperatingCondition, ca50_ref: f64) -> Result<ControlCommand> {
        self.refresh_gains(measured);
        Ok(adaptive_soi(&self.state, ca50_ref, &self.bounds))
    }

    fn observe(&mut self, realized: &OperatingCondition, ca50: Option<f64>, ca50_ref: f64) {
        // No combustion, no innovation.
        let Some(y) = ca50 else { return };
        self.refresh_gains(realized);
        self.state = observer_update(&self.state, y, ca50_ref);
    }

    fn state(&self) -> Option<ControllerState> {
        Some(self.state)
    }
}

/// Open-loop model-inversion controller.
#[derive(Debug, Clone)]
pub struct FeedforwardController {
    params: ModelParams,
    geom: EngineGeometry,
    x_r_bar: f64,
    bounds: SoiBounds,
}

impl FeedforwardController {
    pub fn new(params: ModelParams, geom: EngineGeometry, x_r_bar: f64, bounds: SoiBounds) -> Self {
        Self {
            params,
            geom,
            x_r_bar,
            bounds,
        }
    }
}

impl PhasingController for FeedforwardController {
    fn command(&mut self, measured: &OperatingCondition, ca50_ref: f64) -> Result<ControlCommand> {
        ff_soi(ca50_ref, measured, &self.params, &self.geom, self.x_r_bar, &self.bounds)
    }

    fn observe(&mut self, _: &OperatingCondition, _: Option<f64>, _: f64) {}
}

/// Records V(k) per fueled cycle and checks the one-step decrease
/// `V(k+1) − V(k) = −(y_d − y(k))²`, i.e. `V(k+1) = 0`.
#[derive(Debug, Clone, Default)]
pub struct LyapunovMonitor {
    values: Vec<f64>,
}

impl LyapunovMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, y_desired: f64, y_measured: f64) -> f64 {
        let v = lyapunov_value(y_desired, y_measured);
        self.values.push(v);
        v
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `V(k+1) − V(k)` for consecutive records.
    pub fn differences(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Largest `|ΔV(k) + V(k)|` over the record, the deviation from the
    /// ideal one-step decrease.
    pub fn max_decrease_violation(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| ((w[1] - w[0]) + w[0]).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::IvcState;
    use approx::assert_relative_eq;

    fn nominal() -> OperatingCondition {
        let g = EngineGeometry::default();
        OperatingCondition {
            n: 1200.0,
            egr: 0.25,
            phi: 0.7,
            ivc: IvcState::at_ivc(&g, 2.0, 300.0),
            x_r: X_R_BAR,
            soi: 0.0,
        }
    }

    #[test]
    fn alpha_beta_values() {
        let p = ModelParams::REFERENCE;
        let (a, b) = alpha_beta(1200.0, 0.7, &p);
        assert_relative_eq!(a, 1_146.446_506_307_782, max_relative = 1e-12);
        assert_relative_eq!(b, 0.994_132_146_919_400_9, max_relative = 1e-12);
        assert_eq!(alpha_beta(1500.0, 1.0, &p), (1500.0, 1.0));
        let (a2, _) = alpha_beta(2400.0, 0.7, &p);
        assert_relative_eq!(a2, 2.0 * a, max_relative = 1e-15);
    }

    #[test]
    fn deadbeat_feedthrough() {
        let s = ControllerState::new(1.5e-3, 5.0, 1146.4, 0.994);
        let b = SoiBounds::default();
        let u1 = adaptive_soi(&s, 8.0, &b);
        let u2 = adaptive_soi(&s, 9.5, &b);
        assert_relative_eq!(u2.soi - u1.soi, 1.5, max_relative = 1e-12);
        assert!(!u1.saturated);
    }

    #[test]
    fn saturation_clamps_and_flags() {
        let s = ControllerState::new(1.5e-3, 5.0, 1146.4, 0.994);
        let u = adaptive_soi(&s, 40.0, &SoiBounds::default());
        assert_eq!(u.soi, 20.0);
        assert!(u.saturated);
    }

    #[test]
    fn zero_innovation_leaves_state() {
        let s = ControllerState::new(1.5e-3, 5.0, 1146.4, 0.994);
        assert_eq!(observer_update(&s, 8.0, 8.0), s);
    }

    #[test]
    fn unit_innovation_step() {
        let (a, b) = alpha_beta(1200.0, 0.7, &ModelParams::REFERENCE);
        let s = ControllerState::new(1e-3, 5.0, a, b);
        let next = observer_update(&s, 9.0, 8.0);
        assert_relative_eq!(next.x1_hat - s.x1_hat, 8.722_598_416_611_184e-4, max_relative = 1e-9);
        assert_relative_eq!(next.x2_hat - s.x2_hat, 7.563_733_190_263_185e-7, max_relative = 1e-6);
    }

    #[test]
    fn one_update_cancels_output_error() {
        let (a, b) = alpha_beta(1200.0, 0.7, &ModelParams::REFERENCE);
        let (x1, x2) = (1.48e-3, 5.3);
        let s = ControllerState::new(1.2e-3, 4.9, a, b);
        let u = adaptive_soi(&s, 8.0, &SoiBounds::default()).soi;
        let y = u + a * x1 + b * x2;
        let next = observer_update(&s, y, 8.0);
        let residual = a * (x1 - next.x1_hat) + b * (x2 - next.x2_hat);
        assert!(residual.abs() < 1e-12, "{residual}");
    }

    #[test]
    fn observer_init_states() {
        let g = EngineGeometry::default();
        let p = ModelParams::REFERENCE;
        let s = observer_init(&nominal(), &p, &g, X_R_BAR);
        assert_relative_eq!(s.x2_hat, p.c9 * 1.2884f64.powf(p.c7), max_relative = 1e-13);
        let (p0, t0) = crate::engine::polytropic_state(0.0, &nominal().ivc, p.kc, &g).unwrap();
        let x1 = (p.c1 * 0.25 + p.c2) * (p.c4 * p0.powf(p.c5) / t0).exp();
        assert_relative_eq!(s.x1_hat, x1, max_relative = 1e-12);
        assert!(s.is_physical());
        assert_relative_eq!(s.eta, 1.0 / (s.alpha * s.alpha + s.beta * s.beta), max_relative = 1e-15);

        let dry = OperatingCondition { egr: 0.0, ..nominal() };
        assert_relative_eq!(observer_init(&dry, &p, &g, 0.0).x2_hat, p.c9, max_relative = 1e-15);
    }

    #[test]
    fn lyapunov_examples() {
        assert_eq!(lyapunov_value(8.0, 8.0), 0.0);
        assert_relative_eq!(lyapunov_value(8.0, 7.5), 0.25);
        assert_relative_eq!(lyapunov_value(8.0, 9.9), 3.61, max_relative = 1e-12);
    }

    #[test]
    fn feedforward_inverts_prediction() {
        let g = EngineGeometry::default();
        let p = ModelParams::REFERENCE;
        let cond = nominal();
        let (p0, t0) = model::tdc_state(&cond.ivc, &p, &g);
        let ref_ca50 = model::ca50_predict(&cond.with_soi(0.0), p0, t0, &p).unwrap();
        let cmd = ff_soi(ref_ca50, &cond, &p, &g, X_R_BAR, &SoiBounds::default()).unwrap();
        assert!(cmd.soi.abs() < 1e-12, "{}", cmd.soi);
    }

    #[test]
    fn feedforward_case1_value() {
        let g = EngineGeometry::default();
        let p = ModelParams::REFERENCE;
        let cmd = ff_soi(8.0, &nominal(), &p, &g, X_R_BAR, &SoiBounds::default()).unwrap();
        // 8 − delay(TDC state) − offset(0.2884, 0.7)
        assert_relative_eq!(cmd.soi, 0.767_202_902_694_748_4, max_relative = 1e-9);
    }

    #[test]
    fn monitor_reports_decrease() {
        let mut m = LyapunovMonitor::new();
        m.record(8.0, 8.5);
        m.record(8.0, 8.0);
        m.record(8.0, 8.0);
        assert_eq!(m.differences(), vec![-0.25, 0.0]);
        assert_eq!(m.max_decrease_violation(), 0.0);
    }
}

//! Closed-loop scenarios: controller + plant run cycle by cycle over a
//! transient profile, with per-segment tracking metrics and CSV output.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::control::{
    lyapunov_value, AdaptiveController, FeedforwardController, PhasingController, SoiBounds, X_R_BAR,
};
use crate::engine::{EngineGeometry, ManifoldToIvc};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::plant::{
    CycleRecord, Fault, NoiseConfig, ParamMismatch, Plant, PlantConfig, PlantFidelity, Ramp, TransientProfile,
};

/// Time of the operating-point change in the bundled cases (s).
pub const STEP_TIME: f64 = 5.0;
/// Transition time of smoothly changed channels (s).
pub const RAMP_DURATION: f64 = 0.5;
/// Reference steps are applied over one millisecond.
pub const REFERENCE_STEP: f64 = 0.001;

/// The five bundled transients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// CA50 reference 8 → 10 CAD.
    Case1,
    /// Speed 1200 → 1500 RPM.
    Case2,
    /// Intake temperature 300 → 330 K.
    Case3,
    /// Equivalence ratio 0.5 → 0.9.
    Case4,
    /// EGR 0 → 50 %.
    Case5,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Case1, Preset::Case2, Preset::Case3, Preset::Case4, Preset::Case5];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Case1 => "case1",
            Preset::Case2 => "case2",
            Preset::Case3 => "case3",
            Preset::Case4 => "case4",
            Preset::Case5 => "case5",
        }
    }

    pub fn profile(&self) -> TransientProfile {
        let base = TransientProfile::flat(1200.0, 0.25, 0.7, 2.0, 300.0, 8.0);
        let ramp = |a, b| Ramp::new(a, b, STEP_TIME, RAMP_DURATION);
        match self {
            Preset::Case1 => TransientProfile {
                ca50_ref: Ramp::new(8.0, 10.0, STEP_TIME, REFERENCE_STEP),
                ..base
            },
            Preset::Case2 => TransientProfile { n: ramp(1200.0, 1500.0), ..base },
            Preset::Case3 => TransientProfile { t_man: ramp(300.0, 330.0), ..base },
            Preset::Case4 => TransientProfile { phi: ramp(0.5, 0.9), ..base },
            Preset::Case5 => TransientProfile { egr: ramp(0.0, 0.5), ..base },
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config("preset", format!("unknown preset `{s}` (case1…case5)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Adaptive,
    Feedforward,
}

impl ControllerKind {
    /// Tracking band used for settling: each controller's own claimed
    /// steady-state accuracy.
    pub fn default_band(&self) -> f64 {
        match self {
            ControllerKind::Adaptive => 0.1,
            ControllerKind::Feedforward => 0.5,
        }
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(ControllerKind::Adaptive),
            "feedforward" => Ok(ControllerKind::Feedforward),
            other => Err(Error::config("controller.kind", format!("unknown controller `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    /// Model constants the controller believes.
    pub params: ModelParams,
    pub x_r_bar: f64,
    pub bounds: SoiBounds,
}

impl ControllerConfig {
    pub fn new(kind: ControllerKind) -> Self {
        Self {
            kind,
            params: ModelParams::REFERENCE,
            x_r_bar: X_R_BAR,
            bounds: SoiBounds::default(),
        }
    }

    pub fn build(&self, geom: &EngineGeometry, nominal: &crate::model::OperatingCondition) -> Box<dyn PhasingController> {
        match self.kind {
            ControllerKind::Adaptive => Box::new(AdaptiveController::from_nominal(
                self.params,
                geom,
                nominal,
                self.x_r_bar,
                self.bounds,
            )),
            ControllerKind::Feedforward => Box::new(FeedforwardController::new(
                self.params,
                *geom,
                self.x_r_bar,
                self.bounds,
            )),
        }
    }
}

/// Windows over which metrics are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSpec {
    /// |CA50 − ref| bound for settling.
    pub band: f64,
    /// Boundary between the pre- and post-change segments (s).
    pub split: f64,
    pub duration: f64,
    /// Length of the steady-state window at the end of each segment (s).
    pub steady_window: f64,
}

/// Fully resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
    pub profile: TransientProfile,
    pub duration: f64,
    pub metrics: MetricsSpec,
    pub csv_out: Option<PathBuf>,
    pub metrics_out: Option<PathBuf>,
}

impl ScenarioConfig {
    /// A bundled case with the default plant (mismatch preset, 0.1 CAD
    /// quantization, lag).
    pub fn preset(preset: Preset, kind: ControllerKind) -> Self {
        Self {
            name: preset.name().to_string(),
            plant: PlantConfig::default(),
            controller: ControllerConfig::new(kind),
            profile: preset.profile(),
            duration: 10.0,
            metrics: MetricsSpec {
                band: kind.default_band(),
                split: STEP_TIME,
                duration: 10.0,
                steady_window: 2.0,
            },
            csv_out: None,
            metrics_out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.profile.validate()?;
        self.controller
            .params
            .validate()
            .map_err(|e| Error::config("controller.params", e.to_string()))?;
        if !(0.0..1.0).contains(&self.controller.x_r_bar) {
            return Err(Error::config("controller.x_r_bar", "must lie in [0, 1)"));
        }
        let b = self.controller.bounds;
        if !(b.min < b.max && self.plant.geom.in_closed_span(b.min) && self.plant.geom.in_closed_span(b.max)) {
            return Err(Error::config("controller.bounds", "need min < max inside the closed-valve span"));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::config("duration", "must be > 0"));
        }
        let m = &self.metrics;
        if !(m.band > 0.0 && m.steady_window > 0.0 && m.split > 0.0 && m.split < self.duration) {
            return Err(Error::config("metrics", "need band, steady_window > 0 and 0 < split < duration"));
        }
        Ok(())
    }
}

/// Runs `controller` against `plant` until the plant clock reaches
/// `duration`.
///
/// Before cycle k the controller sees the conditions realized on cycle
/// k−1 and the reference latched at the start of cycle k; after the cycle
/// it observes the outcome. The recorded observer state is the one that
/// will drive cycle k+1.
pub fn run_closed_loop(
    plant: &mut Plant,
    controller: &mut dyn PhasingController,
    duration: f64,
) -> Result<Vec<CycleRecord>> {
    let mut measured = plant.current_condition();
    let mut records = Vec::new();
    while plant.time() < duration - 1e-9 {
        let latched = plant.latched_reference();
        let cmd = controller.command(&measured, latched)?;
        let mut rec = plant.step_cycle(cmd.soi);
        controller.observe(&rec.cond, rec.ca50, latched);
        rec.controller = controller.state();
        rec.lyapunov = rec.ca50.map(|y| lyapunov_value(latched, y));
        if cmd.saturated && rec.fault == Fault::None {
            rec.fault = Fault::Saturation;
        }
        measured = rec.cond;
        records.push(rec);
    }
    Ok(records)
}

/// Tracking statistics over one time segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub start: f64,
    pub end: f64,
    pub fueled_cycles: usize,
    /// Fueled cycles up to and including the first one of the final
    /// in-band run; `None` if the segment ends out of band.
    pub settling_cycles: Option<usize>,
    /// The same position counting motored cycles too.
    pub settling_cycles_with_unfueled: Option<usize>,
    /// [min, max] of CA50 − ref over the final steady window.
    pub steady_state_error_band: [f64; 2],
    /// Largest excursion opposite to the first out-of-band error.
    pub overshoot: f64,
    /// Signed error of largest magnitude.
    pub transient_peak_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub band: f64,
    pub segments: Vec<SegmentMetrics>,
}

impl RunMetrics {
    pub fn pre(&self) -> &SegmentMetrics {
        &self.segments[0]
    }

    pub fn post(&self) -> &SegmentMetrics {
        &self.segments[1]
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("metrics serialize")
    }
}

/// The three columns metrics depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingSample {
    pub time_s: f64,
    pub ca50: Option<f64>,
    pub ca50_ref: f64,
}

impl From<&CycleRecord> for TrackingSample {
    fn from(r: &CycleRecord) -> Self {
        Self {
            time_s: r.time_s,
            ca50: r.ca50,
            ca50_ref: r.ca50_ref,
        }
    }
}

fn segment_metrics(rows: &[TrackingSample], start: f64, end: f64, last: bool, spec: &MetricsSpec) -> SegmentMetrics {
    let seg: Vec<&TrackingSample> = rows
        .iter()
        .filter(|r| r.time_s >= start - 1e-9 && (last || r.time_s < end - 1e-9))
        .collect();
    let fueled: Vec<(usize, f64, f64)> = seg
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.ca50.map(|y| (i, r.time_s, y - r.ca50_ref)))
        .collect();

    let last_out = fueled.iter().rposition(|&(_, _, e)| e.abs() > spec.band);
    let (settling, settling_all) = match last_out {
        None if fueled.is_empty() => (None, None),
        None => (Some(1), Some(fueled[0].0 + 1)),
        Some(k) if k + 1 == fueled.len() => (None, None),
        Some(k) => (Some(k + 2), Some(fueled[k + 1].0 + 1)),
    };

    let steady: Vec<f64> = fueled
        .iter()
        .filter(|&&(_, t, _)| t >= end - spec.steady_window - 1e-9)
        .map(|&(_, _, e)| e)
        .collect();
    let band = if steady.is_empty() {
        [f64::NAN, f64::NAN]
    } else {
        [
            steady.iter().copied().fold(f64::INFINITY, f64::min),
            steady.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ]
    };

    let overshoot = match fueled.iter().position(|&(_, _, e)| e.abs() > spec.band) {
        Some(k) => {
            let s = fueled[k].2.signum();
            fueled[k..].iter().map(|&(_, _, e)| -s * e).fold(0.0, f64::max)
        }
        None => 0.0,
    };

    let peak = fueled
        .iter()
        .map(|&(_, _, e)| e)
        .fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });

    SegmentMetrics {
        start,
        end,
        fueled_cycles: fueled.len(),
        settling_cycles: settling,
        settling_cycles_with_unfueled: settling_all,
        steady_state_error_band: band,
        overshoot,
        transient_peak_error: peak,
    }
}

/// Metrics for the segments `[0, split)` and `[split, duration]`.
pub fn compute_metrics(rows: &[TrackingSample], spec: &MetricsSpec) -> RunMetrics {
    RunMetrics {
        band: spec.band,
        segments: vec![
            segment_metrics(rows, 0.0, spec.split, false, spec),
            segment_metrics(rows, spec.split, spec.duration, true, spec),
        ],
    }
}

pub const CSV_HEADER: [&str; 16] = [
    "cycle_index",
    "time_s",
    "soi_cmd",
    "soi_actuated",
    "soc",
    "ca50",
    "ca50_ref",
    "x1_hat",
    "x2_hat",
    "lyapunov",
    "n",
    "egr",
    "phi",
    "p_ivc",
    "t_ivc",
    "fault",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per cycle; empty cells for quantities a cycle does not have.
pub fn write_records_csv(w: impl Write, records: &[CycleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.cycle_index.to_string(),
            r.time_s.to_string(),
            r.soi_cmd.to_string(),
            r.soi_actuated.to_string(),
            opt(r.soc),
            opt(r.ca50),
            r.ca50_ref.to_string(),
            opt(r.controller.map(|s| s.x1_hat)),
            opt(r.controller.map(|s| s.x2_hat)),
            opt(r.lyapunov),
            r.cond.n.to_string(),
            r.cond.egr.to_string(),
            r.cond.phi.to_string(),
            r.cond.ivc.p_ivc.to_string(),
            r.cond.ivc.t_ivc.to_string(),
            r.fault.as_str().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<run csv>", e))?;
    Ok(())
}

/// Reads the tracking columns back from a run CSV.
pub fn read_tracking_csv(r: impl Read, origin: &str) -> Result<Vec<TrackingSample>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 1,
            reason: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<Option<f64>> {
            let s = rec.get(i).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line,
                reason: format!("{}: {e}", CSV_HEADER[i]),
            })
        };
        let missing = |i: usize| Error::Parse {
            path: origin.to_string(),
            line,
            reason: format!("{} is empty", CSV_HEADER[i]),
        };
        out.push(TrackingSample {
            time_s: num(1)?.ok_or_else(|| missing(1))?,
            ca50: num(5)?,
            ca50_ref: num(6)?.ok_or_else(|| missing(6))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub records: Vec<CycleRecord>,
    pub metrics: RunMetrics,
}

/// Builds plant and controller from `config`, runs the loop and scores it.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutput> {
    config.validate()?;
    let mut plant = Plant::new(config.plant.clone(), config.profile)?;
    let nominal = plant.current_condition();
    let mut controller = config.controller.build(&config.plant.geom, &nominal);
    let records = run_closed_loop(&mut plant, controller.as_mut(), config.duration)?;
    let rows: Vec<TrackingSample> = records.iter().map(TrackingSample::from).collect();
    let metrics = compute_metrics(&rows, &MetricsSpec { duration: config.duration, ..config.metrics });
    Ok(ScenarioOutput { records, metrics })
}

// Scenario files.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    preset: Option<String>,
    duration: Option<f64>,
    geometry_file: Option<PathBuf>,
    #[serde(default)]
    controller: ControllerSection,
    #[serde(default)]
    plant: PlantSection,
    #[serde(default)]
    profile: ProfileSection,
    #[serde(default)]
    metrics: MetricsSection,
    #[serde(default)]
    outputs: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerSection {
    kind: Option<String>,
    params_file: Option<PathBuf>,
    x_r_bar: Option<f64>,
    soi_min: Option<f64>,
    soi_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantSection {
    params_file: Option<PathBuf>,
    mismatch: Option<ParamMismatch>,
    fidelity: Option<PlantFidelity>,
    /// 0 disables quantization.
    soi_quantum: Option<f64>,
    fuel_delay_cycles: Option<u32>,
    lag_tau: Option<f64>,
    x_r: Option<f64>,
    integration_step: Option<f64>,
    noise: Option<NoiseConfig>,
    ivc_map: Option<ManifoldToIvc>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileSection {
    n: Option<Ramp>,
    egr: Option<Ramp>,
    phi: Option<Ramp>,
    p_man: Option<Ramp>,
    t_man: Option<Ramp>,
    ca50_ref: Option<Ramp>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsSection {
    band: Option<f64>,
    split: Option<f64>,
    steady_window: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    csv: Option<PathBuf>,
    metrics: Option<PathBuf>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn existing(base: &Path, p: &Path, field: &str) -> Result<PathBuf> {
    let full = resolve(base, p);
    if !full.is_file() {
        return Err(Error::config(field, format!("{} does not exist", full.display())));
    }
    Ok(full)
}

/// Parses a TOML scenario. Relative paths resolve against `base_dir`.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<ScenarioConfig> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::config("scenario", e.message().to_string()))?;
    let kind: ControllerKind = file.controller.kind.as_deref().unwrap_or("adaptive").parse()?;
    let preset: Preset = file.preset.as_deref().unwrap_or("case1").parse()?;
    let mut cfg = ScenarioConfig::preset(preset, kind);
    if let Some(name) = file.name {
        cfg.name = name;
    }

    let geom = match &file.geometry_file {
        Some(p) => EngineGeometry::from_toml_file(existing(base_dir, p, "geometry_file")?)?,
        None => EngineGeometry::default(),
    };

    if let Some(p) = &file.controller.params_file {
        cfg.controller.params = ModelParams::read_param_file(existing(base_dir, p, "controller.params_file")?)?;
    }
    if let Some(x) = file.controller.x_r_bar {
        cfg.controller.x_r_bar = x;
    }
    if let Some(v) = file.controller.soi_min {
        cfg.controller.bounds.min = v;
    }
    if let Some(v) = file.controller.soi_max {
        cfg.controller.bounds.max = v;
    }

    let ps = file.plant;
    let base_params = match &ps.params_file {
        Some(p) => ModelParams::read_param_file(existing(base_dir, p, "plant.params_file")?)?,
        None => ModelParams::REFERENCE,
    };
    let true_params = ps.mismatch.unwrap_or(ParamMismatch::DEFAULT).apply(&base_params);
    let mut plant = PlantConfig::with_params(true_params);
    plant.geom = geom;
    if let Some(f) = ps.fidelity {
        plant.fidelity = f;
    }
    if let Some(q) = ps.soi_quantum {
        plant.soi_quantum = (q != 0.0).then_some(q);
    }
    if let Some(d) = ps.fuel_delay_cycles {
        plant.fuel_delay_cycles = d;
    }
    if let Some(t) = ps.lag_tau {
        plant.lag_tau = t;
    }
    if let Some(x) = ps.x_r {
        plant.x_r = x;
    }
    if let Some(h) = ps.integration_step {
        plant.integration_step = h;
    }
    if let Some(n) = ps.noise {
        plant.noise = n;
    }
    if let Some(m) = ps.ivc_map {
        plant.ivc_map = m;
    }
    cfg.plant = plant;

    let pr = file.profile;
    let p = &mut cfg.profile;
    for (slot, over) in [
        (&mut p.n, pr.n),
        (&mut p.egr, pr.egr),
        (&mut p.phi, pr.phi),
        (&mut p.p_man, pr.p_man),
        (&mut p.t_man, pr.t_man),
        (&mut p.ca50_ref, pr.ca50_ref),
    ] {
        if let Some(r) = over {
            *slot = r;
        }
    }

    if let Some(d) = file.duration {
        cfg.duration = d;
    }
    cfg.metrics.duration = cfg.duration;
    if let Some(b) = file.metrics.band {
        cfg.metrics.band = b;
    }
    if let Some(s) = file.metrics.split {
        cfg.metrics.split = s;
    }
    if let Some(w) = file.metrics.steady_window {
        cfg.metrics.steady_window = w;
    }
    cfg.csv_out = file.outputs.csv.map(|p| resolve(base_dir, &p));
    cfg.metrics_out = file.outputs.metrics.map(|p| resolve(base_dir, &p));
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, y: Option<f64>, r: f64) -> TrackingSample {
        TrackingSample { time_s: t, ca50: y, ca50_ref: r }
    }

    fn spec() -> MetricsSpec {
        MetricsSpec { band: 0.1, split: 1.0, duration: 2.0, steady_window: 0.5 }
    }

    #[test]
    fn presets_match_tables() {
        let p1 = Preset::Case1.profile();
        assert_eq!((p1.ca50_ref.initial, p1.ca50_ref.final_value), (8.0, 10.0));
        assert_eq!((p1.n.initial, p1.t_man.initial, p1.p_man.initial), (1200.0, 300.0, 2.0));
        assert_eq!((p1.phi.initial, p1.egr.initial), (0.7, 0.25));
        let p2 = Preset::Case2.profile();
        assert_eq!((p2.n.initial, p2.n.final_value), (1200.0, 1500.0));
        let p3 = Preset::Case3.profile();
        assert_eq!((p3.t_man.initial, p3.t_man.final_value), (300.0, 330.0));
        let p4 = Preset::Case4.profile();
        assert_eq!((p4.phi.initial, p4.phi.final_value), (0.5, 0.9));
        let p5 = Preset::Case5.profile();
        assert_eq!((p5.egr.initial, p5.egr.final_value), (0.0, 0.5));
        for p in Preset::ALL {
            let pr = p.profile();
            assert_eq!(pr.ca50_ref.initial, 8.0);
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn settling_and_overshoot() {
        let rows = vec![
            sample(0.0, None, 8.0),
            sample(0.1, None, 8.0),
            sample(0.2, Some(9.0), 8.0),
            sample(0.3, Some(7.7), 8.0),
            sample(0.4, Some(8.05), 8.0),
            sample(0.5, Some(8.0), 8.0),
            sample(0.6, Some(7.95), 8.0),
            sample(0.7, Some(8.0), 8.0),
            sample(0.8, Some(8.0), 8.0),
            sample(0.9, Some(8.02), 8.0),
        ];
        let m = compute_metrics(&rows, &spec());
        let pre = m.pre();
        assert_eq!(pre.fueled_cycles, 8);
        assert_eq!(pre.settling_cycles, Some(3));
        assert_eq!(pre.settling_cycles_with_unfueled, Some(5));
        assert!((pre.overshoot - 0.3).abs() < 1e-12);
        assert_eq!(pre.transient_peak_error, 1.0);
        let [lo, hi] = pre.steady_state_error_band;
        assert!((lo + 0.05).abs() < 1e-12 && (hi - 0.02).abs() < 1e-12);
    }

    #[test]
    fn unsettled_segment_reports_none() {
        let rows = vec![sample(0.0, Some(8.0), 8.0), sample(0.5, Some(8.5), 8.0)];
        let m = compute_metrics(&rows, &spec());
        assert_eq!(m.pre().settling_cycles, None);
    }

    #[test]
    fn csv_round_trip_preserves_metrics() {
        let cfg = ScenarioConfig { duration: 2.0, ..ScenarioConfig::preset(Preset::Case1, ControllerKind::Adaptive) };
        let cfg = ScenarioConfig { metrics: MetricsSpec { split: 1.0, duration: 2.0, ..cfg.metrics }, ..cfg };
        let out = run_scenario(&cfg).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &out.records).unwrap();
        let rows = read_tracking_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(compute_metrics(&rows, &cfg.metrics), out.metrics);
    }

    #[test]
    fn matched_flat_feedforward_is_exact() {
        let mut cfg = ScenarioConfig::preset(Preset::Case1, ControllerKind::Feedforward);
        cfg.plant = PlantConfig::matched();
        cfg.profile = TransientProfile::flat(1200.0, 0.25, 0.7, 2.0, 300.0, 8.0);
        let out = run_scenario(&cfg).unwrap();
        for r in out.records.iter().filter(|r| r.fueled()) {
            assert_eq!(r.error().unwrap(), 0.0);
        }
    }

    #[test]
    fn scenario_file_overrides() {
        let text = r#"
            preset = "case3"
            duration = 4.0
            [controller]
            kind = "feedforward"
            [plant]
            soi_quantum = 0
            lag_tau = 0.1
            [plant.mismatch]
            c4 = 0.02
            [profile.ca50_ref]
            initial = 9.0
            final = 9.0
            [metrics]
            split = 2.0
        "#;
        let cfg = parse_scenario(text, Path::new(".")).unwrap();
        assert_eq!(cfg.controller.kind, ControllerKind::Feedforward);
        assert_eq!(cfg.plant.soi_quantum, None);
        assert_eq!(cfg.plant.lag_tau, 0.1);
        assert!((cfg.plant.true_params.c4 / ModelParams::REFERENCE.c4 - 1.02).abs() < 1e-12);
        assert_eq!(cfg.plant.true_params.c9, ModelParams::REFERENCE.c9);
        assert_eq!(cfg.profile.t_man.final_value, 330.0);
        assert_eq!(cfg.profile.ca50_ref.initial, 9.0);
        assert_eq!(cfg.metrics.band, 0.5);
    }

    #[test]
    fn scenario_errors_name_fields() {
        let err = parse_scenario("duration = -1.0", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("duration"), "{err}");
        let err = parse_scenario("geometry_file = \"nope.toml\"", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("geometry_file"), "{err}");
        let err = parse_scenario("[plant]\nbogus = 1", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!(parse_scenario("preset = \"case9\"", Path::new(".")).is_err());
    }
}

//! Engine geometry, slider-crank cylinder volume, polytropic in-cylinder
//! state and mixture accounting.
//!
//! Units used throughout the crate: pressure in bar, temperature in K,
//! volume in m³, engine speed in RPM, crank angle in degrees aTDC.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default stoichiometric air-fuel ratio for diesel.
pub const AFR_STOICH_DIESEL: f64 = 14.47;

/// Cylinder and valve-timing geometry of a single cylinder.
///
/// The default is the 12.4 L six-cylinder heavy-duty engine used for the
/// bundled presets (126 mm bore, 166 mm stroke, 251 mm rod, 17:1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineGeometry {
    /// Bore (m).
    pub bore: f64,
    /// Stroke (m).
    pub stroke: f64,
    /// Connecting rod length (m).
    pub rod_length: f64,
    pub compression_ratio: f64,
    pub n_cylinders: u32,
    /// Intake valve closing (° aTDC).
    pub ivc_angle: f64,
    /// Exhaust valve opening (° aTDC).
    pub evo_angle: f64,
}

impl Default for EngineGeometry {
    fn default() -> Self {
        Self {
            bore: 0.126,
            stroke: 0.166,
            rod_length: 0.251,
            compression_ratio: 17.0,
            n_cylinders: 6,
            ivc_angle: -148.5,
            evo_angle: 137.0,
        }
    }
}

impl EngineGeometry {
    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("bore", self.bore),
            ("stroke", self.stroke),
            ("rod_length", self.rod_length),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid("geometry", format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.compression_ratio.is_finite() && self.compression_ratio > 1.0) {
            return Err(Error::invalid(
                "geometry",
                format!("compression_ratio must be > 1, got {}", self.compression_ratio),
            ));
        }
        if self.rod_length <= self.stroke / 2.0 {
            return Err(Error::invalid(
                "geometry",
                "rod_length must exceed half the stroke (slider-crank validity)",
            ));
        }
        if self.n_cylinders == 0 {
            return Err(Error::invalid("geometry", "n_cylinders must be ≥ 1"));
        }
        if !(self.ivc_angle < 0.0 && self.evo_angle > 0.0) {
            return Err(Error::invalid(
                "geometry",
                format!(
                    "closed-valve span must straddle TDC, got [{}, {}]",
                    self.ivc_angle, self.evo_angle
                ),
            ));
        }
        Ok(())
    }

    /// Loads geometry from a TOML file whose keys match the field names (SI units).
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let geom: Self = toml::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        geom.validate()?;
        Ok(geom)
    }

    /// Swept volume of one cylinder, (π/4)·B²·S.
    pub fn displaced_volume(&self) -> f64 {
        PI / 4.0 * self.bore * self.bore * self.stroke
    }

    pub fn clearance_volume(&self) -> f64 {
        self.displaced_volume() / (self.compression_ratio - 1.0)
    }

    /// Cylinder volume at intake valve closing.
    pub fn v_ivc(&self) -> f64 {
        cylinder_volume(self.ivc_angle, self)
    }

    /// Cylinder volume at TDC (0° aTDC).
    pub fn v0(&self) -> f64 {
        cylinder_volume(0.0, self)
    }

    pub fn in_closed_span(&self, theta: f64) -> bool {
        theta >= self.ivc_angle && theta <= self.evo_angle
    }
}

/// Slider-crank cylinder volume at crank angle `theta` (° aTDC).
pub fn cylinder_volume(theta: f64, geom: &EngineGeometry) -> f64 {
    let crank = geom.stroke / 2.0;
    let rod = geom.rod_length;
    let (s, c) = theta.to_radians().sin_cos();
    let piston_travel = rod + crank - crank * c - (rod * rod - (crank * s).powi(2)).sqrt();
    geom.clearance_volume() + PI / 4.0 * geom.bore * geom.bore * piston_travel
}

/// Trapped charge state at intake valve closing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvcState {
    /// bar
    pub p_ivc: f64,
    /// K
    pub t_ivc: f64,
    /// m³
    pub v_ivc: f64,
}

impl IvcState {
    /// IVC state whose volume is the geometry's volume at `ivc_angle`.
    pub fn at_ivc(geom: &EngineGeometry, p_ivc: f64, t_ivc: f64) -> Self {
        Self {
            p_ivc,
            t_ivc,
            v_ivc: geom.v_ivc(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_ivc", self.p_ivc), ("t_ivc", self.t_ivc), ("v_ivc", self.v_ivc)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid("IVC state", format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Pressure and temperature after polytropic compression to volume `v`.
    pub(crate) fn compressed_to(&self, v: f64, k_c: f64) -> (f64, f64) {
        let ratio = self.v_ivc / v;
        (self.p_ivc * ratio.powf(k_c), self.t_ivc * ratio.powf(k_c - 1.0))
    }
}

/// In-cylinder (pressure bar, temperature K) at `theta` by polytropic
/// compression from the IVC state with exponent `k_c`.
pub fn polytropic_state(
    theta: f64,
    ivc: &IvcState,
    k_c: f64,
    geom: &EngineGeometry,
) -> Result<(f64, f64)> {
    if !geom.in_closed_span(theta) {
        return Err(Error::OutOfSpan {
            theta,
            ivc: geom.ivc_angle,
            evo: geom.evo_angle,
        });
    }
    ivc.validate()?;
    if !(k_c.is_finite() && k_c > 0.0) {
        return Err(Error::invalid("polytropic exponent", format!("k_c = {k_c}")));
    }
    Ok(ivc.compressed_to(cylinder_volume(theta, geom), k_c))
}

/// Per-cycle, per-cylinder charge masses (kg).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub m_fuel: f64,
    pub m_air: f64,
    pub m_egr: f64,
    pub m_r: f64,
    pub afr_stoich: f64,
}

impl MixtureState {
    pub fn new(m_fuel: f64, m_air: f64, m_egr: f64, m_r: f64) -> Result<Self> {
        let mix = Self {
            m_fuel,
            m_air,
            m_egr,
            m_r,
            afr_stoich: AFR_STOICH_DIESEL,
        };
        mix.validate()?;
        Ok(mix)
    }

    pub fn with_afr_stoich(mut self, afr_stoich: f64) -> Self {
        self.afr_stoich = afr_stoich;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m_fuel", self.m_fuel),
            ("m_air", self.m_air),
            ("m_egr", self.m_egr),
            ("m_r", self.m_r),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid("mixture", format!("{name} must be ≥ 0, got {v}")));
            }
        }
        if !(self.afr_stoich.is_finite() && self.afr_stoich > 0.0) {
            return Err(Error::invalid("mixture", "afr_stoich must be > 0"));
        }
        Ok(())
    }
}

/// Fuel-air equivalence ratio φ = (m_fuel/m_air) / (1/AFR_st).
pub fn equivalence_ratio(mix: &MixtureState) -> Result<f64> {
    mix.validate()?;
    if mix.m_air <= 0.0 {
        return Err(Error::invalid("mixture", "zero air mass"));
    }
    Ok(mix.m_fuel / mix.m_air * mix.afr_stoich)
}

/// Trapped residual mass fraction m_r / (m_air + m_fuel + m_egr).
pub fn residual_fraction(mix: &MixtureState) -> Result<f64> {
    mix.validate()?;
    let fresh = mix.m_air + mix.m_fuel + mix.m_egr;
    if fresh <= 0.0 {
        if mix.m_r == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::invalid("mixture", "residual mass with no fresh charge"));
    }
    let x_r = mix.m_r / fresh;
    if x_r >= 1.0 {
        return Err(Error::invalid("mixture", format!("residual fraction {x_r} ≥ 1")));
    }
    Ok(x_r)
}

/// Dilution fraction X_d = EGR + X_r.
pub fn dilution_fraction(egr: f64, x_r: f64) -> Result<f64> {
    for (name, v) in [("egr", egr), ("x_r", x_r)] {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::invalid("dilution", format!("{name} = {v} outside [0, 1)")));
        }
    }
    let x_d = egr + x_r;
    if x_d >= 1.0 {
        return Err(Error::invalid("dilution", format!("X_d = {x_d} ≥ 1 is nonphysical")));
    }
    Ok(x_d)
}

/// Affine map from average intake-manifold conditions to IVC conditions.
/// The default is the identity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldToIvc {
    /// bar added to manifold pressure.
    pub p_offset: f64,
    /// K added to manifold temperature.
    pub t_offset: f64,
}

impl ManifoldToIvc {
    pub fn apply(&self, geom: &EngineGeometry, p_man: f64, t_man: f64) -> IvcState {
        IvcState::at_ivc(geom, p_man + self.p_offset, t_man + self.t_offset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Independent hand evaluation of the slider-crank relation at IVC
    // (scratch script, double precision).
    const V_IVC_TABLE1: f64 = 0.002_093_778_771_104_791_3;

    #[test]
    fn tdc_and_bdc_volumes() {
        let g = EngineGeometry::default();
        let vd = PI / 4.0 * 0.126 * 0.126 * 0.166;
        assert_relative_eq!(cylinder_volume(0.0, &g), vd / 16.0, max_relative = 1e-12);
        assert_relative_eq!(
            cylinder_volume(180.0, &g),
            17.0 * cylinder_volume(0.0, &g),
            max_relative = 1e-12
        );
        assert_relative_eq!(cylinder_volume(-180.0, &g), cylinder_volume(180.0, &g), max_relative = 1e-12);
        // Six cylinders make the quoted 12.4 L displacement.
        assert!((6.0 * vd * 1e3 - 12.42).abs() < 0.01);
    }

    #[test]
    fn volume_at_ivc_matches_hand_evaluation() {
        let g = EngineGeometry::default();
        assert_relative_eq!(g.v_ivc(), V_IVC_TABLE1, max_relative = 1e-12);
    }

    #[test]
    fn volume_is_periodic_and_minimal_at_tdc() {
        let g = EngineGeometry::default();
        let v0 = g.v0();
        for i in -3600..=3600 {
            let th = i as f64 * 0.1;
            let v = cylinder_volume(th, &g);
            assert!(v >= v0 * (1.0 - 1e-12));
            assert_relative_eq!(v, cylinder_volume(th + 720.0, &g), max_relative = 1e-9);
        }
    }

    #[test]
    fn polytropic_identity_at_ivc() {
        let g = EngineGeometry::default();
        let ivc = IvcState::at_ivc(&g, 2.3, 311.0);
        let (p, t) = polytropic_state(g.ivc_angle, &ivc, 1.176, &g).unwrap();
        assert_relative_eq!(p, 2.3, max_relative = 1e-14);
        assert_relative_eq!(t, 311.0, max_relative = 1e-14);
    }

    #[test]
    fn polytropic_volume_ratio_two() {
        let g = EngineGeometry::default();
        let v = cylinder_volume(-30.0, &g);
        let ivc = IvcState { p_ivc: 2.0, t_ivc: 300.0, v_ivc: 2.0 * v };
        let (p, t) = polytropic_state(-30.0, &ivc, 1.176, &g).unwrap();
        assert_relative_eq!(t, 300.0 * 2f64.powf(0.176), max_relative = 1e-12);
        assert_relative_eq!(p, 2.0 * 2f64.powf(1.176), max_relative = 1e-12);
    }

    #[test]
    fn isothermal_exponent_keeps_temperature() {
        let g = EngineGeometry::default();
        let ivc = IvcState::at_ivc(&g, 2.0, 300.0);
        for th in [-148.5, -90.0, 0.0, 45.0, 137.0] {
            let (_, t) = polytropic_state(th, &ivc, 1.0, &g).unwrap();
            assert_relative_eq!(t, 300.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn polytropic_rejects_open_valve_angles() {
        let g = EngineGeometry::default();
        let ivc = IvcState::at_ivc(&g, 2.0, 300.0);
        assert!(matches!(
            polytropic_state(-160.0, &ivc, 1.176, &g),
            Err(Error::OutOfSpan { .. })
        ));
        assert!(polytropic_state(140.0, &ivc, 1.176, &g).is_err());
    }

    #[test]
    fn equivalence_ratio_cases() {
        let stoich = MixtureState::new(1.0, AFR_STOICH_DIESEL, 0.0, 0.0).unwrap();
        assert_relative_eq!(equivalence_ratio(&stoich).unwrap(), 1.0, max_relative = 1e-14);

        // AFR 48.7 → lean bound of the experimental φ range (0.2971).
        let lean = MixtureState::new(1.0, 48.7, 0.0, 0.0).unwrap();
        let phi = equivalence_ratio(&lean).unwrap();
        assert!((phi - 0.2971).abs() < 5e-4, "{phi}");

        let motored = MixtureState::new(0.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(equivalence_ratio(&motored).unwrap(), 0.0);

        let no_air = MixtureState::new(1.0, 0.0, 0.0, 0.0).unwrap();
        assert!(equivalence_ratio(&no_air).is_err());
    }

    #[test]
    fn dilution_and_residuals() {
        assert_eq!(dilution_fraction(0.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(dilution_fraction(0.25, 0.0384).unwrap(), 0.2884, max_relative = 1e-14);
        assert!(dilution_fraction(0.6, 0.5).is_err());
        assert!(dilution_fraction(-0.1, 0.0).is_err());

        let mix = MixtureState::new(1e-4, 2e-3, 5e-4, 0.0).unwrap();
        assert_eq!(residual_fraction(&mix).unwrap(), 0.0);
        let mix = MixtureState::new(1e-4, 2e-3, 5e-4, 1e-4).unwrap();
        assert_relative_eq!(residual_fraction(&mix).unwrap(), 1e-4 / 2.6e-3, max_relative = 1e-12);
    }

    #[test]
    fn geometry_validation() {
        assert!(EngineGeometry::default().validate().is_ok());
        let bad = EngineGeometry { rod_length: 0.05, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = EngineGeometry { compression_ratio: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn geometry_toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("geom.toml");
        let g = EngineGeometry::default();
        std::fs::write(&path, toml::to_string(&g).unwrap()).unwrap();
        assert_eq!(EngineGeometry::from_toml_file(&path).unwrap(), g);

        std::fs::write(&path, "bore = 0.126\n").unwrap();
        assert!(EngineGeometry::from_toml_file(&path).is_err());
    }
}

//! Space-filling designs over a box of operating conditions.

use serde::{Deserialize, Serialize};

use crate::engine::{EngineGeometry, IvcState};
use crate::error::{Error, Result};
use crate::model::OperatingCondition;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn at(&self, u: f64) -> f64 {
        self.lo + (self.hi - self.lo) * u
    }

    pub fn mid(&self) -> f64 {
        self.at(0.5)
    }
}

/// Ranges of every input of an [`OperatingCondition`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionBox {
    pub n: Span,
    pub t_ivc: Span,
    pub p_ivc: Span,
    pub phi: Span,
    pub egr: Span,
    pub soi: Span,
    pub x_r: Span,
}

impl ConditionBox {
    /// Ranges of the 516-run simulation campaign, with SOI over ±5 CAD and
    /// a residual fraction band around the nominal estimate.
    pub const SIMULATION: ConditionBox = ConditionBox {
        n: Span::new(1200.0, 1500.0),
        t_ivc: Span::new(372.6, 413.9),
        p_ivc: Span::new(2.85, 4.38),
        phi: Span::new(0.5, 0.9),
        egr: Span::new(0.0, 0.5),
        soi: Span::new(-5.0, 5.0),
        x_r: Span::new(0.02, 0.06),
    };

    /// Default point count of [`halton_lattice`].
    pub const DEFAULT_POINTS: usize = 516;

    fn spans(&self) -> [Span; 7] {
        [self.n, self.t_ivc, self.p_ivc, self.phi, self.egr, self.soi, self.x_r]
    }

    pub fn validate(&self) -> Result<()> {
        let names = ["n", "t_ivc", "p_ivc", "phi", "egr", "soi", "x_r"];
        for (name, s) in names.iter().zip(self.spans()) {
            if !(s.lo.is_finite() && s.hi.is_finite() && s.lo <= s.hi) {
                return Err(Error::config(format!("grid.{name}"), "needs finite lo ≤ hi"));
            }
        }
        Ok(())
    }

    fn condition(&self, u: [f64; 7], geom: &EngineGeometry) -> OperatingCondition {
        let s = self.spans();
        OperatingCondition {
            n: s[0].at(u[0]),
            egr: s[4].at(u[4]),
            phi: s[3].at(u[3]),
            ivc: IvcState::at_ivc(geom, s[2].at(u[2]), s[1].at(u[1])),
            x_r: s[6].at(u[6]),
            soi: s[5].at(u[5]),
        }
    }

    /// Centre of the box.
    pub fn midpoint(&self, geom: &EngineGeometry) -> OperatingCondition {
        self.condition([0.5; 7], geom)
    }
}

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

const HALTON_BASES: [u64; 7] = [2, 3, 5, 7, 11, 13, 17];

/// `count` Halton points (indices 1..=count) mapped into the box.
pub fn halton_lattice(bounds: &ConditionBox, count: usize, geom: &EngineGeometry) -> Vec<OperatingCondition> {
    (1..=count as u64)
        .map(|i| bounds.condition(HALTON_BASES.map(|b| halton(i, b)), geom))
        .collect()
}

/// Full factorial grid with `levels` evenly spaced values per axis (one
/// level means the midpoint). Axes with `lo == hi` contribute one level.
pub fn factorial_grid(bounds: &ConditionBox, levels: usize, geom: &EngineGeometry) -> Result<Vec<OperatingCondition>> {
    if levels == 0 {
        return Err(Error::invalid("grid levels", "must be ≥ 1"));
    }
    let axis_levels: Vec<Vec<f64>> = bounds
        .spans()
        .iter()
        .map(|s| {
            if levels == 1 || s.lo == s.hi {
                vec![0.5]
            } else {
                (0..levels).map(|k| k as f64 / (levels - 1) as f64).collect()
            }
        })
        .collect();
    let total: usize = axis_levels.iter().map(Vec::len).product();
    let mut out = Vec::with_capacity(total);
    for mut flat in 0..total {
        let mut u = [0.0; 7];
        for axis in (0..7).rev() {
            let l = &axis_levels[axis];
            u[axis] = l[flat % l.len()];
            flat /= l.len();
        }
        out.push(bounds.condition(u, geom));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert_eq!(halton(3, 2), 0.75);
        assert!((halton(1, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((halton(5, 3) - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn lattice_stays_in_box() {
        let g = EngineGeometry::default();
        let b = ConditionBox::SIMULATION;
        let pts = halton_lattice(&b, ConditionBox::DEFAULT_POINTS, &g);
        assert_eq!(pts.len(), 516);
        for c in &pts {
            c.validate().unwrap();
            assert!((1200.0..=1500.0).contains(&c.n));
            assert!((372.6..=413.9).contains(&c.ivc.t_ivc));
            assert!((-5.0..=5.0).contains(&c.soi));
        }
    }

    #[test]
    fn single_level_is_midpoint() {
        let g = EngineGeometry::default();
        let b = ConditionBox::SIMULATION;
        let pts = factorial_grid(&b, 1, &g).unwrap();
        assert_eq!(pts, vec![b.midpoint(&g)]);
        assert_eq!(factorial_grid(&b, 2, &g).unwrap().len(), 128);
    }
}

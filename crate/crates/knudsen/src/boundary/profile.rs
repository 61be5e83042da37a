use crate::error::{Error, Result};
use crate::geometry::VelocityAnnulus;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// `M0 = 3 / (2 (v_max³ - v_min³))`, the constant profile with unit wall
/// flux `∫_{v·n≤0} |v·n| M0 dv = 1` in two dimensions.
pub fn normalize_profile(va: &VelocityAnnulus) -> f64 {
    1.5 / (va.v_max.powi(3) - va.v_min.powi(3))
}

/// How the wall profile varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ProfileMode {
    Constant,
    /// Per-edge linear tilt in speed: `M ∝ 1 + κ_e (α - v_mid) / (v_max - v_min)`
    /// with `|κ_e| < 2` so the profile stays positive.
    PerEdge { tilt: Vec<f64> },
}

/// Maxwell-type wall profile `M(r, v)`, depending on the edge and the speed.
///
/// Each edge is normalized in closed form so that the re-emitted flux
/// `∫_{v·n≤0} |v·n| M dv` equals one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxwellProfile {
    pub annulus: VelocityAnnulus,
    pub mode: ProfileMode,
    scale: Vec<f64>,
}

impl MaxwellProfile {
    pub fn constant(annulus: VelocityAnnulus) -> Self {
        Self {
            annulus,
            mode: ProfileMode::Constant,
            scale: vec![normalize_profile(&annulus)],
        }
    }

    pub fn per_edge(annulus: VelocityAnnulus, tilt: Vec<f64>) -> Result<Self> {
        if tilt.is_empty() || tilt.iter().any(|k| !k.is_finite() || k.abs() >= 2.0) {
            return Err(Error::InvalidInput("per-edge tilts must be finite with |κ| < 2".into()));
        }
        let (a, b) = (annulus.v_min, annulus.v_max);
        let mid = 0.5 * (a + b);
        let scale = tilt
            .iter()
            .map(|k| {
                let m3 = (b.powi(3) - a.powi(3)) / 3.0;
                let m4 = (b.powi(4) - a.powi(4)) / 4.0;
                let flux = 2.0 * (m3 + k / (b - a) * (m4 - mid * m3));
                1.0 / flux
            })
            .collect();
        Ok(Self {
            annulus,
            mode: ProfileMode::PerEdge { tilt },
            scale,
        })
    }

    pub fn from_mode(annulus: VelocityAnnulus, mode: ProfileMode) -> Result<Self> {
        match mode {
            ProfileMode::Constant => Ok(Self::constant(annulus)),
            ProfileMode::PerEdge { tilt } => Self::per_edge(annulus, tilt),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.mode, ProfileMode::Constant)
    }

    fn tilt(&self, edge: usize) -> f64 {
        match &self.mode {
            ProfileMode::Constant => 0.0,
            ProfileMode::PerEdge { tilt } => tilt[edge % tilt.len()],
        }
    }

    /// `M` at a point of `edge` for a velocity of the given speed.
    pub fn value(&self, edge: usize, speed: f64) -> f64 {
        let (a, b) = (self.annulus.v_min, self.annulus.v_max);
        match &self.mode {
            ProfileMode::Constant => self.scale[0],
            ProfileMode::PerEdge { .. } => {
                let k = self.tilt(edge);
                self.scale[edge % self.scale.len()] * (1.0 + k * (speed - 0.5 * (a + b)) / (b - a))
            }
        }
    }

    /// `(M_min, M_max)` over all edges and speeds.
    pub fn bounds(&self, n_edges: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for e in 0..n_edges {
            for s in [self.annulus.v_min, self.annulus.v_max] {
                let m = self.value(e, s);
                lo = lo.min(m);
                hi = hi.max(m);
            }
        }
        (lo, hi)
    }

    /// Draws a re-emission speed with density `∝ α² M(α)`: inverse CDF of
    /// the `α³` law, thinned by `M / M_max` when the profile is tilted.
    pub fn sample_speed<R: Rng + ?Sized>(&self, edge: usize, rng: &mut R) -> f64 {
        let (a3, b3) = (self.annulus.v_min.powi(3), self.annulus.v_max.powi(3));
        let draw = |rng: &mut R| (a3 + rng.gen::<f64>() * (b3 - a3)).cbrt();
        if self.is_constant() {
            return draw(rng);
        }
        let mmax = self.value(edge, self.annulus.v_min).max(self.value(edge, self.annulus.v_max));
        loop {
            let s = draw(rng);
            if rng.gen::<f64>() * mmax <= self.value(edge, s) {
                return s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flux_quadrature(m: &MaxwellProfile, edge: usize, n: usize) -> f64 {
        // ∫cos φ dφ over the half circle is 2; midpoint rule in speed.
        let (a, b) = (m.annulus.v_min, m.annulus.v_max);
        let h = (b - a) / n as f64;
        (0..n)
            .map(|i| {
                let s = a + (i as f64 + 0.5) * h;
                2.0 * s * s * m.value(edge, s) * h
            })
            .sum()
    }

    #[test]
    fn constant_profile_value() {
        let va = VelocityAnnulus::new(1.0, 2.0).unwrap();
        assert!((normalize_profile(&va) - 3.0 / 14.0).abs() < 1e-16);
        let m = MaxwellProfile::constant(va);
        assert!((flux_quadrature(&m, 0, 4000) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn tilted_profile_is_normalized() {
        let va = VelocityAnnulus::new(1.0, 2.0).unwrap();
        let m = MaxwellProfile::per_edge(va, vec![0.8, -0.5, 0.0, 1.5]).unwrap();
        for e in 0..4 {
            assert!((flux_quadrature(&m, e, 4000) - 1.0).abs() < 1e-7);
        }
        let (lo, hi) = m.bounds(4);
        assert!(lo > 0.0 && hi > lo);
    }
}

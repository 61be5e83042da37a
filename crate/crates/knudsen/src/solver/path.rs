use crate::error::{Error, Result};
use crate::transport::PhaseDensity;
use serde::Serialize;

/// Per-stamp summary of a density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StampStats {
    pub t: f64,
    pub mass: f64,
    pub l1: f64,
    pub ess_inf: f64,
    pub ess_sup: f64,
}

/// Densities at strictly increasing time stamps, piecewise constant in
/// time between them.
#[derive(Debug, Clone)]
pub struct TimedDensityPath {
    times: Vec<f64>,
    densities: Vec<PhaseDensity>,
    stats: Vec<StampStats>,
}

impl TimedDensityPath {
    pub fn new(t0: f64, p0: PhaseDensity) -> Self {
        let mut p = Self {
            times: Vec::new(),
            densities: Vec::new(),
            stats: Vec::new(),
        };
        p.times.push(t0);
        p.stats.push(stats_of(t0, &p0));
        p.densities.push(p0);
        p
    }

    /// `p(t) ≡ p0` at the given stamps.
    pub fn constant(times: &[f64], p0: &PhaseDensity) -> Result<Self> {
        let mut p = Self::new(times[0], p0.clone());
        for &t in &times[1..] {
            p.push(t, p0.clone())?;
        }
        Ok(p)
    }

    pub fn push(&mut self, t: f64, p: PhaseDensity) -> Result<()> {
        let last = *self.times.last().expect("path is never empty");
        if !(t > last) {
            return Err(Error::InvalidInput(format!("time stamps must increase: {t} after {last}")));
        }
        self.times.push(t);
        self.stats.push(stats_of(t, &p));
        self.densities.push(p);
        Ok(())
    }

    /// Appends `other`, whose first stamp must coincide with the last one
    /// here (that stamp is kept from `self`).
    pub fn extend_from(&mut self, other: TimedDensityPath) -> Result<()> {
        let last = *self.times.last().expect("path is never empty");
        if (other.times[0] - last).abs() > 1e-12 * last.abs().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "paths do not join: {} vs {last}",
                other.times[0]
            )));
        }
        for (t, p) in other.times.into_iter().zip(other.densities).skip(1) {
            self.push(t, p)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn densities(&self) -> &[PhaseDensity] {
        &self.densities
    }

    pub fn stats(&self) -> &[StampStats] {
        &self.stats
    }

    pub fn first(&self) -> &PhaseDensity {
        &self.densities[0]
    }

    pub fn last(&self) -> &PhaseDensity {
        self.densities.last().expect("path is never empty")
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("path is never empty")
    }

    /// Index of the last stamp `≤ t` (the first stamp for earlier `t`).
    pub fn index_at(&self, t: f64) -> usize {
        let tol = 1e-12 * t.abs().max(1.0);
        self.times.partition_point(|&s| s <= t + tol).saturating_sub(1)
    }

    /// `p(t)`, piecewise constant between stamps.
    pub fn at(&self, t: f64) -> &PhaseDensity {
        &self.densities[self.index_at(t)]
    }

    /// `‖p - q‖_{1,T} = max_t ‖p(t) - q(t)‖₁` over common stamps.
    pub fn dist(&self, other: &TimedDensityPath) -> f64 {
        assert_eq!(self.len(), other.len(), "paths with different stamps");
        self.densities
            .iter()
            .zip(&other.densities)
            .map(|(a, b)| a.l1_dist(b))
            .fold(0.0, f64::max)
    }

    /// `‖p‖_{1,T}`.
    pub fn sup_l1(&self) -> f64 {
        self.stats.iter().map(|s| s.l1).fold(0.0, f64::max)
    }
}

fn stats_of(t: f64, p: &PhaseDensity) -> StampStats {
    StampStats {
        t,
        mass: p.mass(),
        l1: p.l1(),
        ess_inf: p.ess_inf(),
        ess_sup: p.ess_sup(),
    }
}

//! Free transport with Maxwell walls: cell-push operators on a phase grid,
//! Monte Carlo particles, stationary states and envelopes.

mod grid;
mod mc;
mod push;

pub use grid::{PhaseDensity, PhaseGrid, SpatialCell, VelocityGrid};
pub use mc::{evolve_mc, McMode, McStats, Particle, ParticleEnsemble};
pub use push::{TransportOperator, WallQuadrature, WallRule};

use crate::boundary::MaxwellProfile;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Wall parameters for transport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportParams {
    pub omega: f64,
    pub profile: MaxwellProfile,
    /// Diffuse re-emissions followed within one push.
    pub depth: usize,
}

impl TransportParams {
    pub fn new(omega: f64, profile: MaxwellProfile) -> Result<Self> {
        if !(0.0..=1.0).contains(&omega) {
            return Err(Error::InvalidInput(format!("omega must lie in [0, 1], got {omega}")));
        }
        Ok(Self { omega, profile, depth: 16 })
    }

    pub fn operator(&self, grid: Arc<PhaseGrid>, delta: f64) -> Result<TransportOperator> {
        TransportOperator::build(grid, &self.profile, delta, WallRule::maxwell(self.omega), self.depth)
    }

    /// `S(-δ)`: reversed push with the inverse wall rule. Needs `ω > 0`.
    pub fn backward_operator(&self, grid: Arc<PhaseGrid>, delta: f64) -> Result<TransportOperator> {
        TransportOperator::build_reversed(grid, &self.profile, delta, WallRule::inverse(self.omega)?, self.depth)
    }
}

/// Result of [`evolve_series`].
#[derive(Debug, Clone)]
pub struct SeriesResult {
    pub density: PhaseDensity,
    pub steps: usize,
    pub max_lumped: f64,
    /// Set when more than 1% of some source's mass exceeded the diffuse
    /// depth in a step.
    pub depth_insufficient: bool,
}

/// Longest single push: one crossing of the domain at top speed.
pub fn max_push_time(grid: &PhaseGrid) -> f64 {
    grid.poly.diam() / grid.vel.annulus.v_max
}

/// `S(t) p₀` by the reflection series: specular images are followed
/// exactly, diffuse re-emission by wall quadrature up to `params.depth`
/// re-emissions per push. Long times are split into equal pushes of at
/// most [`max_push_time`].
pub fn evolve_series(p0: &PhaseDensity, t: f64, params: &TransportParams) -> Result<SeriesResult> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("time must be finite and >= 0, got {t}")));
    }
    let steps = ((t / max_push_time(&p0.grid)).ceil() as usize).max(1);
    let op = params.operator(p0.grid.clone(), t / steps as f64)?;
    Ok(SeriesResult {
        density: op.apply_n(p0, steps),
        steps,
        max_lumped: op.max_lumped,
        depth_insufficient: op.max_lumped > 0.01,
    })
}

/// Result of [`stationary_density`].
#[derive(Debug, Clone, Serialize)]
pub struct StationaryResult {
    #[serde(skip)]
    pub density: PhaseDensity,
    pub delta: f64,
    pub iterations: usize,
    /// `‖K ḡₙ - ḡₙ‖₁` per iteration.
    pub residuals: Vec<f64>,
    /// Fitted geometric decay rate of the residuals.
    pub rate: f64,
    /// Coefficient of determination of the log-linear fit.
    pub r_squared: f64,
}

/// The stationary density `ḡ` of `K(Δ)`: power iteration from the uniform
/// density, normalized to unit mass. `delta = None` uses
/// `Δ = diam / (2 v_max)`.
pub fn stationary_density(
    grid: Arc<PhaseGrid>,
    params: &TransportParams,
    delta: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<StationaryResult> {
    let delta = delta.unwrap_or(0.5 * max_push_time(&grid));
    let op = params.operator(grid.clone(), delta)?;
    stationary_of(&op, tol, max_iter)
}

/// Power iteration for the unit-mass fixed point of a mass-preserving `op`.
pub fn stationary_of(op: &TransportOperator, tol: f64, max_iter: usize) -> Result<StationaryResult> {
    let mut g = PhaseDensity::uniform(op.grid.clone());
    let mut residuals = Vec::new();
    for it in 0..max_iter {
        let next = op.apply(&g).normalized();
        let r = next.l1_dist(&g);
        residuals.push(r);
        g = next;
        if r <= tol {
            let (rate, r_squared) = geometric_fit(&residuals);
            return Ok(StationaryResult {
                density: g,
                delta: op.delta,
                iterations: it + 1,
                residuals,
                rate,
                r_squared,
            });
        }
    }
    Err(Error::NonConvergent(format!(
        "stationary iteration: residual {:.3e} after {max_iter} iterations",
        residuals.last().copied().unwrap_or(f64::NAN)
    )))
}

/// Least-squares fit of `log r_n = a + n log ρ` over the positive residuals
/// after the first; returns `(ρ, R²)`.
pub fn geometric_fit(res: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = res
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, r)| **r > 0.0)
        .map(|(i, r)| (i as f64, r.ln()))
        .collect();
    if pts.len() < 3 {
        return (0.0, 1.0);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope.exp(), r2)
}

/// Outcome of [`check_bound_preservation`].
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    /// `ess sup p₀/ḡ` and `ess inf p₀/ḡ`.
    pub a: f64,
    pub b: f64,
    pub times: Vec<f64>,
    /// Largest relative violation of `b ḡ ≤ S(t)p₀ ≤ a ḡ` at each time.
    pub violation: Vec<f64>,
    pub ess_inf: Vec<f64>,
    pub ess_sup: Vec<f64>,
    pub holds: bool,
}

/// Checks `b ḡ ≤ S(t) p₀ ≤ a ḡ` at multiples of `op.delta` (with `ḡ` the
/// fixed point of the same operator), which implies
/// `ess inf S(t)p₀ ≥ b ess inf ḡ` and `ess sup S(t)p₀ ≤ a ess sup ḡ`.
pub fn check_bound_preservation(
    p0: &PhaseDensity,
    gbar: &PhaseDensity,
    op: &TransportOperator,
    steps: &[usize],
    rel_tol: f64,
) -> BoundReport {
    let ratio = |i: usize| p0.values[i] / gbar.values[i];
    let a = (0..p0.values.len()).map(ratio).fold(f64::NEG_INFINITY, f64::max);
    let b = (0..p0.values.len()).map(ratio).fold(f64::INFINITY, f64::min);
    let mut rep = BoundReport {
        a,
        b,
        times: Vec::new(),
        violation: Vec::new(),
        ess_inf: Vec::new(),
        ess_sup: Vec::new(),
        holds: true,
    };
    let mut x = p0.values.clone();
    let mut done = 0;
    for &n in steps {
        while done < n {
            x = op.apply_values(&x);
            done += 1;
        }
        let mut viol: f64 = 0.0;
        for (xi, gi) in x.iter().zip(&gbar.values) {
            viol = viol.max((b * gi - xi) / gi).max((xi - a * gi) / gi);
        }
        let viol = viol.max(0.0) / a.abs().max(1e-300);
        rep.times.push(n as f64 * op.delta);
        rep.violation.push(viol);
        rep.ess_inf.push(x.iter().cloned().fold(f64::INFINITY, f64::min));
        rep.ess_sup.push(x.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        if viol > rel_tol {
            rep.holds = false;
        }
    }
    rep
}

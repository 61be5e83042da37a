//! Wall-space operators `A(μ)`, `B(μ)`, `a(μ)`, `X_μ`, the resolvent of the
//! transport generator, and the reversibility bounds.

mod constants;
mod ops;
mod resolvent;

pub use constants::SpectralConstants;
pub use ops::{weighted_norm, BoundaryOperatorContext, Regime, SeriesTerm, XOperator};
pub use resolvent::{b_mu_g, ray_integral, ResolventReport, TransportResolvent};

use crate::boundary::{BoundaryGrid, MaxwellProfile};
use crate::error::Result;
use crate::transport::{PhaseDensity, PhaseGrid, TransportParams};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;

/// Summary of the spectral regime for one `(ω, k0)`.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralSummary {
    pub omega: f64,
    pub k0: u32,
    pub omega_threshold: f64,
    pub m: f64,
    pub m1: f64,
    /// `μ` at which `X_μ` was assembled (`2 m1`).
    pub mu: f64,
    pub x_mu_bound: f64,
    pub x_mu_norm_at: f64,
    pub series_depth: usize,
    pub group_lower_bound: f64,
    pub window_t_max: f64,
}

/// Computes `m1` and the empirical `‖X_μ‖` at `μ = 2 m1`.
pub fn spectral_summary(grid: Arc<BoundaryGrid>, profile: &MaxwellProfile, consts: SpectralConstants) -> Result<SpectralSummary> {
    let m1 = consts.m1()?;
    let mu = 2.0 * m1;
    let ctx = BoundaryOperatorContext::new(grid, profile, consts, Complex64::new(mu, 0.0), 1e-10, 200)?;
    let x = ctx.x_operator()?;
    Ok(SpectralSummary {
        omega: consts.omega,
        k0: consts.k0,
        omega_threshold: consts.threshold(),
        m: consts.m(),
        m1,
        mu,
        x_mu_bound: consts.x_bound(mu),
        x_mu_norm_at: x.norm(),
        series_depth: ctx.depth,
        group_lower_bound: consts.group_lower_bound(),
        window_t_max: consts.window_t_max(),
    })
}

/// Outcome of [`group_lower_bound_check`].
#[derive(Debug, Clone, Serialize)]
pub struct GroupBoundReport {
    pub t: f64,
    pub bound: f64,
    pub norms: Vec<f64>,
    pub min_norm: f64,
    /// Seeds of the initial data violating `‖S(t)f₀‖₁ ≥ bound - tol`.
    pub violations: Vec<u64>,
}

/// Evolves `count` random signed unit-norm `f₀` to time `t` and checks
/// `‖S(t)f₀‖₁ ≥ (2ω^{k0} - 1) - tol`.
pub fn group_lower_bound_check(
    grid: Arc<PhaseGrid>,
    params: &TransportParams,
    consts: &SpectralConstants,
    t: f64,
    count: usize,
    seed: u64,
    tol: f64,
) -> Result<GroupBoundReport> {
    consts.check_threshold()?;
    let steps = ((t / crate::transport::max_push_time(&grid)).ceil() as usize).max(1);
    let op = params.operator(grid.clone(), t / steps as f64)?;
    let bound = consts.group_lower_bound();
    let mut norms = Vec::with_capacity(count);
    let mut violations = Vec::new();
    for i in 0..count {
        let s = seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let v = (0..grid.len()).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
        let mut f0 = PhaseDensity::from_values(grid.clone(), v);
        f0.scale(1.0 / f0.l1());
        let n = op.apply_n(&f0, steps).l1();
        if n < bound - tol {
            violations.push(s);
        }
        norms.push(n);
    }
    Ok(GroupBoundReport {
        t,
        bound,
        min_norm: norms.iter().cloned().fold(f64::INFINITY, f64::min),
        norms,
        violations,
    })
}

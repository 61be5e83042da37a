//! Mild solutions of the collisional equation: the Duhamel map `Ψ`, local
//! Picard solutions, chained forward solutions with their envelopes, the
//! characteristic form along rays, and implicit backward stepping.

mod backward;
mod characteristic;
mod forward;
mod path;
mod quadrature;

pub use backward::{solve_backward, BackwardReport, BackwardResult};
pub use characteristic::{characteristic_form_check, CharacteristicReport, RaySample};
pub use forward::{
    c_one_estimate, envelope_report, lambda_threshold, lower_envelope_profile, picard_local, picard_local_from, psi_map,
    solve_forward, EnvelopePoint, EnvelopeReport, ForwardResult, PicardReport, PicardResult, Propagator,
};
pub(crate) use forward::segment_length;
pub use path::{StampStats, TimedDensityPath};
pub use quadrature::{gamma_hat_weights, gauss_laguerre};

use crate::boundary::{BoundaryGrid, MaxwellProfile};
use crate::collision::{bound_b, CollisionOperator, KernelSpec, Mollifier};
use crate::error::{Error, Result};
use crate::spectral::{BoundaryOperatorContext, ResolventReport, SpectralConstants, TransportResolvent};
use crate::transport::{max_push_time, PhaseDensity, PhaseGrid, TransportOperator, TransportParams};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Everything the solvers need about the physical model on one grid.
#[derive(Debug, Clone)]
pub struct Model {
    pub grid: Arc<PhaseGrid>,
    pub transport: TransportParams,
    pub collision: CollisionOperator,
    /// Pointwise bound `b` of the Carleman integrand.
    pub b: f64,
}

impl Model {
    /// `b` is taken in closed form when the kernel family provides it,
    /// otherwise from the sampled supremum.
    pub fn new(
        grid: Arc<PhaseGrid>,
        transport: TransportParams,
        kernel: KernelSpec,
        mollifier: Mollifier,
        n_e: usize,
    ) -> Result<Self> {
        let b = match kernel.analytic_b() {
            Some(b) => b,
            None => bound_b(&kernel, &grid.vel.annulus, 1)?,
        };
        let collision = CollisionOperator::new(grid.clone(), kernel, mollifier, n_e)?;
        Ok(Self { grid, transport, collision, b })
    }

    /// `‖h_γ‖`.
    pub fn h_sup(&self) -> f64 {
        self.collision.mollifier.sup()
    }

    /// `‖B‖`.
    pub fn b_norm(&self) -> f64 {
        self.collision.kernel.sup_norm()
    }

    pub fn profile(&self) -> &MaxwellProfile {
        &self.transport.profile
    }
}

/// How `S(t_n) p₀` is formed in `Ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FreeFlight {
    /// `K(dt)ⁿ p₀`: one operator, cell averaging after every step.
    #[default]
    Compound,
    /// One push of length `t_n` per stamp: a single cell averaging.
    Direct,
}

/// Solver parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Upper bound on the length of a Picard segment.
    pub t_local: f64,
    /// Time stamps per segment (`dt = T_local / n_steps`).
    pub n_steps: usize,
    pub picard_tol: f64,
    pub max_picard: usize,
    /// Fraction of the local-existence threshold at which segments are
    /// sized: `λ = regime_fraction × threshold(T_local)`.
    pub regime_fraction: f64,
    pub free_flight: FreeFlight,
    /// Implicit backward step `μ`.
    pub backward_mu: f64,
    /// Spacing of the table of backward pushes of the initial density.
    pub backward_table_step: f64,
    /// Gauss–Laguerre nodes for `(id + μA)⁻¹` applied to collision terms.
    pub laguerre_nodes: usize,
    pub inner_tol: f64,
    pub max_inner: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            t_local: 1.0,
            n_steps: 32,
            picard_tol: 1e-10,
            max_picard: 60,
            regime_fraction: 0.5,
            free_flight: FreeFlight::Compound,
            backward_mu: 0.01,
            backward_table_step: 0.01,
            laguerre_nodes: 8,
            inner_tol: 1e-12,
            max_inner: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{what} must be > 0, got {x}")))
            }
        };
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        pos(self.t_local, "t_local")?;
        pos(self.picard_tol, "picard_tol")?;
        pos(self.backward_mu, "backward_mu")?;
        pos(self.backward_table_step, "backward_table_step")?;
        pos(self.inner_tol, "inner_tol")?;
        if !(self.regime_fraction > 0.0 && self.regime_fraction < 1.0) {
            return Err(Error::InvalidInput(format!(
                "regime_fraction must lie in (0, 1), got {}",
                self.regime_fraction
            )));
        }
        if self.n_steps == 0 || self.max_picard == 0 || self.max_inner == 0 || self.laguerre_nodes == 0 {
            return Err(Error::InvalidInput("step and iteration counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Pushes of total length `t`, split into equal pieces no longer than one
/// domain crossing. `backward` gives `S(-t)`.
pub fn push_chain(params: &TransportParams, grid: &Arc<PhaseGrid>, t: f64, backward: bool) -> Result<Vec<TransportOperator>> {
    if t == 0.0 {
        return Ok(Vec::new());
    }
    let pieces = ((t / max_push_time(grid)).ceil() as usize).max(1);
    let d = t / pieces as f64;
    let op = if backward {
        params.backward_operator(grid.clone(), d)?
    } else {
        params.operator(grid.clone(), d)?
    };
    Ok(vec![op; pieces])
}

pub(crate) fn apply_chain(chain: &[TransportOperator], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for op in chain {
        y = op.apply_values(&y);
    }
    y
}

/// Resolution of the wall grid used by [`transport_resolvent`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallResolution {
    pub n_s: usize,
    pub n_phi: usize,
    pub n_speed: usize,
}

impl Default for WallResolution {
    fn default() -> Self {
        Self { n_s: 16, n_phi: 16, n_speed: 4 }
    }
}

/// Result of [`transport_resolvent`].
#[derive(Debug, Clone)]
pub struct ResolventResult {
    /// Real part of `(μ - A)⁻¹g` at cell centroids and velocity nodes.
    pub f: PhaseDensity,
    pub report: ResolventReport,
    /// Relative residual of `μf + w·∇f - g` along rays.
    pub residual: f64,
}

/// `(μ - A)⁻¹ g` for real `μ` with `μ < m1` or `μ > 0`.
pub fn transport_resolvent(
    model: &Model,
    g: &PhaseDensity,
    mu: f64,
    consts: SpectralConstants,
    wall: WallResolution,
    tol: f64,
) -> Result<ResolventResult> {
    let grid = &model.grid;
    if mu <= 0.0 {
        let m1 = consts.m1()?;
        if mu >= m1 {
            return Err(Error::SeriesDivergent(format!("mu = {mu} lies in [m1, 0] = [{m1}, 0]")));
        }
    }
    let bg = Arc::new(BoundaryGrid::new(grid.poly.clone(), grid.vel.annulus, wall.n_s, wall.n_phi, wall.n_speed)?);
    let ctx = BoundaryOperatorContext::new(bg, model.profile(), consts, Complex64::new(mu, 0.0), 1e-10, 200)?;
    let r = TransportResolvent::new(&ctx, g, tol, 200)?;
    let values = r.values()?.into_iter().map(|z| z.re).collect();
    let residual = r.interior_residual(1e-5)?;
    Ok(ResolventResult {
        f: PhaseDensity::from_values(grid.clone(), values),
        report: r.report.clone(),
        residual,
    })
}

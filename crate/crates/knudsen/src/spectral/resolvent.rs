use super::ops::{BoundaryOperatorContext, XOperator};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryPoint, Vec2};
use crate::transport::{PhaseDensity, PhaseGrid};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

/// Pieces `(β₀, β₁, cell)` of the ray `r - βw`, `β ∈ [0, len]`, through the
/// spatial cells of `grid`.
fn ray_pieces(grid: &PhaseGrid, r: Vec2, w: Vec2, len: f64) -> Vec<(f64, f64, usize)> {
    let mut ts = vec![0.0, len];
    for (p, d, lo, h, n) in [(r.x, w.x, grid.lo.x, grid.h.x, grid.nx), (r.y, w.y, grid.lo.y, grid.h.y, grid.ny)] {
        if d.abs() < 1e-300 {
            continue;
        }
        for i in 1..n {
            let t = (p - (lo + i as f64 * h)) / d;
            if t > 0.0 && t < len {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.windows(2)
        .filter(|p| p[1] > p[0])
        .map(|p| (p[0], p[1], grid.locate(r - w * (0.5 * (p[0] + p[1])))))
        .collect()
}

/// `∫_{β₀}^{β₁} e^{-βμ} dβ`.
fn exp_integral(mu: C64, b0: f64, b1: f64) -> C64 {
    if mu.norm() * (b1 - b0) < 1e-8 {
        return (-mu * (0.5 * (b0 + b1))).exp() * (b1 - b0);
    }
    ((-mu * b0).exp() - (-mu * b1).exp()) / mu
}

/// `∫_0^len e^{-βμ} g(r - βw, w) dβ` for a piecewise-constant `g`.
pub fn ray_integral(g: &PhaseDensity, mu: C64, r: Vec2, w: Vec2, len: f64) -> C64 {
    let k = g.grid.vel.locate(w);
    ray_pieces(&g.grid, r, w, len)
        .into_iter()
        .map(|(b0, b1, c)| exp_integral(mu, b0, b1) * g.values[g.grid.state(c, k)])
        .sum()
}

/// `(b(μ)g)(x) = ∫_0^{T_Ω(x)} e^{-βμ} g(r - βw, w) dβ` at a wall state.
pub fn b_mu_g(g: &PhaseDensity, mu: C64, x: &BoundaryPoint, tau: f64) -> C64 {
    ray_integral(g, mu, x.position(&g.grid.poly), x.w, tau)
}

/// Diagnostics of a resolvent solve.
#[derive(Debug, Clone, Serialize)]
pub struct ResolventReport {
    pub mu: f64,
    pub series_depth: usize,
    /// Terms of the Neumann series `Σ X_μⁿ` used.
    pub x_terms: usize,
    /// Empirical `‖X_μ‖` on the wall grid.
    pub x_norm: f64,
    /// Residual of `f̃ = a(μ)f̃ + b(μ)g` at the wall nodes, relative to
    /// `|f̃| + |a(μ)f̃| + |b(μ)g|`.
    pub boundary_residual: f64,
}

/// `(μ - A)⁻¹g` for the transport generator with Maxwell walls.
///
/// Wall values solve `f̃ = a(μ)f̃ + b(μ)g` as
/// `f̃ = ψ₀ + X_μ f̃`, `ψ₀ = (id - A(μ))⁻¹ b(μ)g`, with the `X_μ` part
/// resolved on wall fluxes by a Neumann series; interior values follow
/// along rays from the downstream wall point:
/// `f(r - γw, w) = e^{γμ}(f̃(r, w) - ∫_0^γ e^{-βμ} g(r - βw, w) dβ)`.
pub struct TransportResolvent<'a> {
    pub ctx: &'a BoundaryOperatorContext,
    pub g: &'a PhaseDensity,
    /// Wall fluxes `J(f̃)` per arclength cell.
    pub flux: Vec<C64>,
    pub report: ResolventReport,
}

impl<'a> TransportResolvent<'a> {
    pub fn new(ctx: &'a BoundaryOperatorContext, g: &'a PhaseDensity, tol: f64, max_terms: usize) -> Result<Self> {
        let x = ctx.x_operator()?;
        let psi0 = (0..ctx.grid.len())
            .into_par_iter()
            .map(|i| psi0_at(ctx, g, &ctx.grid.node(i)))
            .collect::<Result<Vec<C64>>>()?;
        let source = ctx.flux_cells(&psi0);
        let (flux, x_terms) = neumann(&x, &source, tol, max_terms)?;
        let mut r = Self {
            ctx,
            g,
            flux,
            report: ResolventReport {
                mu: ctx.mu.re,
                series_depth: ctx.depth,
                x_terms,
                x_norm: x.norm(),
                boundary_residual: 0.0,
            },
        };
        r.report.boundary_residual = r.boundary_residual()?;
        Ok(r)
    }

    /// `f̃(x)` at an outgoing wall state.
    pub fn wall_value(&self, x: &BoundaryPoint) -> Result<C64> {
        let ctx = self.ctx;
        let w = ctx.omega();
        let mut acc = C64::new(0.0, 0.0);
        for t in ctx.terms(x)? {
            let b = (-ctx.mu * t.tau).exp() * ((1.0 - w) * ctx.profile_at(&t.next)) * self.flux[ctx.position_cell(&t.next)];
            acc += t.coef * (b_mu_g(self.g, ctx.mu, &t.state, t.tau) + b);
        }
        Ok(acc)
    }

    /// Downstream wall state of `(y, w)` and the distance `γ` to it.
    pub fn exit_of(&self, y: Vec2, w: Vec2) -> Result<(BoundaryPoint, f64)> {
        let hit = self.g.grid.poly.exit_time(y, -w)?;
        Ok((BoundaryPoint { edge: hit.edge, s: hit.s, w }, hit.t))
    }

    /// `f` at distance `gamma` upstream of the wall state `x` (whose wall
    /// value `fw = f̃(x)` is given).
    pub fn along_ray(&self, x: &BoundaryPoint, fw: C64, gamma: f64) -> C64 {
        let r = x.position(&self.g.grid.poly);
        (self.ctx.mu * gamma).exp() * (fw - ray_integral(self.g, self.ctx.mu, r, x.w, gamma))
    }

    /// `f(y, w)` at an interior point.
    pub fn value(&self, y: Vec2, w: Vec2) -> Result<C64> {
        let (x, gamma) = self.exit_of(y, w)?;
        Ok(self.along_ray(&x, self.wall_value(&x)?, gamma))
    }

    /// `f` at every cell centroid and velocity node.
    pub fn values(&self) -> Result<Vec<C64>> {
        let grid = &self.g.grid;
        (0..grid.len())
            .into_par_iter()
            .map(|s| {
                let (c, k) = grid.split(s);
                self.value(grid.cells[c].centroid, grid.vel.velocity(k))
            })
            .collect()
    }

    /// Relative `L¹` residual of `μf + w·∇f - g` at cell centroids and
    /// velocity nodes, with the derivative along each ray taken by central
    /// differences of step `h`.
    pub fn interior_residual(&self, h: f64) -> Result<f64> {
        let grid = &self.g.grid;
        let mu = self.ctx.mu;
        let parts = (0..grid.len())
            .into_par_iter()
            .map(|s| {
                let (c, k) = grid.split(s);
                let (y, w) = (grid.cells[c].centroid, grid.vel.velocity(k));
                let (x, gamma) = self.exit_of(y, w)?;
                let fw = self.wall_value(&x)?;
                let f0 = self.along_ray(&x, fw, gamma);
                let ahead = self.along_ray(&x, fw, gamma - h);
                let behind = self.along_ray(&x, fw, gamma + h);
                let res = mu * f0 + (ahead - behind) / (2.0 * h) - self.g.values[s];
                Ok((res.norm() * grid.measure(s), self.g.values[s].abs() * grid.measure(s)))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        let num: f64 = parts.iter().map(|p| p.0).sum();
        let den: f64 = parts.iter().map(|p| p.1).sum();
        Ok(num / den.max(f64::MIN_POSITIVE))
    }

    /// Residual of `f̃ - a(μ)f̃ - b(μ)g` at the wall nodes relative to the
    /// size of its three terms, with `a(μ)` applied pointwise (the flux part
    /// through the cell fluxes).
    fn boundary_residual(&self) -> Result<f64> {
        let ctx = self.ctx;
        let w = ctx.omega();
        let parts = (0..ctx.grid.len())
            .into_par_iter()
            .map(|i| {
                let x = ctx.grid.node(i);
                let (n, t) = super::ops::step(&ctx.grid.poly, &x, crate::geometry::Direction::Forward)?;
                let fx = self.wall_value(&x)?;
                let fn_ = self.wall_value(&n)?;
                let e = (-ctx.mu * t).exp();
                let a = e * w * fn_ + e * ((1.0 - w) * ctx.profile_at(&n)) * self.flux[ctx.position_cell(&n)];
                let bg = b_mu_g(self.g, ctx.mu, &x, t);
                let m = ctx.grid.measure(i);
                Ok(((fx - a - bg).norm() * m, (fx.norm() + a.norm() + bg.norm()) * m))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        let num: f64 = parts.iter().map(|p| p.0).sum();
        let den: f64 = parts.iter().map(|p| p.1).sum();
        Ok(num / den.max(f64::MIN_POSITIVE))
    }
}

fn psi0_at(ctx: &BoundaryOperatorContext, g: &PhaseDensity, x: &BoundaryPoint) -> Result<C64> {
    Ok(ctx
        .terms(x)?
        .iter()
        .fold(C64::new(0.0, 0.0), |acc, t| acc + t.coef * b_mu_g(g, ctx.mu, &t.state, t.tau)))
}

/// Solves `j = s + K_J j` by the Neumann series on wall fluxes. Fails when
/// the increments stop shrinking.
fn neumann(x: &XOperator, s: &[C64], tol: f64, max_terms: usize) -> Result<(Vec<C64>, usize)> {
    let n = x.n_pos;
    let k = x.flux_matrix();
    let norm = |v: &[C64]| v.iter().map(|z| z.norm()).sum::<f64>();
    let scale = norm(s).max(f64::MIN_POSITIVE);
    let mut j = s.to_vec();
    let mut term = s.to_vec();
    let mut prev = norm(&term);
    let mut growth = 0;
    for it in 1..=max_terms {
        let next: Vec<C64> = (0..n)
            .map(|r| (0..n).map(|c| k[r * n + c] * term[c]).sum())
            .collect();
        let size = norm(&next);
        for (a, b) in j.iter_mut().zip(&next) {
            *a += b;
        }
        if size <= tol * scale {
            return Ok((j, it));
        }
        growth = if size >= prev { growth + 1 } else { 0 };
        if growth >= 3 {
            return Err(Error::SeriesDivergent(format!(
                "Neumann series in X_mu stopped contracting after {it} terms"
            )));
        }
        prev = size;
        term = next;
    }
    Err(Error::SeriesDivergent(format!("Neumann series in X_mu not converged in {max_terms} terms")))
}

use super::constants::SpectralConstants;
use crate::boundary::{discrete_profile, BoundaryGrid, MaxwellProfile};
use crate::error::{Error, Result};
use crate::geometry::{billiard_step_with_time, BoundaryPoint, ConvexPolygon, Direction};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// One billiard step; rays through a vertex are rotated by a tiny angle
/// and retried.
pub(crate) fn step(poly: &ConvexPolygon, b: &BoundaryPoint, dir: Direction) -> Result<(BoundaryPoint, f64)> {
    let mut cur = *b;
    let mut jitter: f64 = 1e-10;
    for _ in 0..6 {
        match billiard_step_with_time(poly, &cur, dir) {
            Err(Error::DegenerateRay(_)) => {
                let (c, s) = (jitter.cos(), jitter.sin());
                cur.w = crate::geometry::Vec2::new(c * b.w.x - s * b.w.y, s * b.w.x + c * b.w.y);
                jitter *= 10.0;
            }
            r => return r,
        }
    }
    Err(Error::DegenerateRay(format!("billiard orbit stuck at edge {} s = {}", b.edge, b.s)))
}

/// Which branch of the `(id - A(μ))⁻¹` series converges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// `Re μ < m`: sum over `𝕋⁻ᵏ`.
    Backward,
    /// `Re μ > 0`: sum over `𝕋ᵏ`.
    Forward,
}

/// One term of `(id - A(μ))⁻¹ψ(x) = Σ coef · ψ(state)`, with the chord time
/// `tau = T_Ω(state)` and `next = 𝕋(state)` needed by `B(μ)`.
#[derive(Debug, Clone, Copy)]
pub struct SeriesTerm {
    pub coef: C64,
    pub state: BoundaryPoint,
    pub tau: f64,
    pub next: BoundaryPoint,
}

/// Boundary grid plus everything needed to apply `A(μ)`, `B(μ)`, `a(μ)`,
/// `(id - A(μ))⁻¹` and `X_μ = (id - A(μ))⁻¹ B(μ)` for one spectral
/// parameter `μ`.
#[derive(Debug, Clone)]
pub struct BoundaryOperatorContext {
    pub grid: Arc<BoundaryGrid>,
    pub consts: SpectralConstants,
    pub mu: C64,
    /// `None` when `Re μ ∈ [m, 0]`: only `A(μ)`, `B(μ)` and `a(μ)` apply.
    pub regime: Option<Regime>,
    /// Series terms kept per evaluation.
    pub depth: usize,
    /// True when the term bound did not reach the tolerance within `k_max`.
    pub depth_capped: bool,
    m_disc: Vec<f64>,
    /// `(𝕋(node), T_Ω(node))` per grid node.
    forward: Vec<(BoundaryPoint, f64)>,
}

impl BoundaryOperatorContext {
    pub fn new(
        grid: Arc<BoundaryGrid>,
        profile: &MaxwellProfile,
        consts: SpectralConstants,
        mu: C64,
        tol_series: f64,
        k_max: usize,
    ) -> Result<Self> {
        let (regime, depth, depth_capped) = if mu.re < consts.m() {
            match consts.backward_depth(mu.re, tol_series, usize::MAX) {
                Some(d) => (Some(Regime::Backward), d.min(k_max), d > k_max),
                None => (Some(Regime::Backward), k_max, true),
            }
        } else if mu.re > 0.0 {
            // Terms are bounded by ω^k e^{-k Re μ (1 - C_τ) c_τ / v_max}.
            let e = consts.omega.ln() - mu.re * (1.0 - consts.big_c_tau) * consts.c_tau / consts.v_max;
            let d = (tol_series.ln() / e).ceil().max(1.0);
            (Some(Regime::Forward), (d as usize).min(k_max), d > k_max as f64)
        } else {
            (None, 0, false)
        };
        let forward = (0..grid.len())
            .into_par_iter()
            .map(|i| step(&grid.poly, &grid.node(i), Direction::Forward))
            .collect::<Result<Vec<_>>>()?;
        let m_disc = discrete_profile(&grid, profile);
        Ok(Self {
            grid,
            consts,
            mu,
            regime,
            depth,
            depth_capped,
            m_disc,
            forward,
        })
    }

    pub fn omega(&self) -> f64 {
        self.consts.omega
    }

    /// Grid profile `M` at the wall state's edge and speed.
    pub fn profile_at(&self, b: &BoundaryPoint) -> f64 {
        self.m_disc[b.edge * self.grid.n_speed + self.grid.speed_index(b.w.norm())]
    }

    /// Arclength cell `edge * n_s + is` of a wall state.
    pub fn position_cell(&self, b: &BoundaryPoint) -> usize {
        let g = &self.grid;
        let is = ((b.s / g.ds(b.edge)) as isize).clamp(0, g.n_s as isize - 1) as usize;
        b.edge * g.n_s + is
    }

    pub fn n_positions(&self) -> usize {
        self.grid.poly.n_edges() * self.grid.n_s
    }

    /// Terms of the `(id - A(μ))⁻¹` series at `x`:
    /// backward `-Σ_{k≥1} ω^{-k} e^{μ Σ_{i=1}^k l_{-i}} ψ(𝕋⁻ᵏx)`,
    /// forward `Σ_{k≥0} ω^k e^{-μ Σ_{i=0}^{k-1} l_i} ψ(𝕋ᵏx)`.
    pub fn terms(&self, x: &BoundaryPoint) -> Result<Vec<SeriesTerm>> {
        let poly = &self.grid.poly;
        let w = self.omega();
        let mut out = Vec::with_capacity(self.depth);
        let Some(regime) = self.regime else {
            return Err(Error::SeriesDivergent(format!(
                "Re mu = {} lies in [m, 0] = [{}, 0]; (id - A(mu))^-1 has no convergent series",
                self.mu.re,
                self.consts.m()
            )));
        };
        match regime {
            Regime::Backward => {
                let mut prev = *x;
                let mut acc = 0.0;
                let mut wk = 1.0;
                for _ in 0..self.depth {
                    let (s, t) = step(poly, &prev, Direction::Inverse)?;
                    acc += t;
                    wk /= w;
                    out.push(SeriesTerm {
                        coef: -(self.mu * acc).exp() * wk,
                        state: s,
                        tau: t,
                        next: prev,
                    });
                    prev = s;
                }
            }
            Regime::Forward => {
                let mut cur = *x;
                let mut acc = 0.0;
                let mut wk = 1.0;
                for _ in 0..self.depth {
                    let (n, t) = step(poly, &cur, Direction::Forward)?;
                    out.push(SeriesTerm {
                        coef: (-self.mu * acc).exp() * wk,
                        state: cur,
                        tau: t,
                        next: n,
                    });
                    acc += t;
                    wk *= w;
                    cur = n;
                }
            }
        }
        Ok(out)
    }

    /// Interpolated value of a grid function at a wall state.
    pub fn eval(&self, f: &[C64], b: &BoundaryPoint) -> C64 {
        self.grid.interp_weights(b).iter().map(|&(i, w)| f[i] * w).sum()
    }

    /// `J` per arclength cell: `Σ_vel f · flux weight`.
    pub fn flux_cells(&self, f: &[C64]) -> Vec<C64> {
        let g = &self.grid;
        let nv = g.n_velocities();
        (0..self.n_positions())
            .map(|c| {
                (0..nv)
                    .map(|k| f[c * nv + k] * g.flux_weight(k / g.n_speed, k % g.n_speed))
                    .sum()
            })
            .collect()
    }

    /// `(A(μ)f)(x) = ω e^{-T_Ω(x) μ} f(𝕋x)` at the grid nodes.
    pub fn apply_a_mu(&self, f: &[C64]) -> Vec<C64> {
        let w = self.omega();
        self.forward
            .par_iter()
            .map(|(n, t)| (-self.mu * *t).exp() * w * self.eval(f, n))
            .collect()
    }

    /// `(B(μ)f)(x) = (1 - ω) e^{-T_Ω(x) μ} M(𝕋x) J(𝕋x)(f)` at the grid nodes.
    pub fn apply_b_mu(&self, f: &[C64]) -> Vec<C64> {
        let j = self.flux_cells(f);
        self.b_from_flux(&j)
    }

    fn b_from_flux(&self, j: &[C64]) -> Vec<C64> {
        let w = self.omega();
        self.forward
            .iter()
            .map(|(n, t)| (-self.mu * *t).exp() * ((1.0 - w) * self.profile_at(n)) * j[self.position_cell(n)])
            .collect()
    }

    /// `a(μ) = A(μ) + B(μ)`.
    pub fn apply_small_a(&self, f: &[C64]) -> Vec<C64> {
        let a = self.apply_a_mu(f);
        let b = self.apply_b_mu(f);
        a.into_iter().zip(b).map(|(x, y)| x + y).collect()
    }

    /// `(id - A(μ))⁻¹ψ` at `x`, with `psi` a pointwise function.
    pub fn invert_at(&self, x: &BoundaryPoint, psi: impl Fn(&BoundaryPoint) -> C64) -> Result<C64> {
        Ok(self.terms(x)?.iter().fold(C64::new(0.0, 0.0), |acc, t| acc + t.coef * psi(&t.state)))
    }

    /// `(id - A(μ))⁻¹ψ` at the grid nodes, `ψ` interpolated between nodes.
    pub fn solve_id_minus_a_mu(&self, psi: &[C64]) -> Result<Vec<C64>> {
        (0..self.grid.len())
            .into_par_iter()
            .map(|i| self.invert_at(&self.grid.node(i), |b| self.eval(psi, b)))
            .collect()
    }

    /// Relative residual `‖φ - A(μ)φ - ψ‖ / ‖ψ‖` of the pointwise solution
    /// `φ = (id - A(μ))⁻¹ψ̂` at the grid nodes (ψ̂ the interpolant of `psi`).
    pub fn id_minus_a_residual(&self, psi: &[C64]) -> Result<f64> {
        let w = self.omega();
        let res = (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let x = self.grid.node(i);
                let f = |b: &BoundaryPoint| self.eval(psi, b);
                let phi = self.invert_at(&x, f)?;
                let (n, t) = self.forward[i];
                let phi_n = self.invert_at(&n, f)?;
                Ok((phi - (-self.mu * t).exp() * w * phi_n - psi[i]).norm() * self.grid.measure(i))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(res.iter().sum::<f64>() / weighted_norm(&self.grid, psi).max(f64::MIN_POSITIVE))
    }

    /// `X_μ` in terms of wall fluxes: `(X_μ f)(x) = Σ_c K(x, c) J_c(f)`.
    pub fn x_operator(&self) -> Result<XOperator> {
        let w = self.omega();
        let rows = (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let mut row: Vec<(usize, C64)> = Vec::new();
                for t in self.terms(&self.grid.node(i))? {
                    let v = t.coef * (-self.mu * t.tau).exp() * ((1.0 - w) * self.profile_at(&t.next));
                    let c = self.position_cell(&t.next);
                    match row.iter_mut().find(|e| e.0 == c) {
                        Some(e) => e.1 += v,
                        None => row.push((c, v)),
                    }
                }
                row.sort_by_key(|e| e.0);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(XOperator {
            grid: self.grid.clone(),
            n_pos: self.n_positions(),
            rows,
        })
    }

    /// `(X_μ f)(x)` at an arbitrary wall state from the fluxes `j`.
    pub fn x_at(&self, x: &BoundaryPoint, j: &[C64]) -> Result<C64> {
        let w = self.omega();
        Ok(self.terms(x)?.iter().fold(C64::new(0.0, 0.0), |acc, t| {
            acc + t.coef * (-self.mu * t.tau).exp() * ((1.0 - w) * self.profile_at(&t.next)) * j[self.position_cell(&t.next)]
        }))
    }

    /// Relative defect of `(id - A(μ)) X_μ f = B(μ) f` at the grid nodes,
    /// i.e. of the factorization `id - a(μ) = (id - A(μ))(id - X_μ)`.
    pub fn factorization_defect(&self, f: &[C64]) -> Result<f64> {
        let j = self.flux_cells(f);
        let b = self.b_from_flux(&j);
        let w = self.omega();
        let d = (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let (n, t) = self.forward[i];
                let lhs = self.x_at(&self.grid.node(i), &j)? - (-self.mu * t).exp() * w * self.x_at(&n, &j)?;
                Ok(((lhs - b[i]).norm() * self.grid.measure(i), b[i].norm() * self.grid.measure(i)))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        let num: f64 = d.iter().map(|x| x.0).sum();
        let den: f64 = d.iter().map(|x| x.1).sum();
        Ok(num / den.max(f64::MIN_POSITIVE))
    }
}

/// Weighted norm `Σ |f| dN` of a complex grid function.
pub fn weighted_norm(grid: &BoundaryGrid, f: &[C64]) -> f64 {
    f.iter().enumerate().map(|(i, v)| v.norm() * grid.measure(i)).sum()
}

/// `X_μ` as rows over wall arclength cells.
#[derive(Debug, Clone)]
pub struct XOperator {
    pub grid: Arc<BoundaryGrid>,
    pub n_pos: usize,
    rows: Vec<Vec<(usize, C64)>>,
}

impl XOperator {
    /// `X_μ f` at the grid nodes from the fluxes `j = J(f)`.
    pub fn apply_flux(&self, j: &[C64]) -> Vec<C64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(c, v)| v * j[c]).sum())
            .collect()
    }

    /// Operator norm on the weighted `L¹` space: the largest weighted
    /// column sum `max_c Σ_x |K(x, c)| dN(x) / Δs_c`. Since `X_μ` factors
    /// through `J` and `Σ_c |J_c| Δs_c ≤ ‖f‖`, this is exact for the
    /// discretized operator.
    pub fn norm(&self) -> f64 {
        let g = &self.grid;
        let mut col = vec![0.0; self.n_pos];
        for (i, r) in self.rows.iter().enumerate() {
            let m = g.measure(i);
            for &(c, v) in r {
                col[c] += v.norm() * m;
            }
        }
        col.iter()
            .enumerate()
            .map(|(c, s)| s / g.ds(c / g.n_s))
            .fold(0.0, f64::max)
    }

    /// `X_μ` on fluxes: `K_J[c', c] = Σ_{x at c'} flux(x) K(x, c)`, row-major.
    pub fn flux_matrix(&self) -> Vec<C64> {
        let g = &self.grid;
        let nv = g.n_velocities();
        let mut m = vec![C64::new(0.0, 0.0); self.n_pos * self.n_pos];
        for (i, r) in self.rows.iter().enumerate() {
            let k = i % nv;
            let fw = g.flux_weight(k / g.n_speed, k % g.n_speed);
            let cp = i / nv;
            for &(c, v) in r {
                m[cp * self.n_pos + c] += v * fw;
            }
        }
        m
    }
}

use super::{apply_chain, gamma_hat_weights, gauss_laguerre, push_chain, Model, SolverConfig, TimedDensityPath};
use crate::error::{Error, Result};
use crate::spectral::SpectralConstants;
use crate::transport::{PhaseDensity, TransportOperator};
use rayon::prelude::*;
use serde::Serialize;

/// Diagnostics of a backward solve.
#[derive(Debug, Clone, Serialize)]
pub struct BackwardReport {
    pub mu_requested: f64,
    /// Step actually used: `|τ| / steps`.
    pub mu: f64,
    pub steps: usize,
    /// `(-m1 + 8λ‖h_γ‖‖B‖)⁻¹`, or half of `(8λ‖h_γ‖‖B‖)⁻¹` without `m1`.
    pub mu_bound: f64,
    pub m1: Option<f64>,
    /// Contraction constant of the inner map, `8λμ‖h_γ‖‖B‖ / (1 + μ m1)`.
    pub kappa: f64,
    pub inner_iterations: Vec<usize>,
    /// Largest ratio of successive inner increments above rounding level.
    pub inner_max_ratio: f64,
    pub table_step: f64,
    pub table_len: usize,
    pub min_value: f64,
    pub nonnegative: bool,
    /// `max_k |‖f_k‖₁ - ‖p₀‖₁|`.
    pub max_norm_defect: f64,
    pub c_one: f64,
    /// `(t, ess sup f(t), p_max exp(λ‖h_γ‖ b c¹ |t|))` per step.
    pub growth: Vec<(f64, f64, f64)>,
    pub growth_holds: bool,
}

#[derive(Debug, Clone)]
pub struct BackwardResult {
    /// Stamps `-n μ, …, -μ, 0`.
    pub path: TimedDensityPath,
    pub report: BackwardReport,
}

/// `(id + μA)⁻¹ x = ∫₀^∞ e^{-u} S(-μu) x du` by Gauss–Laguerre.
struct Resolvent {
    nodes: Vec<(f64, Vec<TransportOperator>)>,
}

impl Resolvent {
    fn new(model: &Model, mu: f64, n: usize) -> Result<Self> {
        let (x, w) = gauss_laguerre(n);
        let nodes = x
            .iter()
            .zip(&w)
            .map(|(&x, &w)| Ok((w, push_chain(&model.transport, &model.grid, mu * x, true)?)))
            .collect::<Result<_>>()?;
        Ok(Self { nodes })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let parts: Vec<Vec<f64>> = self.nodes.iter().map(|(_, ch)| apply_chain(ch, x)).collect();
        let mut out = vec![0.0; x.len()];
        for ((w, _), y) in self.nodes.iter().zip(&parts) {
            out.par_iter_mut().zip(y).for_each(|(o, y)| *o += w * y);
        }
        out
    }
}

/// `Q̃(f, f) = Q(f̃, f̃)` with `f̃ = f / (1 ∨ ‖f‖₁)`.
fn q_tilde(model: &Model, f: &PhaseDensity) -> Vec<f64> {
    let s = 1.0 / f.l1().max(1.0);
    let ft: Vec<f64> = f.values.iter().map(|x| x * s).collect();
    model.collision.apply_values_pp(&ft)
}

/// Density at `-|τ|` by `n` implicit steps `f + μ(Af + λQ̃(f, f)) = g`,
/// `μ = |τ|/n` with `n` the least count for which `μ ≤ cfg.backward_mu`.
///
/// The linear part `(id + μA)^{-k} p₀ = E[S(-G_k)] p₀`, `G_k ~ Γ(k, μ)`, is
/// assembled from a table of single backward pushes `S(-jh) p₀`. The
/// collision correction `c_k = f_k - (id + μA)^{-k} p₀` obeys
/// `c_k = (id + μA)⁻¹(c_{k-1} - μλ Q̃(f_k, f_k))` and is iterated to a fixed
/// point at each step.
pub fn solve_backward(
    model: &Model,
    p0: &PhaseDensity,
    tau: f64,
    cfg: &SolverConfig,
    consts: &SpectralConstants,
) -> Result<BackwardResult> {
    cfg.validate()?;
    if !(tau < 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("backward target time must be < 0, got {tau}")));
    }
    let poly = &model.grid.poly;
    if poly.xi_min() < std::f64::consts::FRAC_PI_2 - 1e-12 {
        return Err(Error::ShapeViolation(format!(
            "backward solver needs inner angles >= pi/2, smallest is {}",
            poly.xi_min()
        )));
    }
    consts.check_threshold()?;
    if model.transport.omega >= 1.0 {
        return Err(Error::InvalidInput("backward solver needs omega < 1".into()));
    }
    if p0.ess_inf() < 0.0 {
        return Err(Error::InvalidInput("initial density must be nonnegative".into()));
    }
    let lambda = cfg.lambda;
    let hb = model.h_sup() * model.b_norm();
    let m1 = consts.m1().ok();
    let mu_req = cfg.backward_mu;
    let mu_bound = match m1 {
        Some(m1) => 1.0 / (-m1 + 8.0 * lambda * hb),
        None => 0.5 / (8.0 * lambda * hb),
    };
    if mu_req >= mu_bound {
        return Err(Error::MuTooLarge { mu: mu_req, bound: mu_bound });
    }
    let t_abs = -tau;
    let steps = ((t_abs / mu_req - 1e-9).ceil() as usize).max(1);
    let mu = t_abs / steps as f64;
    let kappa = 8.0 * lambda * mu * hb / (1.0 + mu * m1.unwrap_or(0.0));

    // table of S(-jh) p₀ covering the Gamma tails
    let h = cfg.backward_table_step;
    let nf = steps as f64;
    let t_max = mu * (nf + 8.0 * nf.sqrt() + 8.0);
    let j_max = (t_max / h).ceil() as usize;
    let table: Vec<Vec<f64>> = (0..=j_max)
        .map(|j| {
            if j == 0 {
                Ok(p0.values.clone())
            } else {
                Ok(apply_chain(&push_chain(&model.transport, &model.grid, j as f64 * h, true)?, &p0.values))
            }
        })
        .collect::<Result<_>>()?;
    let resolvent = Resolvent::new(model, mu, cfg.laguerre_nodes)?;

    let len = p0.values.len();
    let mut fs = vec![p0.clone()];
    let mut corr = vec![0.0; len];
    let mut inner_iterations = Vec::with_capacity(steps);
    let mut inner_max_ratio: f64 = 0.0;
    for k in 1..=steps {
        let w = gamma_hat_weights(k, mu, h, j_max);
        let mut lin = vec![0.0; len];
        for (wj, tj) in w.iter().zip(&table) {
            if *wj != 0.0 {
                lin.par_iter_mut().zip(tj).for_each(|(l, t)| *l += wj * t);
            }
        }
        let rc = resolvent.apply(&corr);
        let g: Vec<f64> = lin.iter().zip(&rc).map(|(l, c)| l + c).collect();
        let mut f = p0.with_values(g.clone());
        let mut iters = 0;
        if lambda > 0.0 {
            let mut prev_inc = f64::INFINITY;
            let mut above = 0;
            loop {
                iters += 1;
                let rq = resolvent.apply(&q_tilde(model, &f));
                let next = p0.with_values(g.iter().zip(&rq).map(|(g, q)| g - mu * lambda * q).collect());
                let inc = next.l1_dist(&f);
                f = next;
                if inc <= cfg.inner_tol {
                    break;
                }
                if prev_inc.is_finite() && prev_inc > 1e-13 {
                    let ratio = inc / prev_inc;
                    inner_max_ratio = inner_max_ratio.max(ratio);
                    above = if ratio >= 1.0 { above + 1 } else { 0 };
                    if above >= 3 {
                        return Err(Error::InnerNonContractive(format!(
                            "increment ratio {ratio:.3e} >= 1 for 3 iterations at step {k}"
                        )));
                    }
                }
                if iters >= cfg.max_inner {
                    return Err(Error::NonConvergent(format!(
                        "inner iteration at step {k}: increment {inc:.3e} after {iters} iterations"
                    )));
                }
                prev_inc = inc;
            }
        }
        inner_iterations.push(iters);
        corr = f.values.iter().zip(&lin).map(|(f, l)| f - l).collect();
        fs.push(f);
    }

    let c_one = backward_c_one(model, h, (t_abs / h).ceil() as usize)?;
    let (p_max, l0) = (p0.ess_sup(), p0.l1());
    let growth: Vec<(f64, f64, f64)> = fs
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let t = k as f64 * mu;
            (-t, f.ess_sup(), p_max * (lambda * model.h_sup() * model.b * c_one * t).exp())
        })
        .collect();
    let min_value = fs.iter().map(|f| f.ess_inf()).fold(f64::INFINITY, f64::min);
    let max_norm_defect = fs.iter().map(|f| (f.l1() - l0).abs()).fold(0.0, f64::max);
    let report = BackwardReport {
        mu_requested: mu_req,
        mu,
        steps,
        mu_bound,
        m1,
        kappa,
        inner_iterations,
        inner_max_ratio,
        table_step: h,
        table_len: table.len(),
        min_value,
        nonnegative: min_value >= 0.0,
        max_norm_defect,
        c_one,
        growth_holds: growth.iter().all(|(_, s, e)| s <= e),
        growth,
    };
    let mut path = TimedDensityPath::new(-(steps as f64) * mu, fs.pop().expect("at least one step"));
    for k in (0..steps).rev() {
        path.push(-(k as f64) * mu, fs.pop().expect("one density per step"))?;
    }
    Ok(BackwardResult { path, report })
}

/// `max ‖S(±τ)𝟙‖_∞` over stamps `k h`, `k ≤ n`, in both time directions.
fn backward_c_one(model: &Model, h: f64, n: usize) -> Result<f64> {
    let fwd = push_chain(&model.transport, &model.grid, h, false)?;
    let bwd = push_chain(&model.transport, &model.grid, h, true)?;
    let mut c: f64 = 1.0;
    for chain in [&fwd, &bwd] {
        let mut x = vec![1.0; model.grid.len()];
        for _ in 0..n {
            x = apply_chain(chain, &x);
            c = c.max(x.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
    }
    Ok(c)
}

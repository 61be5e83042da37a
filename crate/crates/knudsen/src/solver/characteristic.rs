use super::{apply_chain, push_chain, Model, TimedDensityPath};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::transport::{PhaseDensity, PhaseGrid, TransportOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// One sampled ray `s ↦ (r - s v, t - s)`, `s ∈ [0, τ]`.
#[derive(Debug, Clone, Serialize)]
pub struct RaySample {
    pub r: [f64; 2],
    pub v: [f64; 2],
    pub t: f64,
    pub tau: f64,
    /// `p(r - τv, v, t - τ)`.
    pub lhs: f64,
    /// `ψ(τ) (p(r, v, t) - ∫₀^τ λQ⁺/ψ ds)`.
    pub rhs: f64,
    pub residual: f64,
    /// Discretization error of the grid along the same ray.
    pub estimate: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CharacteristicReport {
    pub samples: Vec<RaySample>,
    pub mean_residual: f64,
    pub mean_estimate: f64,
    /// `mean_residual / mean_estimate`.
    pub ratio: f64,
    /// `exp(∓λ (T_m ∧ T) ‖h_γ‖‖B‖)`.
    pub psi_lower: f64,
    pub psi_upper: f64,
    pub psi_bounds_hold: bool,
}

/// Piecewise-constant lookup.
fn lookup(p: &PhaseDensity, x: Vec2, k: usize) -> f64 {
    p.values[p.grid.state(p.grid.locate(x), k)]
}

/// Bilinear lookup between cell centroids of a regular grid, falling back
/// to the containing cell next to dropped cells.
fn lookup_bilinear(p: &PhaseDensity, x: Vec2, k: usize) -> f64 {
    let g: &PhaseGrid = &p.grid;
    let fx = ((x.x - g.lo.x) / g.h.x - 0.5).clamp(0.0, (g.nx - 1) as f64);
    let fy = ((x.y - g.lo.y) / g.h.y - 0.5).clamp(0.0, (g.ny - 1) as f64);
    let (ix, iy) = ((fx.floor() as usize).min(g.nx.saturating_sub(2)), (fy.floor() as usize).min(g.ny.saturating_sub(2)));
    let (ax, ay) = (fx - ix as f64, fy - iy as f64);
    let mut acc = 0.0;
    for (dx, dy, w) in [(0, 0, (1.0 - ax) * (1.0 - ay)), (1, 0, ax * (1.0 - ay)), (0, 1, (1.0 - ax) * ay), (1, 1, ax * ay)] {
        match g.cell_at(ix + dx, iy + dy) {
            Some(c) if g.cells[c].full => acc += w * p.values[g.state(c, k)],
            _ => return lookup(p, x, k),
        }
    }
    acc
}

/// Checks the integrating-factor form of the mild equation along random
/// rays of a path:
/// `p(r - τv, v, t - τ) = ψ(τ)(p(r, v, t) - ∫₀^τ λQ⁺(s)/ψ(s) ds)` with
/// `ψ(s) = exp ∫₀^s λ L`, where `Q⁺` is the gain and `L` the loss rate at
/// `(r - s v, v, t - s)`. Integrals use the trapezoid rule on the stamps;
/// each ray spans equally spaced stamps.
///
/// The per-ray error estimate is the defect of grid transport on the same
/// ray, `|[S_h(τ) p(t - τ)](r) - p(r - τv, t - τ)|`, plus the gap between
/// constant and bilinear lookup at both ends.
pub fn characteristic_form_check(
    model: &Model,
    path: &TimedDensityPath,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<CharacteristicReport> {
    let times = path.times();
    let n = times.len() - 1;
    if n == 0 {
        return Err(Error::InvalidInput("path needs at least two stamps".into()));
    }
    let grid = &model.grid;
    let poly = &grid.poly;
    // stamps back from i over which the spacing stays equal to the last gap
    let uniform_run = |i: usize| {
        let dt = times[i] - times[i - 1];
        (1..=i).take_while(|&j| ((times[i - j + 1] - times[i - j]) - dt).abs() <= 1e-9 * dt).count()
    };
    let mut steps: Vec<(f64, Vec<TransportOperator>)> = Vec::new();
    let split: Vec<_> = path.densities().iter().map(|p| model.collision.split_q(p)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = poly.bbox();
    let mut out = Vec::with_capacity(samples);
    let mut attempts = 0usize;
    while out.len() < samples {
        attempts += 1;
        if attempts > 1000 * samples.max(1) {
            return Err(Error::InvalidInput("no admissible rays found".into()));
        }
        let r = Vec2::new(lo.x + rng.gen::<f64>() * (hi.x - lo.x), lo.y + rng.gen::<f64>() * (hi.y - lo.y));
        if !poly.contains(r) {
            continue;
        }
        let k = rng.gen_range(0..grid.n_v());
        let v = grid.vel.velocity(k);
        let i_t = rng.gen_range(1..=n);
        let dt = times[i_t] - times[i_t - 1];
        let exit = poly.exit_time(r, -v)?.t;
        let m_max = ((exit / dt).floor() as usize).min(uniform_run(i_t));
        if m_max == 0 {
            continue;
        }
        let m = rng.gen_range(1..=m_max);
        let at = |i: usize| r - v * (i as f64 * dt);
        // ψ and the gain integral along the ray, stamp i_t - i at s = i dt
        let mut log_psi = 0.0;
        let mut gain_int = 0.0;
        let mut prev_l = lookup(&split[i_t].loss_rate, r, k);
        let mut prev_g = lookup(&split[i_t].gain, r, k);
        for i in 1..=m {
            let (x, j) = (at(i), i_t - i);
            let l = lookup(&split[j].loss_rate, x, k);
            let g = lookup(&split[j].gain, x, k);
            let new_log = log_psi + 0.5 * lambda * dt * (prev_l + l);
            gain_int += 0.5 * lambda * dt * (prev_g * (-log_psi).exp() + g * (-new_log).exp());
            log_psi = new_log;
            prev_l = l;
            prev_g = g;
        }
        let psi = log_psi.exp();
        let (p_t, p_back) = (&path.densities()[i_t], &path.densities()[i_t - m]);
        let lhs = lookup(p_back, at(m), k);
        let rhs = psi * (lookup(p_t, r, k) - gain_int);
        let si = match steps.iter().position(|(d, _)| (d - dt).abs() <= 1e-12 * dt) {
            Some(i) => i,
            None => {
                steps.push((dt, push_chain(&model.transport, grid, dt, false)?));
                steps.len() - 1
            }
        };
        let mut pushed = p_back.values.clone();
        for _ in 0..m {
            pushed = apply_chain(&steps[si].1, &pushed);
        }
        let transport_defect = (pushed[grid.state(grid.locate(r), k)] - lhs).abs();
        let lookup_gap =
            (lookup(p_t, r, k) - lookup_bilinear(p_t, r, k)).abs() + (lhs - lookup_bilinear(p_back, at(m), k)).abs();
        out.push(RaySample {
            r: [r.x, r.y],
            v: [v.x, v.y],
            t: times[i_t],
            tau: m as f64 * dt,
            lhs,
            rhs,
            residual: (lhs - rhs).abs(),
            estimate: transport_defect + lookup_gap,
            psi,
        });
    }
    let t_m = poly.diam() / grid.vel.annulus.v_min;
    let horizon = t_m.min(path.t_end() - path.t_start());
    let e = lambda * horizon * model.h_sup() * model.b_norm();
    let (psi_lower, psi_upper) = ((-e).exp(), e.exp());
    let tol = 1e-12;
    let psi_bounds_hold = out.iter().all(|s| s.psi >= psi_lower - tol && s.psi <= psi_upper + tol);
    let cnt = out.len().max(1) as f64;
    let mean_residual = out.iter().map(|s| s.residual).sum::<f64>() / cnt;
    let mean_estimate = out.iter().map(|s| s.estimate).sum::<f64>() / cnt;
    Ok(CharacteristicReport {
        samples: out,
        mean_residual,
        mean_estimate,
        ratio: if mean_estimate > 0.0 { mean_residual / mean_estimate } else { 0.0 },
        psi_lower,
        psi_upper,
        psi_bounds_hold,
    })
}

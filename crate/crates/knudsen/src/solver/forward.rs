use super::{apply_chain, push_chain, FreeFlight, Model, SolverConfig, TimedDensityPath};
use crate::error::{Error, Result};
use crate::transport::{PhaseDensity, TransportOperator, WallRule};
use serde::Serialize;

/// Transport pieces for one segment of `n_steps` stamps spaced `dt`.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub dt: f64,
    pub n_steps: usize,
    pub mode: FreeFlight,
    step: Vec<TransportOperator>,
    /// `direct[n - 1]` realizes `S(n dt)` in one cell averaging.
    direct: Vec<Vec<TransportOperator>>,
}

impl Propagator {
    pub fn new(model: &Model, dt: f64, n_steps: usize, mode: FreeFlight) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || n_steps == 0 {
            return Err(Error::InvalidInput(format!("bad time grid: dt = {dt}, n_steps = {n_steps}")));
        }
        let step = push_chain(&model.transport, &model.grid, dt, false)?;
        let direct = match mode {
            FreeFlight::Compound => Vec::new(),
            FreeFlight::Direct => (1..=n_steps)
                .map(|n| push_chain(&model.transport, &model.grid, n as f64 * dt, false))
                .collect::<Result<_>>()?,
        };
        Ok(Self { dt, n_steps, mode, step, direct })
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    /// `S(dt) x`.
    pub fn step(&self, x: &[f64]) -> Vec<f64> {
        apply_chain(&self.step, x)
    }

    /// `S(n dt) p₀` for `n = 0..=n_steps`.
    pub fn free_flight(&self, p0: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![p0.to_vec()];
        for n in 1..=self.n_steps {
            let next = match self.mode {
                FreeFlight::Compound => self.step(&out[n - 1]),
                FreeFlight::Direct => apply_chain(&self.direct[n - 1], p0),
            };
            out.push(next);
        }
        out
    }
}

/// `Ψ(p₀, p)` at the stamps of `path`, given the free flight `S(t_n) p₀`.
///
/// Trapezoid in time: `W_n = Σ_{j<n} c_j S(t_n - t_j) Q_j` obeys
/// `W_n = S(dt)(W_{n-1} + c_{n-1} Q_{n-1})` with `c_0 = ½`, `c_j = 1`.
fn psi_with(model: &Model, prop: &Propagator, lambda: f64, free: &[Vec<f64>], path: &TimedDensityPath) -> Result<TimedDensityPath> {
    let n = prop.n_steps;
    if path.len() != n + 1 || free.len() != n + 1 {
        return Err(Error::InvalidInput(format!(
            "path has {} stamps, propagator expects {}",
            path.len(),
            n + 1
        )));
    }
    let dens = path.densities();
    let t0 = path.t_start();
    let p0 = dens[0].with_values(free[0].clone());
    if lambda == 0.0 {
        let mut out = TimedDensityPath::new(t0, p0);
        for (j, f) in free.iter().enumerate().skip(1) {
            out.push(path.times()[j], dens[0].with_values(f.clone()))?;
        }
        return Ok(out);
    }
    let mut out = TimedDensityPath::new(t0, p0);
    let len = free[0].len();
    let mut w = vec![0.0; len];
    let mut q_prev = model.collision.apply_values_pp(&dens[0].values);
    for j in 1..=n {
        let c = if j == 1 { 0.5 } else { 1.0 };
        let acc: Vec<f64> = w.iter().zip(&q_prev).map(|(w, q)| w + c * q).collect();
        w = prop.step(&acc);
        let q = model.collision.apply_values_pp(&dens[j].values);
        let ld = lambda * prop.dt;
        let vals = free[j]
            .iter()
            .zip(w.iter().zip(&q))
            .map(|(f, (w, q))| f + ld * (w + 0.5 * q))
            .collect();
        out.push(path.times()[j], dens[j].with_values(vals))?;
        q_prev = q;
    }
    Ok(out)
}

/// `Ψ(p₀, p)(t) = S(t) p₀ + λ ∫₀ᵗ S(t - s) Q(p, p)(s) ds` at the stamps of
/// `path`, which must be those of `prop` starting at `path.t_start()`.
pub fn psi_map(model: &Model, prop: &Propagator, lambda: f64, p0: &PhaseDensity, path: &TimedDensityPath) -> Result<TimedDensityPath> {
    let free = prop.free_flight(&p0.values);
    psi_with(model, prop, lambda, &free, path)
}

/// The largest `λ` for which local Picard existence holds on `[0, t]`:
/// `(3/4) p_min / (t ‖h_γ‖ b (p_max + ½ p_min) c¹_t)`.
pub fn lambda_threshold(model: &Model, p_min: f64, p_max: f64, t: f64, c_one: f64) -> f64 {
    0.75 * p_min / (t * model.h_sup() * model.b * (p_max + 0.5 * p_min) * c_one)
}

/// Estimate of `c¹ = sup_{τ ≤ n dt} ‖S(τ)𝟙‖_∞` from the stamps `k dt`.
pub fn c_one_estimate(model: &Model, dt: f64, n: usize) -> Result<f64> {
    let chain = push_chain(&model.transport, &model.grid, dt, false)?;
    let mut x = vec![1.0; model.grid.len()];
    let mut c: f64 = 1.0;
    for _ in 0..n {
        x = apply_chain(&chain, &x);
        c = c.max(x.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(c)
}

/// `c̃_{k dt} = ess inf S_low(k dt)𝟙` for `k = 0..=n`, where `S_low` keeps
/// only the diffuse re-emission with the profile replaced by its minimum.
pub fn lower_envelope_profile(model: &Model, dt: f64, n: usize) -> Result<Vec<f64>> {
    let rule = WallRule::lower_envelope(model.transport.omega);
    let op = TransportOperator::build(model.grid.clone(), model.profile(), dt, rule, model.transport.depth)?;
    let mut x = vec![1.0; model.grid.len()];
    let mut out = vec![1.0];
    for _ in 0..n {
        x = op.apply_values(&x);
        out.push(x.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    Ok(out)
}

/// Diagnostics of one local Picard solve.
#[derive(Debug, Clone, Serialize)]
pub struct PicardReport {
    pub t_start: f64,
    pub t_local: f64,
    pub dt: f64,
    pub iterations: usize,
    /// `‖p_{k+1} - p_k‖_{1,T}` per iteration.
    pub residuals: Vec<f64>,
    /// Successive residual ratios.
    pub ratios: Vec<f64>,
    /// Largest ratio among iterations above rounding level.
    pub max_ratio: f64,
    /// Contraction constant `δ = 4λT‖h_γ‖‖B‖`.
    pub delta: f64,
    pub lambda_threshold: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub c_one: f64,
    pub min_value: f64,
    pub max_value: f64,
    /// `½p_min ≤ p ≤ p_max + ½p_min` at every stamp.
    pub sandwich_holds: bool,
    /// `max_t |‖p(t)‖₁ - ‖p₀‖₁|`.
    pub norm_defect: f64,
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    pub path: TimedDensityPath,
    pub report: PicardReport,
}

/// Residuals below this multiple of the path norm are rounding noise and
/// are left out of the ratio test.
const RATIO_FLOOR: f64 = 1e-13;

/// Fixed point of `Ψ(p₀, ·)` on the stamps of `prop`, starting from
/// `guess`.
pub fn picard_local_from(
    model: &Model,
    prop: &Propagator,
    p0: &PhaseDensity,
    guess: &TimedDensityPath,
    cfg: &SolverConfig,
    c_one: f64,
) -> Result<PicardResult> {
    cfg.validate()?;
    let t = prop.horizon();
    let (p_min, p_max) = (p0.ess_inf(), p0.ess_sup());
    let lambda = cfg.lambda;
    let threshold = if lambda > 0.0 {
        if p_min <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "initial density must be bounded below by a positive constant, ess inf = {p_min}"
            )));
        }
        lambda_threshold(model, p_min, p_max, t, c_one)
    } else {
        f64::INFINITY
    };
    if lambda >= threshold {
        return Err(Error::LambdaTooLarge { lambda, threshold });
    }
    let delta = 4.0 * lambda * t * model.h_sup() * model.b_norm();
    let free = prop.free_flight(&p0.values);
    let mut cur = guess.clone();
    let mut residuals = Vec::new();
    let mut ratios = Vec::new();
    let mut max_ratio: f64 = 0.0;
    let mut above = 0;
    let scale = p0.l1().max(f64::MIN_POSITIVE);
    let mut converged = false;
    for _ in 0..cfg.max_picard {
        let next = psi_with(model, prop, lambda, &free, &cur)?;
        let r = next.dist(&cur);
        if let Some(&prev) = residuals.last() {
            let prev: f64 = prev;
            if prev > RATIO_FLOOR * scale && r > RATIO_FLOOR * scale {
                let ratio = r / prev;
                ratios.push(ratio);
                max_ratio = max_ratio.max(ratio);
                above = if ratio > delta { above + 1 } else { 0 };
                if above >= 3 {
                    return Err(Error::NonContractive(format!(
                        "residual ratio {ratio:.3e} above delta = {delta:.3e} for 3 iterations"
                    )));
                }
            }
        }
        residuals.push(r);
        cur = next;
        if r <= cfg.picard_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergent(format!(
            "Picard residual {:.3e} after {} iterations",
            residuals.last().copied().unwrap_or(f64::NAN),
            cfg.max_picard
        )));
    }
    let stats = cur.stats();
    let min_value = stats.iter().map(|s| s.ess_inf).fold(f64::INFINITY, f64::min);
    let max_value = stats.iter().map(|s| s.ess_sup).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * p_max.abs().max(1.0);
    let sandwich_holds = min_value >= 0.5 * p_min - tol && max_value <= p_max + 0.5 * p_min + tol;
    let l0 = p0.l1();
    let norm_defect = stats.iter().map(|s| (s.l1 - l0).abs()).fold(0.0, f64::max);
    let report = PicardReport {
        t_start: cur.t_start(),
        t_local: t,
        dt: prop.dt,
        iterations: residuals.len(),
        residuals,
        ratios,
        max_ratio,
        delta,
        lambda_threshold: threshold,
        p_min,
        p_max,
        c_one,
        min_value,
        max_value,
        sandwich_holds,
        norm_defect,
    };
    Ok(PicardResult { path: cur, report })
}

/// Stamps `t0 + k dt`, `k = 0..=n`.
fn stamps(t0: f64, dt: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| t0 + k as f64 * dt).collect()
}

/// Local solution on `[t0, t0 + T]` from the constant guess `p ≡ p₀`, with
/// `T` the largest length allowed by `cfg.t_local` and the local-existence
/// threshold at `cfg.regime_fraction`.
pub fn picard_local(model: &Model, p0: &PhaseDensity, t0: f64, cfg: &SolverConfig) -> Result<PicardResult> {
    cfg.validate()?;
    let c_one = c_one_estimate(model, cfg.t_local / cfg.n_steps as f64, cfg.n_steps)?;
    let t = segment_length(model, p0, cfg, c_one, cfg.t_local);
    let prop = Propagator::new(model, t / cfg.n_steps as f64, cfg.n_steps, cfg.free_flight)?;
    let guess = TimedDensityPath::constant(&stamps(t0, prop.dt, cfg.n_steps), p0)?;
    picard_local_from(model, &prop, p0, &guess, cfg, c_one)
}

pub(crate) fn segment_length(model: &Model, p0: &PhaseDensity, cfg: &SolverConfig, c_one: f64, cap: f64) -> f64 {
    if cfg.lambda == 0.0 {
        return cap;
    }
    let (p_min, p_max) = (p0.ess_inf(), p0.ess_sup());
    // λ = fraction × threshold(T) solved for T
    let t_max = cfg.regime_fraction * lambda_threshold(model, p_min, p_max, 1.0, c_one) / cfg.lambda;
    if t_max.is_finite() && t_max > 0.0 {
        cap.min(t_max)
    } else {
        cap
    }
}

/// Chained local solutions on `[0, t_end]`.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub path: TimedDensityPath,
    pub segments: Vec<PicardReport>,
    /// Estimate of `c¹_∞` over `[0, max(t_end, T_local)]`.
    pub c_one: f64,
}

/// Solves to `t_end` by restarting the local problem from the terminal
/// density of each segment, with the segment length recomputed from its
/// bounds.
pub fn solve_forward(model: &Model, p0: &PhaseDensity, t_end: f64, cfg: &SolverConfig) -> Result<ForwardResult> {
    cfg.validate()?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidInput(format!("t_end must be > 0, got {t_end}")));
    }
    let dt0 = cfg.t_local / cfg.n_steps as f64;
    let horizon = t_end.max(cfg.t_local);
    let c_one = c_one_estimate(model, dt0, (horizon / dt0).ceil() as usize)?;
    let mut path = TimedDensityPath::new(0.0, p0.clone());
    let mut segments = Vec::new();
    let mut prop: Option<Propagator> = None;
    while t_end - path.t_end() > 1e-12 * t_end {
        let t0 = path.t_end();
        let start = path.last().clone();
        let t = segment_length(model, &start, cfg, c_one, cfg.t_local.min(t_end - t0));
        let dt = t / cfg.n_steps as f64;
        if prop.as_ref().is_none_or(|p| (p.dt - dt).abs() > 1e-14 * dt) {
            prop = Some(Propagator::new(model, dt, cfg.n_steps, cfg.free_flight)?);
        }
        let pr = prop.as_ref().expect("built above");
        let guess = TimedDensityPath::constant(&stamps(t0, dt, cfg.n_steps), &start)?;
        let res = picard_local_from(model, pr, &start, &guess, cfg, c_one)?;
        segments.push(res.report);
        path.extend_from(res.path)?;
    }
    Ok(ForwardResult { path, segments, c_one })
}

/// Envelopes at one checkpoint.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopePoint {
    /// Requested checkpoint.
    pub t: f64,
    /// Stamp actually used (the last one at or before `t`).
    pub t_stamp: f64,
    pub l1: f64,
    pub mass: f64,
    pub ess_inf: f64,
    pub ess_sup: f64,
    /// `p_max exp(λ‖h_γ‖ b c¹ t)`.
    pub upper: f64,
    pub upper_margin: f64,
    /// `ess inf S_low(t)𝟙`.
    pub c_tilde: f64,
    /// `c̃_t p_min exp(-λ t ‖h_γ‖‖B‖)`.
    pub lower: f64,
    pub lower_margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub points: Vec<EnvelopePoint>,
    pub c_one: f64,
    pub max_norm_defect: f64,
    pub nonnegative: bool,
    pub upper_holds: bool,
    pub lower_holds: bool,
}

/// Checks the growth and positivity envelopes of a forward path at the
/// given checkpoints. `c̃` is computed with steps of `dt_low`.
pub fn envelope_report(
    model: &Model,
    path: &TimedDensityPath,
    checkpoints: &[f64],
    lambda: f64,
    c_one: f64,
    dt_low: f64,
) -> Result<EnvelopeReport> {
    let p0 = path.first();
    let (p_min, p_max, l0) = (p0.ess_inf(), p0.ess_sup(), p0.l1());
    let t_last = checkpoints.iter().cloned().fold(0.0, f64::max);
    let n_low = (t_last / dt_low - 1e-9).ceil().max(0.0) as usize;
    let c_tilde = lower_envelope_profile(model, dt_low, n_low)?;
    let (hs, b, bn) = (model.h_sup(), model.b, model.b_norm());
    let points: Vec<EnvelopePoint> = checkpoints
        .iter()
        .map(|&t| {
            let i = path.index_at(t);
            let s = path.stats()[i];
            let ts = s.t - path.t_start();
            let upper = p_max * (lambda * hs * b * c_one * ts).exp();
            // S_low(t)𝟙 decreases in t, so the next stamp up is a safe value
            let ct = c_tilde[((ts / dt_low - 1e-9).ceil().max(0.0) as usize).min(n_low)];
            let lower = ct * p_min * (-lambda * ts * hs * bn).exp();
            EnvelopePoint {
                t,
                t_stamp: s.t,
                l1: s.l1,
                mass: s.mass,
                ess_inf: s.ess_inf,
                ess_sup: s.ess_sup,
                upper,
                upper_margin: upper - s.ess_sup,
                c_tilde: ct,
                lower,
                lower_margin: s.ess_inf - lower,
            }
        })
        .collect();
    let max_norm_defect = path.stats().iter().map(|s| (s.l1 - l0).abs()).fold(0.0, f64::max);
    Ok(EnvelopeReport {
        nonnegative: path.stats().iter().all(|s| s.ess_inf >= 0.0),
        upper_holds: points.iter().all(|p| p.upper_margin >= 0.0),
        lower_holds: points.iter().all(|p| p.lower_margin >= 0.0),
        points,
        c_one,
        max_norm_defect,
    })
}

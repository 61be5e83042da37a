//! The boundary billiard map and orbit statistics.
//!
//! The map sends an arriving wall state `(r, w)` (with `w·n(r) ≥ 0`) to the
//! previous wall hit along the backward ray, mirrored there:
//! `𝕋(r,w) = (r - T w, R(w))`. The chord times `l_k = T_Ω(𝕋^k(r,w))` drive
//! the mean free time and the spectral constants.

use super::{reflect, ConvexPolygon, Vec2};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A wall state: a point strictly inside an edge and a velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub edge: usize,
    /// Arclength from the first vertex of `edge`.
    pub s: f64,
    pub w: Vec2,
}

impl BoundaryPoint {
    pub fn position(&self, poly: &ConvexPolygon) -> Vec2 {
        poly.edge_point(self.edge, self.s)
    }

    /// True when `w` points out of the domain through the wall (`w·n ≥ 0`),
    /// i.e. the state of a particle arriving at the wall.
    pub fn is_outgoing(&self, poly: &ConvexPolygon) -> bool {
        self.w.dot(poly.normal(self.edge)) >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Inverse,
}

/// One application of `𝕋` or `𝕋⁻¹`, returning the new state and the chord
/// time `T_Ω` of the backward ray that was traced.
pub fn billiard_step_with_time(
    poly: &ConvexPolygon,
    b: &BoundaryPoint,
    dir: Direction,
) -> Result<(BoundaryPoint, f64)> {
    if b.s <= 0.0 || b.s >= poly.edge_length(b.edge) {
        return Err(Error::DegenerateRay(format!(
            "boundary point at vertex (edge {}, s = {})",
            b.edge, b.s
        )));
    }
    let r = b.position(poly);
    let n = poly.normal(b.edge);
    let w = match dir {
        Direction::Forward => b.w,
        Direction::Inverse => -reflect(b.w, n),
    };
    if w.dot(n) < 0.0 {
        return Err(Error::InvalidInput(
            "billiard step needs an outgoing state (w·n >= 0)".into(),
        ));
    }
    let hit = poly.exit_time_excluding(r, w, b.edge)?;
    let w_next = match dir {
        Direction::Forward => reflect(w, poly.normal(hit.edge)),
        // 𝕋⁻¹(r,w) = (r⁻(r, -R_r w), R_r w)
        Direction::Inverse => -w,
    };
    Ok((
        BoundaryPoint {
            edge: hit.edge,
            s: hit.s,
            w: w_next,
        },
        hit.t,
    ))
}

/// `𝕋(b)` for [`Direction::Forward`], `𝕋⁻¹(b)` for [`Direction::Inverse`].
pub fn billiard_step(poly: &ConvexPolygon, b: &BoundaryPoint, dir: Direction) -> Result<BoundaryPoint> {
    billiard_step_with_time(poly, b, dir).map(|(p, _)| p)
}

/// Chord time `T_Ω(r, w)` of a wall state.
pub fn chord_time(poly: &ConvexPolygon, b: &BoundaryPoint) -> Result<f64> {
    let r = b.position(poly);
    poly.exit_time_excluding(r, b.w, b.edge).map(|h| h.t)
}

/// Chord times `l_0, …, l_{n-1}` along the forward orbit (or `l_{-1}, …,
/// l_{-n}` along the inverse orbit).
pub fn orbit_chords(poly: &ConvexPolygon, b: &BoundaryPoint, n: usize, dir: Direction) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    match dir {
        Direction::Forward => {
            let mut cur = *b;
            for _ in 0..n {
                let (next, l) = billiard_step_with_time(poly, &cur, Direction::Forward)?;
                out.push(l);
                cur = next;
            }
        }
        Direction::Inverse => {
            let mut cur = *b;
            for _ in 0..n {
                cur = billiard_step(poly, &cur, Direction::Inverse)?;
                out.push(chord_time(poly, &cur)?);
            }
        }
    }
    Ok(out)
}

/// Draws a wall state from the billiard-invariant measure with density
/// `∝ w·n(r)` on `{w·n ≥ 0, v_min < |w| < v_max}`: edge by length, uniform
/// arclength, angle to the normal with density `cos φ / 2`, speed `∝ α²`.
pub fn sample_invariant<R: Rng + ?Sized>(poly: &ConvexPolygon, v_min: f64, v_max: f64, rng: &mut R) -> BoundaryPoint {
    let total = poly.perimeter();
    let mut u = rng.gen::<f64>() * total;
    let mut edge = poly.n_edges() - 1;
    for i in 0..poly.n_edges() {
        if u < poly.edge_length(i) {
            edge = i;
            break;
        }
        u -= poly.edge_length(i);
    }
    let s = (rng.gen::<f64>() * poly.edge_length(edge)).clamp(0.0, poly.edge_length(edge));
    let phi = (2.0 * rng.gen::<f64>() - 1.0).asin();
    let (a3, b3) = (v_min.powi(3), v_max.powi(3));
    let speed = (a3 + rng.gen::<f64>() * (b3 - a3)).cbrt();
    let n = poly.normal(edge);
    let t = poly.tangent(edge);
    let w = (n * phi.cos() + t * phi.sin()) * speed;
    BoundaryPoint { edge, s, w }
}

/// Mean free time statistics of one orbit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFreeTime {
    /// Forward Birkhoff average of the chord times.
    pub tau: f64,
    /// Backward Birkhoff average.
    pub tau_backward: f64,
    /// `τ·|w|`.
    pub ctau_est: f64,
    /// `max_{k0 ≤ k ≤ n} (kτ - Σ_{i=1}^k l_i) / (kτ)`.
    pub ctau_defect_est: f64,
    /// Smallest sum of `k0` consecutive chord lengths (length units).
    pub min_window_length: f64,
}

/// Birkhoff averages of chord times over `n_steps` iterates in each
/// direction. Fails with `NonConvergent` when the forward and backward
/// averages differ by more than `tol_ergodic` (relative).
pub fn mean_free_time(
    poly: &ConvexPolygon,
    b: &BoundaryPoint,
    n_steps: usize,
    k0: usize,
    tol_ergodic: f64,
) -> Result<MeanFreeTime> {
    if n_steps < 10 {
        return Err(Error::InvalidInput("mean_free_time needs n_steps >= 10".into()));
    }
    if k0 == 0 || k0 > n_steps {
        return Err(Error::InvalidInput("k0 must lie in 1..=n_steps".into()));
    }
    // l_0 .. l_n: the C_τ defect uses l_1..l_k, τ uses l_0..l_{n-1}.
    let fwd = orbit_chords(poly, b, n_steps + 1, Direction::Forward)?;
    let bwd = orbit_chords(poly, b, n_steps, Direction::Inverse)?;
    let tau = fwd[..n_steps].iter().sum::<f64>() / n_steps as f64;
    let tau_backward = bwd.iter().sum::<f64>() / n_steps as f64;
    if (tau - tau_backward).abs() > tol_ergodic * tau {
        return Err(Error::NonConvergent(format!(
            "forward mean {tau:.6} and backward mean {tau_backward:.6} differ beyond {tol_ergodic}"
        )));
    }
    let speed = b.w.norm();
    let mut partial = 0.0;
    let mut defect = f64::NEG_INFINITY;
    for k in 1..=n_steps {
        partial += fwd[k];
        if k >= k0 {
            let kt = k as f64 * tau;
            defect = defect.max((kt - partial) / kt);
        }
    }
    let mut min_window = f64::INFINITY;
    for i in 0..=(fwd.len() - k0) {
        let len: f64 = fwd[i..i + k0].iter().sum::<f64>() * speed;
        min_window = min_window.min(len);
    }
    Ok(MeanFreeTime {
        tau,
        tau_backward,
        ctau_est: tau * speed,
        ctau_defect_est: defect,
        min_window_length: min_window,
    })
}

/// Shape diagnostics for the spectral theory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub xi_min: f64,
    pub s_min: f64,
    pub diam: f64,
    pub sigma_min_empirical: f64,
    pub c_tau_bound: f64,
    #[serde(rename = "C_tau_bound")]
    pub big_c_tau_bound: f64,
    pub c_tau_empirical: f64,
    #[serde(rename = "C_tau_empirical")]
    pub big_c_tau_empirical: f64,
    pub angles_ge_half_pi: bool,
    pub k0: usize,
    pub orbits: usize,
    pub steps: usize,
}

/// `(3 diam - s_min) / (3 diam)`, the upper bound on `C_τ` for `k0 = 2`
/// polygons whose inner angles are at least a right angle.
pub fn big_c_tau_bound(poly: &ConvexPolygon) -> f64 {
    let d = poly.diam();
    (3.0 * d - poly.s_min()) / (3.0 * d)
}

/// `s_min / 3`, the lower bound on `c_τ` under the same hypothesis.
pub fn c_tau_bound(poly: &ConvexPolygon) -> f64 {
    poly.s_min() / 3.0
}

/// Samples `samples` orbits of `steps` steps from the invariant measure
/// (unit speed) and reports the empirical shape constants next to the
/// analytic bounds. Degenerate orbits (through a vertex) are redrawn.
///
/// Orbits are generated from per-orbit RNG streams so the result does not
/// depend on the number of worker threads.
pub fn verify_shape(poly: &ConvexPolygon, k0: usize, samples: usize, steps: usize, seed: u64) -> Result<ShapeReport> {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rayon::prelude::*;

    if k0 == 0 {
        return Err(Error::InvalidInput("k0 must be >= 1".into()));
    }
    let steps = steps.max(10).max(k0);
    let stats: Vec<MeanFreeTime> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            loop {
                let b = sample_invariant(poly, 1.0, 1.0, &mut rng);
                match mean_free_time(poly, &b, steps, k0, f64::INFINITY) {
                    Ok(m) => return m,
                    Err(Error::DegenerateRay(_)) => continue,
                    Err(e) => panic!("unexpected orbit failure: {e}"),
                }
            }
        })
        .collect();
    let sigma_min = stats.iter().map(|m| m.min_window_length).fold(f64::INFINITY, f64::min);
    let c_emp = stats.iter().map(|m| m.ctau_est).fold(f64::INFINITY, f64::min);
    let cc_emp = stats.iter().map(|m| m.ctau_defect_est).fold(f64::NEG_INFINITY, f64::max);
    let angles_ok = poly.xi_min() >= PI / 2.0 - 1e-12;
    let tol = 1e-9 * poly.diam();
    if k0 == 2 && angles_ok && sigma_min < poly.s_min() - tol {
        return Err(Error::ShapeViolation(format!(
            "two consecutive chords of total length {sigma_min} < s_min = {}",
            poly.s_min()
        )));
    }
    Ok(ShapeReport {
        xi_min: poly.xi_min(),
        s_min: poly.s_min(),
        diam: poly.diam(),
        sigma_min_empirical: sigma_min,
        c_tau_bound: c_tau_bound(poly),
        big_c_tau_bound: big_c_tau_bound(poly),
        c_tau_empirical: c_emp,
        big_c_tau_empirical: cc_emp,
        angles_ge_half_pi: angles_ok,
        k0,
        orbits: samples,
        steps,
    })
}

/// Histogram of wall states after `steps` forward billiard steps from
/// `starts` independent draws of the invariant measure, binned by
/// (edge, arclength bin, angle-to-normal bin). Returns observed counts and
/// the bin probabilities of the invariant density `∝ w·n`.
///
/// The square billiard is not ergodic (a single orbit visits four
/// directions), so invariance is tested on many independent starts.
pub fn invariant_histogram(
    poly: &ConvexPolygon,
    v_min: f64,
    v_max: f64,
    s_bins: usize,
    phi_bins: usize,
    starts: usize,
    steps: usize,
    seed: u64,
) -> (Vec<u64>, Vec<f64>) {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rayon::prelude::*;

    let ne = poly.n_edges();
    let nb = ne * s_bins * phi_bins;
    let bin_of = |b: &BoundaryPoint| {
        let n = poly.normal(b.edge);
        let t = poly.tangent(b.edge);
        let phi = b.w.dot(t).atan2(b.w.dot(n));
        let is = ((b.s / poly.edge_length(b.edge)) * s_bins as f64) as usize;
        let ip = ((phi + PI / 2.0) / PI * phi_bins as f64) as usize;
        (b.edge * s_bins + is.min(s_bins - 1)) * phi_bins + ip.min(phi_bins - 1)
    };
    const CHUNK: usize = 4096;
    let n_chunks = starts.div_ceil(CHUNK);
    let partial: Vec<Vec<u64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut h = vec![0u64; nb];
            for i in c * CHUNK..((c + 1) * CHUNK).min(starts) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                'draw: loop {
                    let mut b = sample_invariant(poly, v_min, v_max, &mut rng);
                    for _ in 0..steps {
                        match billiard_step(poly, &b, Direction::Forward) {
                            Ok(nb) => b = nb,
                            Err(_) => continue 'draw,
                        }
                    }
                    h[bin_of(&b)] += 1;
                    break;
                }
            }
            h
        })
        .collect();
    let mut counts = vec![0u64; nb];
    for h in partial {
        for (a, b) in counts.iter_mut().zip(h) {
            *a += b;
        }
    }
    let per = poly.perimeter();
    let mut probs = Vec::with_capacity(nb);
    for e in 0..ne {
        let ws = poly.edge_length(e) / (s_bins as f64 * per);
        for _ in 0..s_bins {
            for j in 0..phi_bins {
                let a = -PI / 2.0 + PI * j as f64 / phi_bins as f64;
                let b = -PI / 2.0 + PI * (j + 1) as f64 / phi_bins as f64;
                probs.push(ws * 0.5 * (b.sin() - a.sin()));
            }
        }
    }
    (counts, probs)
}

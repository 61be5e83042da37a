//! Wall physics: the Maxwell profile, the flux functional `J`, the mixed
//! specular/diffuse boundary condition and the boundary shift `S`.
//!
//! Boundary functions are stored on outgoing states `(r, w)` with
//! `w·n(r) ≥ 0`. Incoming values are indexed by the same cells, the cell
//! with outgoing velocity `w` standing for the incoming velocity `R_r(w)`.

mod grid;
mod profile;

pub use grid::{BoundaryCell, BoundaryDensity, BoundaryGrid};
pub use profile::{normalize_profile, MaxwellProfile, ProfileMode};

use crate::error::{Error, Result};
use crate::geometry::{billiard_step, reflect, BoundaryPoint, ConvexPolygon, Direction, Vec2};
use rand::Rng;
use rayon::prelude::*;

/// `J(r)(f) = ∫_{w·n≥0} (w·n) f(r,w) dw` on the arclength cell containing `s`.
pub fn flux_j(f: &BoundaryDensity, edge: usize, s: f64) -> f64 {
    let g = &f.grid;
    let is = ((s / g.ds(edge)) as isize).clamp(0, g.n_s as isize - 1) as usize;
    flux_j_cell(f, edge, is)
}

/// `J` on arclength cell `is` of `edge`.
pub fn flux_j_cell(f: &BoundaryDensity, edge: usize, is: usize) -> f64 {
    let g = &f.grid;
    let base = (edge * g.n_s + is) * g.n_velocities();
    let mut j = 0.0;
    for ip in 0..g.n_phi {
        for ia in 0..g.n_speed {
            j += f.values[base + ip * g.n_speed + ia] * g.flux_weight(ip, ia);
        }
    }
    j
}

/// `M` at the speed nodes, rescaled per edge so that the grid quadrature of
/// the re-emitted flux is exactly one. Indexed `[edge * n_speed + ispeed]`.
pub fn discrete_profile(grid: &BoundaryGrid, m: &MaxwellProfile) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.poly.n_edges() * grid.n_speed);
    for e in 0..grid.poly.n_edges() {
        let raw: Vec<f64> = (0..grid.n_speed).map(|ia| m.value(e, grid.speed_center(ia))).collect();
        let mut flux = 0.0;
        for ip in 0..grid.n_phi {
            for (ia, r) in raw.iter().enumerate() {
                flux += r * grid.flux_weight(ip, ia);
            }
        }
        out.extend(raw.iter().map(|r| r / flux));
    }
    out
}

/// Incoming values `ω f(r, R_r v) + (1-ω) M(r,v) J(r)(f)` for every
/// incoming cell.
pub fn apply_boundary_condition(f_out: &BoundaryDensity, omega: f64, m: &MaxwellProfile) -> Result<BoundaryDensity> {
    if !(0.0..1.0).contains(&omega) {
        return Err(Error::InvalidInput(format!("omega must lie in [0,1), got {omega}")));
    }
    let g = &f_out.grid;
    let md = discrete_profile(g, m);
    let mut out = BoundaryDensity::zeros(g.clone());
    let nv = g.n_velocities();
    for e in 0..g.poly.n_edges() {
        for is in 0..g.n_s {
            let j = flux_j_cell(f_out, e, is);
            let base = (e * g.n_s + is) * nv;
            for k in 0..nv {
                let ia = k % g.n_speed;
                out.values[base + k] = omega * f_out.values[base + k] + (1.0 - omega) * md[e * g.n_speed + ia] * j;
            }
        }
    }
    Ok(out)
}

/// Flux `∫_{v·n≤0} |v·n| f dv` of incoming values on one arclength cell.
pub fn incoming_flux_cell(f_in: &BoundaryDensity, edge: usize, is: usize) -> f64 {
    // Reflection maps the incoming cells onto the outgoing ones with equal
    // flux weights, so the quadrature is the same.
    flux_j_cell(f_in, edge, is)
}

/// New velocity of a particle that reaches `edge` with velocity `v_in`
/// (`v_in·n ≥ 0`, outward normal). With probability `ω` the specular image;
/// otherwise a draw from the density `∝ |u·n| M(u)` over velocities
/// pointing back into the domain. The result always satisfies `u·n < 0`.
pub fn sample_boundary_velocity<R: Rng + ?Sized>(
    poly: &ConvexPolygon,
    edge: usize,
    v_in: Vec2,
    omega: f64,
    m: &MaxwellProfile,
    rng: &mut R,
) -> Vec2 {
    let n = poly.normal(edge);
    if rng.gen::<f64>() < omega {
        let u = reflect(v_in, n);
        if u.dot(n) < 0.0 {
            return u;
        }
    }
    let t = poly.tangent(edge);
    loop {
        let phi = (2.0 * rng.gen::<f64>() - 1.0).asin();
        let speed = m.sample_speed(edge, rng);
        let u = (n * (-phi.cos()) + t * phi.sin()) * speed;
        if u.dot(n) < 0.0 {
            return u;
        }
    }
}

/// The boundary shift `(Sf)(y,v) = f(σ(y,v))` acting on incoming data.
///
/// In the outgoing labelling `σ` is the billiard map `𝕋`, so `Sf` is the
/// image of the measure `f dμ` under `𝕋⁻¹`. Each cell is cut into `sub`
/// lines of equal flux measure (uniform in `sin φ`). Along a line the
/// velocity is fixed, the rays are parallel and the image of the arclength
/// interval is mapped exactly (piecewise affinely) onto target cells. Mass
/// is conserved exactly, so the weighted norm is preserved for `f ≥ 0`.
pub fn boundary_shift_s(f: &BoundaryDensity, sub: usize) -> Result<BoundaryDensity> {
    push_by_billiard(f, sub, Direction::Inverse)
}

/// Inverse of [`boundary_shift_s`], pushing mass forward along `𝕋`.
pub fn boundary_shift_s_inverse(f: &BoundaryDensity, sub: usize) -> Result<BoundaryDensity> {
    push_by_billiard(f, sub, Direction::Forward)
}

fn push_by_billiard(f: &BoundaryDensity, sub: usize, dir: Direction) -> Result<BoundaryDensity> {
    let g = f.grid.clone();
    let sub = sub.max(1);
    let moves: Vec<Result<Vec<(usize, f64)>>> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let mass = f.values[i] * g.measure(i);
            if mass == 0.0 {
                return Ok(Vec::new());
            }
            let c = g.cell(i);
            let ds = g.ds(c.edge);
            let (p0, p1) = g.phi_bounds(c.iphi);
            let (q0, q1) = (p0.sin(), p1.sin());
            let speed = g.speed_center(c.ispeed);
            let n = g.poly.normal(c.edge);
            let t = g.poly.tangent(c.edge);
            let share = mass / sub as f64;
            let mut out = Vec::new();
            for b in 0..sub {
                let q = q0 + (q1 - q0) * (b as f64 + 0.5) / sub as f64;
                let phi = q.clamp(-1.0, 1.0).asin();
                let w = (n * phi.cos() + t * phi.sin()) * speed;
                let (s0, s1) = (c.is as f64 * ds, (c.is + 1) as f64 * ds);
                let mut pieces = Vec::new();
                map_interval(&g.poly, c.edge, s0, s1, w, dir, 0, &mut pieces)?;
                for (e2, a, bb, w2, frac) in pieces {
                    deposit(&g, e2, a, bb, w2, share * frac, &mut out);
                }
            }
            Ok(out)
        })
        .collect();
    let mut mass = vec![0.0; g.len()];
    for m in moves {
        for (j, w) in m? {
            mass[j] += w;
        }
    }
    let values = mass.iter().enumerate().map(|(j, m)| m / g.measure(j)).collect();
    Ok(BoundaryDensity { grid: g, values })
}

type Piece = (usize, f64, f64, Vec2, f64);

/// Images of the parallel family `{(edge, s, w) : s ∈ [s0, s1]}` under one
/// billiard step, split where the family passes a vertex. Each piece is
/// `(target edge, image of s0-end, image of s1-end, velocity, mass fraction)`.
#[allow(clippy::too_many_arguments)]
fn map_interval(
    poly: &ConvexPolygon,
    edge: usize,
    s0: f64,
    s1: f64,
    w: Vec2,
    dir: Direction,
    depth: usize,
    out: &mut Vec<Piece>,
) -> Result<()> {
    map_interval_frac(poly, edge, s0, s1, w, dir, depth, 1.0, out)
}

#[allow(clippy::too_many_arguments)]
fn map_interval_frac(
    poly: &ConvexPolygon,
    edge: usize,
    s0: f64,
    s1: f64,
    w: Vec2,
    dir: Direction,
    depth: usize,
    frac: f64,
    out: &mut Vec<Piece>,
) -> Result<()> {
    let eps = 1e-7 * poly.diam();
    let a = step_robust(poly, BoundaryPoint { edge, s: s0 + eps, w }, dir)?;
    let b = step_robust(poly, BoundaryPoint { edge, s: s1 - eps, w }, dir)?;
    if a.edge == b.edge {
        // Affine in s: extend the inset endpoints back to the full interval.
        let k = (b.s - a.s) / (s1 - s0 - 2.0 * eps);
        out.push((a.edge, a.s - k * eps, b.s + k * eps, a.w, frac));
        return Ok(());
    }
    if depth > 50 || s1 - s0 < 4.0 * eps {
        out.push((a.edge, a.s, a.s, a.w, frac));
        return Ok(());
    }
    let mid = 0.5 * (s0 + s1);
    map_interval_frac(poly, edge, s0, mid, w, dir, depth + 1, 0.5 * frac, out)?;
    map_interval_frac(poly, edge, mid, s1, w, dir, depth + 1, 0.5 * frac, out)
}

/// Spreads `mass` uniformly over the arclength segment `[a, b]` of `edge`.
fn deposit(g: &BoundaryGrid, edge: usize, a: f64, b: f64, w: Vec2, mass: f64, out: &mut Vec<(usize, f64)>) {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let len = g.poly.edge_length(edge);
    let (lo, hi) = (lo.clamp(0.0, len), hi.clamp(0.0, len));
    let ds = g.ds(edge);
    let probe = |s: f64| g.locate(&BoundaryPoint { edge, s, w });
    if hi - lo <= 1e-14 * len {
        out.push((probe(lo), mass));
        return;
    }
    let i0 = ((lo / ds) as usize).min(g.n_s - 1);
    let i1 = ((hi / ds) as usize).min(g.n_s - 1);
    for is in i0..=i1 {
        let c0 = (is as f64 * ds).max(lo);
        let c1 = ((is + 1) as f64 * ds).min(hi);
        if c1 > c0 {
            out.push((probe((is as f64 + 0.5) * ds), mass * (c1 - c0) / (hi - lo)));
        }
    }
}

/// Billiard step that nudges the arclength off a vertex-hitting chord.
fn step_robust(poly: &ConvexPolygon, b: BoundaryPoint, dir: Direction) -> Result<BoundaryPoint> {
    let mut cur = b;
    let mut last = None;
    let len = poly.edge_length(b.edge);
    for k in 0..6 {
        match billiard_step(poly, &cur, dir) {
            Ok(p) => return Ok(p),
            Err(Error::DegenerateRay(msg)) => {
                last = Some(msg);
                let step = 1e-8 * poly.diam() * (1 << k) as f64;
                let sign = if b.s < 0.5 * len { 1.0 } else { -1.0 };
                cur.s = b.s + sign * step;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateRay(last.unwrap_or_default()))
}

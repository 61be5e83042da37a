use super::kernel::{carleman_phi, collide_pair, KernelSpec};
use crate::error::{Error, Result};
use crate::geometry::{Vec2, VelocityAnnulus};
use crate::transport::VelocityGrid;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Bin index of `x` (in units of the bin width), with values within
/// `1e-9` of a bin edge snapped onto it. Post-collision velocities often
/// land on cell edges; snapping makes the choice independent of rounding,
/// so the `v* ↔ v₁*` swap maps the node set onto itself.
fn snapped_bin(x: f64) -> isize {
    let r = x.round();
    (if (x - r).abs() < 1e-9 { r } else { x.floor() }) as isize
}

fn cell_of(vel: &VelocityGrid, u: Vec2) -> Option<usize> {
    let va = vel.annulus;
    let hs = (va.v_max - va.v_min) / vel.n_speed as f64;
    let i = snapped_bin((u.norm() - va.v_min) / hs);
    if i < 0 || i >= vel.n_speed as isize {
        return None;
    }
    let th = u.y.atan2(u.x).rem_euclid(2.0 * PI);
    let j = snapped_bin(th / vel.dtheta()).rem_euclid(vel.n_theta as isize);
    Some(vel.index(j as usize, i as usize))
}

/// Midpoint nodes of the normalized half circle of `e` (or `σ`) around
/// direction `base`: offsets `(m + ½)π/N - π/2`.
fn half_circle(base: f64, n: usize) -> impl Iterator<Item = Vec2> {
    (0..n).map(move |m| Vec2::from_angle(base + (m as f64 + 0.5) * PI / n as f64 - 0.5 * PI))
}

/// Visits the quadrature nodes `(j, e)` for velocity node `i` whose
/// post-collision velocities both lie in `V`: `f(j, a, b, W)` with `a, b`
/// the cells of `v*, v₁*` and `W = B |cell_j| / N_e`.
fn for_each_pair(vel: &VelocityGrid, kernel: &KernelSpec, n_e: usize, i: usize, mut f: impl FnMut(usize, usize, usize, f64)) {
    let v = vel.velocity(i);
    for j in 0..vel.len() {
        if j == i {
            continue;
        }
        let v1 = vel.velocity(j);
        let wj = vel.measure(j) / n_e as f64;
        for e in half_circle((v - v1).angle(), n_e) {
            let (vs, v1s) = collide_pair(v, v1, e);
            let (Some(a), Some(b)) = (cell_of(vel, vs), cell_of(vel, v1s)) else {
                continue;
            };
            let w = kernel.eval(v, v1, vs - v1s) * wj;
            if w > 0.0 {
                f(j, a, b, w);
            }
        }
    }
}

/// Precomputed quadrature of the collision integral on a velocity grid.
///
/// Each entry `(i, j, a, b, W)` is one node `(v₁ = v_j, e)` of the
/// integral at `v = v_i`, with `a, b` the cells of `v*, v₁*`. The operator
///
/// `Qc(p, g) = ½ (G_s + G_w - L - L_w)`
///
/// pairs the pointwise form (`G_s[i] += W p_a g_b`, `L[i] += W p_i g_j`)
/// with its mass-transporting dual (`G_w[a]` receives the mass `|c_i| W p_i g_j`,
/// `L_w[a]` loses `|c_i| W p_a g_b`). Each pair of terms moves mass between
/// cells, so `Σ |c| Qc = 0` exactly; and for `p`, `g` constant in `v`
/// each gain cancels its loss cell by cell.
#[derive(Debug, Clone)]
pub struct CollisionTable {
    pub vel: VelocityGrid,
    pub n_e: usize,
    i: Vec<u32>,
    j: Vec<u32>,
    a: Vec<u32>,
    b: Vec<u32>,
    w: Vec<f64>,
    /// `W |c_i| / |c_a|`.
    w2: Vec<f64>,
}

impl CollisionTable {
    pub fn build(vel: &VelocityGrid, kernel: &KernelSpec, n_e: usize) -> Result<Self> {
        kernel.validate()?;
        if n_e == 0 {
            return Err(Error::InvalidInput("collision quadrature needs n_e >= 1".into()));
        }
        let rows: Vec<Vec<(u32, u32, u32, f64)>> = (0..vel.len())
            .into_par_iter()
            .map(|i| {
                let mut r = Vec::new();
                for_each_pair(vel, kernel, n_e, i, |j, a, b, w| r.push((j as u32, a as u32, b as u32, w)));
                r
            })
            .collect();
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let mut t = Self {
            vel: vel.clone(),
            n_e,
            i: Vec::with_capacity(nnz),
            j: Vec::with_capacity(nnz),
            a: Vec::with_capacity(nnz),
            b: Vec::with_capacity(nnz),
            w: Vec::with_capacity(nnz),
            w2: Vec::with_capacity(nnz),
        };
        for (i, r) in rows.into_iter().enumerate() {
            for (j, a, b, w) in r {
                t.i.push(i as u32);
                t.j.push(j);
                t.a.push(a);
                t.b.push(b);
                t.w.push(w);
                t.w2.push(w * vel.measure(i) / vel.measure(a as usize));
            }
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Gain `½(G_s + G_w)` and loss `½(L + L_w)` of `Qc(p, g)`, added into
    /// the output slices.
    pub fn gain_loss(&self, p: &[f64], g: &[f64], gain: &mut [f64], loss: &mut [f64]) {
        for k in 0..self.w.len() {
            let (i, j, a, b) = (self.i[k] as usize, self.j[k] as usize, self.a[k] as usize, self.b[k] as usize);
            let s = p[a] * g[b];
            let d = p[i] * g[j];
            gain[i] += 0.5 * self.w[k] * s;
            gain[a] += 0.5 * self.w2[k] * d;
            loss[i] += 0.5 * self.w[k] * d;
            loss[a] += 0.5 * self.w2[k] * s;
        }
    }

    /// Pointwise gain `Σ W p(v*) g(v₁*)` at each node, added into `out`.
    /// With even `n_e` the node set is closed under `v* ↔ v₁*`, so this is
    /// exactly symmetric in `(p, g)`.
    pub fn strong_gain(&self, p: &[f64], g: &[f64], out: &mut [f64]) {
        for k in 0..self.w.len() {
            out[self.i[k] as usize] += self.w[k] * p[self.a[k] as usize] * g[self.b[k] as usize];
        }
    }

    /// `Qc(p, g)` added into `out`.
    pub fn qc_add(&self, p: &[f64], g: &[f64], scale: f64, out: &mut [f64]) {
        for k in 0..self.w.len() {
            let (i, j, a, b) = (self.i[k] as usize, self.j[k] as usize, self.a[k] as usize, self.b[k] as usize);
            let s = p[a] * g[b];
            let d = p[i] * g[j];
            let h = 0.5 * scale;
            out[i] += h * self.w[k] * (s - d);
            out[a] += h * self.w2[k] * (d - s);
        }
    }

    /// Loss rate `B̂` with `½(L + L_w) = p · B̂`.
    pub fn loss_rate(&self, g: &[f64], out: &mut [f64]) {
        for k in 0..self.w.len() {
            let (i, j, a, b) = (self.i[k] as usize, self.j[k] as usize, self.a[k] as usize, self.b[k] as usize);
            out[i] += 0.5 * self.w[k] * g[j];
            out[a] += 0.5 * self.w2[k] * g[b];
        }
    }
}

/// Gain term `½(G_s + G_w)` of `Qc(p, g)` on one velocity grid, computed
/// without storing the table (for grids too large to tabulate).
pub fn direct_gain(vel: &VelocityGrid, kernel: &KernelSpec, n_e: usize, p: &[f64], g: &[f64]) -> Vec<f64> {
    let n = vel.len();
    let chunk = 64;
    let mut gain = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let parts: Vec<(f64, Vec<(usize, f64)>)> = (start..end)
            .into_par_iter()
            .map(|i| {
                let mut gs = 0.0;
                let mut dep = Vec::new();
                let ci = vel.measure(i);
                for_each_pair(vel, kernel, n_e, i, |j, a, b, w| {
                    gs += w * p[a] * g[b];
                    dep.push((a, w * ci * p[i] * g[j]));
                });
                (gs, dep)
            })
            .collect();
        for (k, (gs, dep)) in parts.into_iter().enumerate() {
            gain[start + k] += 0.5 * gs;
            for (a, m) in dep {
                gain[a] += 0.5 * m / vel.measure(a);
            }
        }
        start = end;
    }
    gain
}

/// Result of a Carleman-form evaluation.
#[derive(Debug, Clone)]
pub struct CarlemanGain {
    pub gain: Vec<f64>,
    /// Quadrature measure skipped because `cos²α < 1e-12`.
    pub excluded_measure: f64,
}

/// Gain term in Carleman variables at one point:
/// `Σ_j |c_j| g_j Σ_σ (½/N_σ) · 2 B̃_J(v, φ(v; v_j, σ), σ)/cos²α · p(ψ)`
/// over `σ ∈ S₊(v - v_j)` (half of the normalized circle).
pub fn carleman_gain(vel: &VelocityGrid, kernel: &KernelSpec, n_sigma: usize, p: &[f64], g: &[f64]) -> CarlemanGain {
    let va: VelocityAnnulus = vel.annulus;
    let parts: Vec<(f64, f64)> = (0..vel.len())
        .into_par_iter()
        .map(|i| {
            let v = vel.velocity(i);
            let mut acc = 0.0;
            let mut excl = 0.0;
            for j in 0..vel.len() {
                if j == i || g[j] == 0.0 {
                    continue;
                }
                let w = vel.velocity(j);
                let d = v - w;
                let wt = 0.5 / n_sigma as f64 * vel.measure(j);
                for sigma in half_circle(d.angle(), n_sigma) {
                    let sd = sigma.dot(d);
                    let cos2 = sd * sd / d.norm_sq();
                    if cos2 < 1e-12 {
                        excl += wt;
                        continue;
                    }
                    let phi = carleman_phi(v, w, sigma);
                    let psi = phi + v - w;
                    let (Some(_), Some(c)) = (cell_of(vel, phi), cell_of(vel, psi)) else {
                        continue;
                    };
                    let integrand = 2.0 * kernel.eval_at_phi(d.norm(), cos2.sqrt()) / cos2;
                    acc += wt * integrand * p[c] * g[j];
                }
            }
            let _ = va;
            (acc, excl)
        })
        .collect();
    CarlemanGain {
        gain: parts.iter().map(|x| x.0).collect(),
        excluded_measure: parts.iter().map(|x| x.1).sum(),
    }
}

/// Loss term in Carleman variables: `p(v) Σ_j |c_j| g_j Σ_σ (1/N_σ) B̃ χ`
/// over the full circle of `σ`, with `v*, v₁* = (v + v_j)/2 ± |v - v_j| σ/2`.
pub fn carleman_loss(vel: &VelocityGrid, kernel: &KernelSpec, n_sigma: usize, p: &[f64], g: &[f64]) -> Vec<f64> {
    (0..vel.len())
        .into_par_iter()
        .map(|i| {
            let v = vel.velocity(i);
            let mut acc = 0.0;
            for j in 0..vel.len() {
                if j == i {
                    continue;
                }
                let w = vel.velocity(j);
                let mid = (v + w) * 0.5;
                let r = (v - w).norm() * 0.5;
                let wt = vel.measure(j) / (2 * n_sigma) as f64;
                for m in 0..2 * n_sigma {
                    let sigma = Vec2::from_angle((m as f64 + 0.5) * PI / n_sigma as f64);
                    let (vs, v1s) = (mid + sigma * r, mid - sigma * r);
                    if cell_of(vel, vs).is_some() && cell_of(vel, v1s).is_some() {
                        acc += wt * kernel.eval(v, w, sigma) * g[j];
                    }
                }
            }
            acc * p[i]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vel(nt: usize, ns: usize) -> VelocityGrid {
        VelocityGrid::new(VelocityAnnulus::new(1.0, 2.0).unwrap(), nt, ns).unwrap()
    }

    fn gauss(vel: &VelocityGrid, c: Vec2) -> Vec<f64> {
        (0..vel.len()).map(|k| (-(vel.velocity(k) - c).norm_sq()).exp()).collect()
    }

    #[test]
    fn mass_neutral_and_constant_cancels() {
        let v = vel(12, 4);
        let t = CollisionTable::build(&v, &KernelSpec::default(), 12).unwrap();
        let p = gauss(&v, Vec2::new(0.5, 0.3));
        let g = gauss(&v, Vec2::new(-0.4, 0.8));
        let mut q = vec![0.0; v.len()];
        t.qc_add(&p, &g, 1.0, &mut q);
        let mass: f64 = q.iter().enumerate().map(|(k, x)| x * v.measure(k)).sum();
        let scale: f64 = q.iter().enumerate().map(|(k, x)| x.abs() * v.measure(k)).sum();
        assert!(mass.abs() < 1e-14 * scale.max(1.0));
        let c = vec![0.7; v.len()];
        let mut q = vec![0.0; v.len()];
        t.qc_add(&c, &c, 1.0, &mut q);
        assert!(q.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn gain_loss_reassemble() {
        let v = vel(8, 3);
        let t = CollisionTable::build(&v, &KernelSpec::default(), 8).unwrap();
        let p = gauss(&v, Vec2::new(0.5, 0.3));
        let g = gauss(&v, Vec2::new(-0.4, 0.8));
        let (mut gn, mut ls, mut q, mut bh) = (vec![0.0; v.len()], vec![0.0; v.len()], vec![0.0; v.len()], vec![0.0; v.len()]);
        t.gain_loss(&p, &g, &mut gn, &mut ls);
        t.qc_add(&p, &g, 1.0, &mut q);
        t.loss_rate(&g, &mut bh);
        for k in 0..v.len() {
            assert!((gn[k] - ls[k] - q[k]).abs() < 1e-14);
            assert!((ls[k] - p[k] * bh[k]).abs() < 1e-14);
        }
        let dg = direct_gain(&v, &KernelSpec::default(), 8, &p, &g);
        for k in 0..v.len() {
            assert!((dg[k] - gn[k]).abs() < 1e-13);
        }
    }
}

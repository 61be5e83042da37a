use super::grid::PhaseGrid;
use crate::boundary::MaxwellProfile;
use crate::error::{Error, Result};
use crate::geometry::{clip, reflect, Vec2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Weights applied at a wall hit: `specular` times the mirror image plus
/// `diffuse` times re-emission over inward grid velocities with
/// probabilities `q_u ∝ |u·n| M(u) |cell_u|`.
///
/// With `floor_profile` the re-emission weights are scaled by `M_min / M(u)`,
/// i.e. the profile is replaced by its lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallRule {
    pub specular: f64,
    pub diffuse: f64,
    pub floor_profile: bool,
}

impl WallRule {
    /// The Maxwell boundary condition with accommodation `1 - ω`.
    pub fn maxwell(omega: f64) -> Self {
        Self {
            specular: omega,
            diffuse: 1.0 - omega,
            floor_profile: false,
        }
    }

    /// Inverse of the wall condition used for backward-in-time transport.
    /// Signed, and mass conserving.
    pub fn inverse(omega: f64) -> Result<Self> {
        if omega <= 0.0 {
            return Err(Error::InvalidInput("backward transport needs omega > 0".into()));
        }
        Ok(Self {
            specular: 1.0 / omega,
            diffuse: -(1.0 - omega) / omega,
            floor_profile: false,
        })
    }

    /// Diffuse part only, with the profile replaced by `M_min`.
    pub fn lower_envelope(omega: f64) -> Self {
        Self {
            specular: 0.0,
            diffuse: 1.0 - omega,
            floor_profile: true,
        }
    }
}

struct Emission {
    u: Vec2,
    q: f64,
}

/// Resolution of the wall quadrature used for diffuse re-emission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallQuadrature {
    /// Arclength bins per spatial cell width.
    pub s_per_cell: usize,
    /// Bins in the time elapsed since the hit.
    pub n_t: usize,
}

impl Default for WallQuadrature {
    fn default() -> Self {
        Self { s_per_cell: 2, n_t: 16 }
    }
}

/// Wall bins `(edge, arclength, time since hit)`.
#[derive(Debug, Clone)]
struct WallBins {
    start: Vec<usize>,
    n_s: Vec<usize>,
    n_t: usize,
    delta: f64,
}

impl WallBins {
    fn new(grid: &PhaseGrid, wq: WallQuadrature, delta: f64) -> Self {
        let h = grid.h.x.min(grid.h.y);
        let mut start = Vec::new();
        let mut n_s = Vec::new();
        let mut acc = 0;
        for e in 0..grid.poly.n_edges() {
            let n = ((grid.poly.edge_length(e) / h * wq.s_per_cell as f64).ceil() as usize).max(1);
            start.push(acc);
            n_s.push(n);
            acc += n;
        }
        Self {
            start,
            n_s,
            n_t: wq.n_t.max(1),
            delta,
        }
    }

    fn len(&self) -> usize {
        (self.start.last().unwrap() + self.n_s.last().unwrap()) * self.n_t
    }

    fn index(&self, e: usize, is: usize, it: usize) -> usize {
        (self.start[e] + is) * self.n_t + it
    }

    fn split(&self, b: usize) -> (usize, usize, usize) {
        let it = b % self.n_t;
        let r = b / self.n_t;
        let e = self.start.partition_point(|s| *s <= r) - 1;
        (e, r - self.start[e], it)
    }
}

/// Transport of piecewise-constant data over one step.
///
/// Each source cell is translated as a polygon. Parts that crossed an edge
/// are mirrored back (specular, followed exactly) and, for the diffuse
/// part, binned by arclength and time since the hit. Each wall bin then
/// re-emits its mass along every inward grid velocity as a parallelogram
/// of end positions. Masses are deposited by exact overlap areas.
pub(crate) struct Pusher<'a> {
    grid: &'a PhaseGrid,
    rule: WallRule,
    reverse: bool,
    emit: Vec<Vec<Emission>>,
    bins: WallBins,
    tol: f64,
}

#[derive(Default)]
pub(crate) struct PushAcc {
    pub out: Vec<(usize, f64)>,
    pub wall: Vec<(usize, f64)>,
}

const MAX_CHAIN: usize = 64;

fn merge(mut v: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    v.sort_unstable_by_key(|x| x.0);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for (t, w) in v {
        match merged.last_mut() {
            Some(last) if last.0 == t => last.1 += w,
            _ => merged.push((t, w)),
        }
    }
    merged
}

impl<'a> Pusher<'a> {
    fn new(
        grid: &'a PhaseGrid,
        profile: &MaxwellProfile,
        rule: WallRule,
        reverse: bool,
        wq: WallQuadrature,
        delta: f64,
    ) -> Result<Self> {
        let poly = &grid.poly;
        let vel = &grid.vel;
        if reverse && !vel.n_theta.is_multiple_of(2) {
            return Err(Error::InvalidInput("velocity reversal needs an even angle count".into()));
        }
        let (m_min, _) = profile.bounds(poly.n_edges());
        let mut emit = Vec::with_capacity(poly.n_edges());
        for e in 0..poly.n_edges() {
            let n = poly.normal(e);
            let mut list = Vec::new();
            for k in 0..vel.len() {
                let u = vel.velocity(k);
                let un = u.dot(n);
                if un < 0.0 {
                    let m = profile.value(e, u.norm());
                    list.push(Emission {
                        u,
                        q: -un * m * vel.measure(k),
                    });
                }
            }
            let tot: f64 = list.iter().map(|x| x.q).sum();
            for x in &mut list {
                x.q /= tot;
                if rule.floor_profile {
                    x.q *= m_min / profile.value(e, x.u.norm());
                }
            }
            emit.push(list);
        }
        Ok(Self {
            grid,
            rule,
            reverse,
            emit,
            bins: WallBins::new(grid, wq, delta),
            tol: 1e-13 * poly.diam(),
        })
    }

    /// Mass fractions of source state `s` after the step: direct deposits
    /// and wall-bin masses, each merged and sorted.
    fn push_state(&self, s: usize) -> PushAcc {
        let (c, k) = self.grid.split(s);
        let cell = &self.grid.cells[c];
        let mut v = self.grid.vel.velocity(k);
        if self.reverse {
            v = -v;
        }
        let q = clip::translate(&cell.poly, v * self.bins.delta);
        let mut acc = PushAcc::default();
        self.process(q, v, 1.0 / cell.area, 0, &mut acc);
        PushAcc {
            out: merge(acc.out),
            wall: merge(acc.wall),
        }
    }

    /// Unit mass re-emitted from wall bin `b`.
    fn emit_bin(&self, b: usize) -> PushAcc {
        let (e, is, it) = self.bins.split(b);
        let poly = &self.grid.poly;
        let ds = poly.edge_length(e) / self.bins.n_s[e] as f64;
        let dt = self.bins.delta / self.bins.n_t as f64;
        let (s0, s1) = (is as f64 * ds, (is + 1) as f64 * ds);
        let (t0, t1) = (it as f64 * dt, (it + 1) as f64 * dt);
        let z0 = poly.edge_point(e, s0);
        let z1 = poly.edge_point(e, s1);
        let n = poly.normal(e);
        let mut acc = PushAcc::default();
        for em in &self.emit[e] {
            let mut par = vec![z0 + em.u * t0, z1 + em.u * t0, z1 + em.u * t1, z0 + em.u * t1];
            if clip::signed_area(&par) < 0.0 {
                par.reverse();
            }
            let area = ds * dt * em.u.dot(n).abs();
            self.process(par, em.u, em.q / area, 0, &mut acc);
        }
        PushAcc {
            out: merge(acc.out),
            wall: merge(acc.wall),
        }
    }

    /// Fallback for mass beyond the diffuse depth: bin `b` re-emitted into
    /// the cell at the wall point, ignoring further hits.
    fn lump_bin(&self, b: usize) -> Vec<(usize, f64)> {
        let (e, is, _) = self.bins.split(b);
        let poly = &self.grid.poly;
        let ds = poly.edge_length(e) / self.bins.n_s[e] as f64;
        let z = poly.edge_point(e, (is as f64 + 0.5) * ds) - poly.normal(e) * (1e-9 * poly.diam());
        let cell = self.grid.locate(z);
        let mut acc = PushAcc::default();
        for em in &self.emit[e] {
            self.deposit_nodes(cell, em.u, em.q, &mut acc);
        }
        merge(acc.out)
    }

    fn process(&self, q: Vec<Vec2>, v: Vec2, mult: f64, chain: usize, acc: &mut PushAcc) {
        let poly = &self.grid.poly;
        let total = clip::area(&q);
        if total == 0.0 {
            return;
        }
        if q.iter().all(|p| poly.max_violation(*p) <= self.tol) {
            self.deposit(&q, v, mult, acc);
            return;
        }
        let inside = clip::clip_convex(&q, poly.vertices());
        let mut accounted = clip::area(&inside);
        self.deposit(&inside, v, mult, acc);
        let m = v.perp();
        for f in 0..poly.n_edges() {
            let n = poly.normal(f);
            let vn = v.dot(n);
            if vn <= 0.0 {
                continue;
            }
            let c = poly.offset(f);
            let a = poly.vertex(f);
            let b = poly.vertex(f + 1);
            let (sa, sb) = (m.dot(a), m.dot(b));
            let mut e = clip::clip_halfplane(&q, -n, -c);
            e = clip::clip_halfplane(&e, m, sa.max(sb));
            e = clip::clip_halfplane(&e, -m, -sa.min(sb));
            let ae = clip::area(&e);
            if ae == 0.0 {
                continue;
            }
            accounted += ae;
            if self.rule.specular != 0.0 {
                let img = clip::mirror(&e, n, c);
                let w = mult * self.rule.specular;
                if chain >= MAX_CHAIN {
                    let cell = self.grid.locate(clip::centroid(&img));
                    self.deposit_nodes(cell, reflect(v, n), w * ae, acc);
                } else {
                    self.process(img, reflect(v, n), w, chain + 1, acc);
                }
            }
            if self.rule.diffuse != 0.0 {
                self.deposit_wall(&e, v, f, mult * self.rule.diffuse * ae, acc);
            }
        }
        let rest = total - accounted;
        if rest != 0.0 {
            // rounding slivers; kept so that mass is conserved exactly
            let cell = self.grid.locate(clip::centroid(&q));
            self.deposit_nodes(cell, v, mult * rest, acc);
        }
    }

    /// Bins a piece that crossed edge `f` by hit point and time since hit.
    fn deposit_wall(&self, e: &[Vec2], v: Vec2, f: usize, mass: f64, acc: &mut PushAcc) {
        let poly = &self.grid.poly;
        let n = poly.normal(f);
        let tan = poly.tangent(f);
        let a = poly.vertex(f);
        let c = poly.offset(f);
        let vn = v.dot(n);
        let st: Vec<Vec2> = e
            .iter()
            .map(|x| {
                let t = (n.dot(*x) - c) / vn;
                Vec2::new((*x - v * t - a).dot(tan), t)
            })
            .collect();
        let ns = self.bins.n_s[f];
        let nt = self.bins.n_t;
        let ds = poly.edge_length(f) / ns as f64;
        let dt = self.bins.delta / nt as f64;
        let bin_of = |p: Vec2| {
            (
                ((p.x / ds).floor() as isize).clamp(0, ns as isize - 1) as usize,
                ((p.y / dt).floor() as isize).clamp(0, nt as isize - 1) as usize,
            )
        };
        let area = clip::area(&st);
        let (mut lo, mut hi) = (st[0], st[0]);
        for p in &st {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let (s0, t0) = bin_of(lo);
        let (s1, t1) = bin_of(hi);
        if area <= 0.0 || (s0 == s1 && t0 == t1) {
            let (is, it) = bin_of(clip::centroid(&st));
            acc.wall.push((self.bins.index(f, is, it), mass));
            return;
        }
        let mut placed = 0.0;
        for is in s0..=s1 {
            for it in t0..=t1 {
                let blo = Vec2::new(if is == 0 { f64::MIN } else { is as f64 * ds }, if it == 0 { f64::MIN } else { it as f64 * dt });
                let bhi = Vec2::new(
                    if is + 1 == ns { f64::MAX } else { (is + 1) as f64 * ds },
                    if it + 1 == nt { f64::MAX } else { (it + 1) as f64 * dt },
                );
                let piece = clip::clip_box(&st, blo, bhi);
                let pa = clip::area(&piece);
                if pa > 0.0 {
                    let w = mass * pa / area;
                    placed += w;
                    acc.wall.push((self.bins.index(f, is, it), w));
                }
            }
        }
        let rest = mass - placed;
        if rest != 0.0 {
            let (is, it) = bin_of(clip::centroid(&st));
            acc.wall.push((self.bins.index(f, is, it), rest));
        }
    }

    fn deposit_nodes(&self, cell: usize, v: Vec2, mass: f64, acc: &mut PushAcc) {
        for (k, w) in self.grid.vel.split_velocity(v) {
            if w != 0.0 {
                acc.out.push((self.grid.state(cell, self.node(k)), mass * w));
            }
        }
    }

    fn node(&self, k: usize) -> usize {
        if self.reverse {
            self.grid.vel.reversed(k).expect("checked in new")
        } else {
            k
        }
    }

    fn deposit(&self, q: &[Vec2], v: Vec2, mult: f64, acc: &mut PushAcc) {
        if q.len() < 3 {
            return;
        }
        let g = self.grid;
        let (mut lo, mut hi) = (q[0], q[0]);
        for p in q {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let (ix0, iy0) = g.ixy(lo);
        let (ix1, iy1) = g.ixy(hi);
        let split = g.vel.split_velocity(v);
        let mut put = |cell: usize, a: f64| {
            for (k, w) in split {
                if w != 0.0 {
                    acc.out.push((g.state(cell, self.node(k)), mult * a * w));
                }
            }
        };
        if ix0 == ix1 && iy0 == iy1 {
            put(g.locate(clip::centroid(q)), clip::area(q));
            return;
        }
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                let cell_lo = g.lo + Vec2::new(ix as f64 * g.h.x, iy as f64 * g.h.y);
                let piece = clip::clip_box(q, cell_lo, cell_lo + g.h);
                let a = clip::area(&piece);
                if a == 0.0 {
                    continue;
                }
                let cell = match g.cell_at(ix, iy) {
                    Some(c) => c,
                    None => g.locate(clip::centroid(&piece)),
                };
                put(cell, a);
            }
        }
    }
}

/// Row-gather sparse matrix with a fixed summation order.
#[derive(Debug, Clone, Default)]
struct Gather {
    ptr: Vec<usize>,
    cols: Vec<u32>,
    coef: Vec<f64>,
}

impl Gather {
    /// From per-source lists `(row, value)`; `scale(src, row)` converts
    /// fractions to stored coefficients.
    fn from_sources(n_rows: usize, lists: &[Vec<(usize, f64)>], scale: impl Fn(usize, usize) -> f64) -> Self {
        let mut ptr = vec![0usize; n_rows + 1];
        for l in lists {
            for &(r, _) in l {
                ptr[r + 1] += 1;
            }
        }
        for i in 0..n_rows {
            ptr[i + 1] += ptr[i];
        }
        let nnz = ptr[n_rows];
        let mut cols = vec![0u32; nnz];
        let mut coef = vec![0.0; nnz];
        let mut fill = ptr.clone();
        for (s, l) in lists.iter().enumerate() {
            for &(r, w) in l {
                let p = fill[r];
                cols[p] = s as u32;
                coef[p] = w * scale(s, r);
                fill[r] += 1;
            }
        }
        Self { ptr, cols, coef }
    }

    fn rows(&self) -> usize {
        self.ptr.len() - 1
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows())
            .into_par_iter()
            .with_min_len(512)
            .map(|r| {
                let mut acc = 0.0;
                for p in self.ptr[r]..self.ptr[r + 1] {
                    acc += self.coef[p] * x[self.cols[p] as usize];
                }
                acc
            })
            .collect()
    }

    fn apply_add(&self, x: &[f64], y: &mut [f64]) {
        let z = self.apply(x);
        for (a, b) in y.iter_mut().zip(z) {
            *a += b;
        }
    }

    /// `xᵀ A` as a vector over columns.
    fn apply_t(&self, x: &[f64], n_cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_cols];
        for r in 0..self.rows() {
            for p in self.ptr[r]..self.ptr[r + 1] {
                out[self.cols[p] as usize] += self.coef[p] * x[r];
            }
        }
        out
    }

    fn nnz(&self) -> usize {
        self.coef.len()
    }
}

/// Sparse transport operator `K(δ)` acting on phase-space densities:
/// `K = D + Σ_{l<depth} E Wˡ F + L W^depth F`, with `D` the direct and
/// specular part, `F` the binning of diffuse wall mass, `E` re-emission
/// from wall bins, `W` wall bins hit again within the step and `L` the
/// re-emission that ignores further hits.
///
/// Every product is a row gather summed in a fixed order, so results do
/// not depend on the thread count.
#[derive(Debug, Clone)]
pub struct TransportOperator {
    pub grid: Arc<PhaseGrid>,
    pub delta: f64,
    pub rule: WallRule,
    pub reversed: bool,
    /// Diffuse re-emissions followed within one step.
    pub depth: usize,
    d: Gather,
    f: Gather,
    e: Gather,
    w: Gather,
    l: Gather,
    /// Largest fraction of any source's mass that reaches the `L` fallback.
    pub max_lumped: f64,
}

impl TransportOperator {
    pub fn build(grid: Arc<PhaseGrid>, profile: &MaxwellProfile, delta: f64, rule: WallRule, depth: usize) -> Result<Self> {
        Self::build_with(grid, profile, delta, rule, depth, false, WallQuadrature::default())
    }

    /// `Π K(δ) Π` with `Π` the velocity reversal: transport backward in
    /// time when paired with [`WallRule::inverse`].
    pub fn build_reversed(grid: Arc<PhaseGrid>, profile: &MaxwellProfile, delta: f64, rule: WallRule, depth: usize) -> Result<Self> {
        Self::build_with(grid, profile, delta, rule, depth, true, WallQuadrature::default())
    }

    pub fn build_with(
        grid: Arc<PhaseGrid>,
        profile: &MaxwellProfile,
        delta: f64,
        rule: WallRule,
        depth: usize,
        reversed: bool,
        wq: WallQuadrature,
    ) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be finite and >= 0, got {delta}")));
        }
        if grid.len() > u32::MAX as usize {
            return Err(Error::InvalidInput("phase grid too large".into()));
        }
        let pusher = Pusher::new(&grid, profile, rule, reversed, wq, delta)?;
        let n = grid.len();
        let nb = pusher.bins.len();
        let src: Vec<PushAcc> = (0..n).into_par_iter().map(|s| pusher.push_state(s)).collect();
        let emitted: Vec<PushAcc> = if delta > 0.0 && rule.diffuse != 0.0 {
            (0..nb).into_par_iter().map(|b| pusher.emit_bin(b)).collect()
        } else {
            (0..nb).map(|_| PushAcc::default()).collect()
        };
        let lumps: Vec<Vec<(usize, f64)>> = if delta > 0.0 && rule.diffuse != 0.0 {
            (0..nb).into_par_iter().map(|b| pusher.lump_bin(b)).collect()
        } else {
            vec![Vec::new(); nb]
        };
        let meas: Vec<f64> = (0..n).map(|s| grid.measure(s)).collect();
        let (src_out, src_wall): (Vec<_>, Vec<_>) = src.into_iter().map(|a| (a.out, a.wall)).unzip();
        let (em_out, em_wall): (Vec<_>, Vec<_>) = emitted.into_iter().map(|a| (a.out, a.wall)).unzip();
        let d = Gather::from_sources(n, &src_out, |s, t| meas[s] / meas[t]);
        let f = Gather::from_sources(nb, &src_wall, |s, _| meas[s]);
        let e = Gather::from_sources(n, &em_out, |_, t| 1.0 / meas[t]);
        let w = Gather::from_sources(nb, &em_wall, |_, _| 1.0);
        let l = Gather::from_sources(n, &lumps, |_, t| 1.0 / meas[t]);
        let mut op = Self {
            grid,
            delta,
            rule,
            reversed,
            depth,
            d,
            f,
            e,
            w,
            l,
            max_lumped: 0.0,
        };
        // per-source mass reaching the fallback: 1ᵀ |W|^depth |F| by transposes
        let mut r = vec![1.0; nb];
        for _ in 0..depth {
            r = op.w.apply_t(&r, nb).iter().map(|x| x.abs()).collect();
        }
        let per_src = op.f.apply_t(&r, n);
        op.max_lumped = per_src
            .iter()
            .zip(&meas)
            .map(|(x, m)| (x / m).abs())
            .fold(0.0, f64::max);
        Ok(op)
    }

    pub fn nnz(&self) -> usize {
        self.d.nnz() + self.f.nnz() + self.e.nnz() + self.w.nnz() + self.l.nnz()
    }

    pub fn n_wall_bins(&self) -> usize {
        self.f.rows()
    }

    pub fn apply_values(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.d.apply(x);
        if self.f.nnz() == 0 {
            return y;
        }
        let mut m = self.f.apply(x);
        for _ in 0..self.depth {
            self.e.apply_add(&m, &mut y);
            m = self.w.apply(&m);
        }
        self.l.apply_add(&m, &mut y);
        y
    }

    pub fn apply(&self, p: &super::PhaseDensity) -> super::PhaseDensity {
        p.with_values(self.apply_values(&p.values))
    }

    /// `K^n p`.
    pub fn apply_n(&self, p: &super::PhaseDensity, n: usize) -> super::PhaseDensity {
        let mut x = p.values.clone();
        for _ in 0..n {
            x = self.apply_values(&x);
        }
        p.with_values(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ConvexPolygon, VelocityAnnulus};
    use crate::transport::grid::{PhaseDensity, VelocityGrid};

    fn square(n: usize, nt: usize, ns: usize) -> Arc<PhaseGrid> {
        Arc::new(PhaseGrid::unit_square(n, nt, ns, VelocityAnnulus::new(1.0, 2.0).unwrap()).unwrap())
    }

    fn bumpy(g: &Arc<PhaseGrid>) -> PhaseDensity {
        PhaseDensity::from_fn(g.clone(), |r, v| 1.0 + 0.5 * (4.0 * r.x).sin() * r.y + 0.2 * v.x + 0.1 * v.y * v.y)
    }

    #[test]
    fn mass_is_conserved() {
        let g = square(6, 8, 2);
        let m = MaxwellProfile::per_edge(g.vel.annulus, vec![0.5, -0.3, 1.0, 0.0]).unwrap();
        let p = bumpy(&g);
        for rule in [WallRule::maxwell(0.0), WallRule::maxwell(0.6), WallRule::inverse(0.7).unwrap()] {
            for delta in [0.05, 0.4, 0.7] {
                let k = TransportOperator::build(g.clone(), &m, delta, rule, 8).unwrap();
                let q = k.apply(&p);
                assert!((q.mass() - p.mass()).abs() < 1e-12 * p.mass(), "{rule:?} {delta}");
                assert!(k.max_lumped < 0.05, "{}", k.max_lumped);
            }
        }
    }

    #[test]
    fn hexagon_push_conserves_mass() {
        let va = VelocityAnnulus::new(1.0, 2.0).unwrap();
        let poly = ConvexPolygon::regular(6, 1.0).unwrap();
        let g = Arc::new(PhaseGrid::new(poly, VelocityGrid::new(va, 12, 1).unwrap(), 8, 8).unwrap());
        let m = MaxwellProfile::constant(va);
        let k = TransportOperator::build(g.clone(), &m, 0.7, WallRule::maxwell(0.5), 8).unwrap();
        let p = bumpy(&g);
        let q = k.apply(&p);
        assert!((q.mass() - p.mass()).abs() < 1e-12 * p.mass());
        assert!(q.ess_inf() >= 0.0);
    }

    #[test]
    fn backward_push_undoes_forward_push() {
        let g = square(8, 8, 1);
        let m = MaxwellProfile::constant(g.vel.annulus);
        let omega = 0.8;
        let fwd = TransportOperator::build(g.clone(), &m, 0.05, WallRule::maxwell(omega), 8).unwrap();
        let bwd = TransportOperator::build_reversed(g.clone(), &m, 0.05, WallRule::inverse(omega).unwrap(), 8).unwrap();
        // smooth data, so only the cell-averaging error remains
        let p = bumpy(&g);
        let q = bwd.apply(&fwd.apply(&p));
        assert!((q.mass() - p.mass()).abs() < 1e-12);
        assert!(q.l1_dist(&p) / p.l1() < 0.05, "{}", q.l1_dist(&p) / p.l1());
    }

    #[test]
    fn uniform_is_fixed_for_constant_profile() {
        let g = square(6, 8, 2);
        let m = MaxwellProfile::constant(g.vel.annulus);
        for delta in [0.1, 0.3] {
            let k = TransportOperator::build(g.clone(), &m, delta, WallRule::maxwell(0.4), 12).unwrap();
            let u = PhaseDensity::uniform(g.clone());
            let ku = k.apply(&u);
            assert!(ku.l1_dist(&u) < 1e-9, "{} {}", ku.l1_dist(&u), k.max_lumped);
        }
    }

    #[test]
    #[ignore]
    fn timing() {
        let g = square(16, 16, 4);
        let m = MaxwellProfile::per_edge(g.vel.annulus, vec![0.5, -0.3, 1.0, 0.0]).unwrap();
        for depth in [4, 8, 16] {
            let t0 = std::time::Instant::now();
            let k = TransportOperator::build(g.clone(), &m, 0.5, WallRule::maxwell(0.5), depth).unwrap();
            let t1 = t0.elapsed();
            let p = bumpy(&g);
            let _ = k.apply(&p);
            eprintln!("depth {depth}: build {t1:?} apply {:?} lumped {:e} nnz {}", t0.elapsed() - t1, k.max_lumped, k.nnz());
        }
    }
}

use crate::error::{Error, Result};
use crate::geometry::{clip, ConvexPolygon, Vec2, VelocityAnnulus};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Midpoint grid on the velocity annulus: angles `θ_j = (j + ½) 2π/N`,
/// speeds at the centres of `K` uniform shells.
///
/// With `N` divisible by 4 the angle set is closed under reflection in
/// both coordinate axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    pub annulus: VelocityAnnulus,
    pub n_theta: usize,
    pub n_speed: usize,
}

impl VelocityGrid {
    pub fn new(annulus: VelocityAnnulus, n_theta: usize, n_speed: usize) -> Result<Self> {
        if n_theta < 2 || n_speed == 0 {
            return Err(Error::InvalidInput("velocity grid needs n_theta >= 2 and n_speed >= 1".into()));
        }
        Ok(Self {
            annulus,
            n_theta,
            n_speed,
        })
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_speed
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, itheta: usize, ispeed: usize) -> usize {
        itheta * self.n_speed + ispeed
    }

    pub fn split(&self, k: usize) -> (usize, usize) {
        (k / self.n_speed, k % self.n_speed)
    }

    pub fn dtheta(&self) -> f64 {
        2.0 * PI / self.n_theta as f64
    }

    pub fn theta(&self, itheta: usize) -> f64 {
        (itheta as f64 + 0.5) * self.dtheta()
    }

    pub fn speed_bounds(&self, ispeed: usize) -> (f64, f64) {
        let h = (self.annulus.v_max - self.annulus.v_min) / self.n_speed as f64;
        (
            self.annulus.v_min + ispeed as f64 * h,
            self.annulus.v_min + (ispeed + 1) as f64 * h,
        )
    }

    pub fn speed(&self, ispeed: usize) -> f64 {
        let (a, b) = self.speed_bounds(ispeed);
        0.5 * (a + b)
    }

    pub fn velocity(&self, k: usize) -> Vec2 {
        let (j, i) = self.split(k);
        Vec2::polar(self.speed(i), self.theta(j))
    }

    /// Measure `Δθ (α₊² - α₋²)/2` of velocity cell `k`.
    pub fn measure(&self, k: usize) -> f64 {
        let (a, b) = self.speed_bounds(k % self.n_speed);
        self.dtheta() * (b * b - a * a) / 2.0
    }

    pub fn speed_index(&self, speed: f64) -> usize {
        let h = (self.annulus.v_max - self.annulus.v_min) / self.n_speed as f64;
        (((speed - self.annulus.v_min) / h) as isize).clamp(0, self.n_speed as isize - 1) as usize
    }

    /// Cell containing `v` (angle and speed bins).
    pub fn locate(&self, v: Vec2) -> usize {
        let th = v.y.atan2(v.x).rem_euclid(2.0 * PI);
        let j = ((th / self.dtheta()) as usize).min(self.n_theta - 1);
        self.index(j, self.speed_index(v.norm()))
    }

    /// Node `-v`.
    pub fn reversed(&self, k: usize) -> Result<usize> {
        if !self.n_theta.is_multiple_of(2) {
            return Err(Error::InvalidInput("velocity reversal needs an even angle count".into()));
        }
        let (j, i) = self.split(k);
        Ok(self.index((j + self.n_theta / 2) % self.n_theta, i))
    }

    /// Linear split of an off-grid direction between the two neighbouring
    /// angle nodes (a single node when `v` lies on one). The speed node is
    /// the one containing `|v|`.
    pub fn split_velocity(&self, v: Vec2) -> [(usize, f64); 2] {
        let i = self.speed_index(v.norm());
        let x = (v.y.atan2(v.x) / self.dtheta() - 0.5).rem_euclid(self.n_theta as f64);
        let j0 = x.floor();
        let f = x - j0;
        let j0 = (j0 as usize) % self.n_theta;
        let j1 = (j0 + 1) % self.n_theta;
        if f < 1e-9 {
            [(self.index(j0, i), 1.0), (self.index(j0, i), 0.0)]
        } else if f > 1.0 - 1e-9 {
            [(self.index(j1, i), 1.0), (self.index(j1, i), 0.0)]
        } else {
            [(self.index(j0, i), 1.0 - f), (self.index(j1, i), f)]
        }
    }
}

/// A spatial cell: a grid square clipped to the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCell {
    pub ix: usize,
    pub iy: usize,
    pub poly: Vec<Vec2>,
    pub area: f64,
    pub centroid: Vec2,
    /// True when the square lies entirely inside the domain.
    pub full: bool,
}

/// Cartesian cells over the bounding box of the domain, clipped to it,
/// times a [`VelocityGrid`]. State `(c, k)` has index `c * n_v + k`.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    pub poly: ConvexPolygon,
    pub vel: VelocityGrid,
    pub nx: usize,
    pub ny: usize,
    pub lo: Vec2,
    pub h: Vec2,
    pub cells: Vec<SpatialCell>,
    lookup: Vec<Option<usize>>,
}

impl PhaseGrid {
    pub fn new(poly: ConvexPolygon, vel: VelocityGrid, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidInput("spatial grid sizes must be positive".into()));
        }
        let (lo, hi) = poly.bbox();
        let h = Vec2::new((hi.x - lo.x) / nx as f64, (hi.y - lo.y) / ny as f64);
        let mut cells = Vec::new();
        let mut lookup = vec![None; nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                let a = lo + Vec2::new(ix as f64 * h.x, iy as f64 * h.y);
                let b = a + h;
                let sq = vec![a, Vec2::new(b.x, a.y), b, Vec2::new(a.x, b.y)];
                let full = sq.iter().all(|p| poly.max_violation(*p) <= 1e-14 * poly.diam());
                let cp = if full { sq } else { clip::clip_convex(&sq, poly.vertices()) };
                let area = clip::area(&cp);
                if area > 1e-12 * h.x * h.y {
                    lookup[iy * nx + ix] = Some(cells.len());
                    let centroid = clip::centroid(&cp);
                    cells.push(SpatialCell {
                        ix,
                        iy,
                        poly: cp,
                        area,
                        centroid,
                        full,
                    });
                }
            }
        }
        Ok(Self {
            poly,
            vel,
            nx,
            ny,
            lo,
            h,
            cells,
            lookup,
        })
    }

    pub fn unit_square(n: usize, n_theta: usize, n_speed: usize, annulus: VelocityAnnulus) -> Result<Self> {
        Self::new(ConvexPolygon::unit_square(), VelocityGrid::new(annulus, n_theta, n_speed)?, n, n)
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_v(&self) -> usize {
        self.vel.len()
    }

    pub fn len(&self) -> usize {
        self.n_cells() * self.n_v()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, cell: usize, k: usize) -> usize {
        cell * self.n_v() + k
    }

    pub fn split(&self, s: usize) -> (usize, usize) {
        (s / self.n_v(), s % self.n_v())
    }

    pub fn measure(&self, s: usize) -> f64 {
        let (c, k) = self.split(s);
        self.cells[c].area * self.vel.measure(k)
    }

    pub fn cell_at(&self, ix: usize, iy: usize) -> Option<usize> {
        if ix < self.nx && iy < self.ny {
            self.lookup[iy * self.nx + ix]
        } else {
            None
        }
    }

    /// Grid column/row containing `p`, clamped to the grid.
    pub fn ixy(&self, p: Vec2) -> (usize, usize) {
        let fx = ((p.x - self.lo.x) / self.h.x).floor() as isize;
        let fy = ((p.y - self.lo.y) / self.h.y).floor() as isize;
        (
            fx.clamp(0, self.nx as isize - 1) as usize,
            fy.clamp(0, self.ny as isize - 1) as usize,
        )
    }

    /// Active cell containing `p`, or the active cell with the nearest
    /// centroid when `p` falls in a dropped sliver or outside.
    pub fn locate(&self, p: Vec2) -> usize {
        let (ix, iy) = self.ixy(p);
        if let Some(c) = self.cell_at(ix, iy) {
            return c;
        }
        let mut best = (f64::INFINITY, 0);
        for (i, c) in self.cells.iter().enumerate() {
            let d = c.centroid.dist(p);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}

/// A grid function on phase space: one value per (cell, velocity) state.
#[derive(Debug, Clone)]
pub struct PhaseDensity {
    pub grid: Arc<PhaseGrid>,
    pub values: Vec<f64>,
}

impl PhaseDensity {
    pub fn zeros(grid: Arc<PhaseGrid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    /// The uniform probability density `1/(|Ω||V|)`.
    pub fn uniform(grid: Arc<PhaseGrid>) -> Self {
        let total: f64 = (0..grid.len()).map(|s| grid.measure(s)).sum();
        let n = grid.len();
        Self {
            grid,
            values: vec![1.0 / total; n],
        }
    }

    /// Samples `f(r, v)` at cell centroids and velocity nodes.
    pub fn from_fn(grid: Arc<PhaseGrid>, f: impl Fn(Vec2, Vec2) -> f64) -> Self {
        let nv = grid.n_v();
        let mut values = Vec::with_capacity(grid.len());
        for c in &grid.cells {
            for k in 0..nv {
                values.push(f(c.centroid, grid.vel.velocity(k)));
            }
        }
        Self { grid, values }
    }

    pub fn from_values(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "value count does not match the grid");
        Self { grid, values }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    /// `∫∫ p dr dv`.
    pub fn mass(&self) -> f64 {
        self.values.iter().enumerate().map(|(s, v)| v * self.grid.measure(s)).sum()
    }

    /// `‖p‖₁`.
    pub fn l1(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(s, v)| v.abs() * self.grid.measure(s))
            .sum()
    }

    pub fn l1_dist(&self, o: &PhaseDensity) -> f64 {
        self.values
            .iter()
            .zip(&o.values)
            .enumerate()
            .map(|(s, (a, b))| (a - b).abs() * self.grid.measure(s))
            .sum()
    }

    pub fn ess_inf(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn ess_sup(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    /// Rescales to unit mass.
    pub fn normalized(mut self) -> Self {
        let m = self.mass();
        self.scale(1.0 / m);
        self
    }

    pub fn axpy(&mut self, a: f64, x: &PhaseDensity) {
        for (y, x) in self.values.iter_mut().zip(&x.values) {
            *y += a * x;
        }
    }

    /// Spatial marginal `∫ p dv` per cell.
    pub fn spatial_marginal(&self) -> Vec<f64> {
        let nv = self.grid.n_v();
        self.values
            .chunks(nv)
            .map(|row| row.iter().enumerate().map(|(k, v)| v * self.grid.vel.measure(k)).sum())
            .collect()
    }

    /// Speed marginal `∫∫ p dr dθ` per speed shell.
    pub fn speed_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.vel.n_speed];
        for (s, v) in self.values.iter().enumerate() {
            let (_, k) = self.grid.split(s);
            out[k % self.grid.vel.n_speed] += v * self.grid.measure(s);
        }
        out
    }

    /// CSV rows `x,y,theta,speed,value` at cell centroids and velocity nodes.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,theta,speed,value")?;
        for (s, v) in self.values.iter().enumerate() {
            let (c, k) = self.grid.split(s);
            let (j, i) = self.grid.vel.split(k);
            let p = self.grid.cells[c].centroid;
            writeln!(
                w,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.17e}",
                p.x,
                p.y,
                self.grid.vel.theta(j),
                self.grid.vel.speed(i),
                v
            )?;
        }
        Ok(())
    }
}

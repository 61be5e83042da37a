use crate::error::{Error, Result};
use crate::geometry::{BoundaryPoint, ConvexPolygon, Vec2, VelocityAnnulus};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

/// Cells of the outgoing wall phase space: per edge, uniform arclength ×
/// uniform angle `φ ∈ (-π/2, π/2)` to the outward normal × uniform speed.
///
/// Cell weights integrate the flux factor `w·n` exactly over each cell:
/// `Δs (sin φ₊ - sin φ₋)(α₊³ - α₋³)/3`.
#[derive(Debug, Clone)]
pub struct BoundaryGrid {
    pub poly: ConvexPolygon,
    pub annulus: VelocityAnnulus,
    pub n_s: usize,
    pub n_phi: usize,
    pub n_speed: usize,
    flux_w: Vec<f64>,
}

/// Multi-index of a boundary cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryCell {
    pub edge: usize,
    pub is: usize,
    pub iphi: usize,
    pub ispeed: usize,
}

impl BoundaryGrid {
    pub fn new(poly: ConvexPolygon, annulus: VelocityAnnulus, n_s: usize, n_phi: usize, n_speed: usize) -> Result<Self> {
        if n_s == 0 || n_phi == 0 || n_speed == 0 {
            return Err(Error::InvalidInput("boundary grid sizes must be positive".into()));
        }
        let mut g = Self {
            poly,
            annulus,
            n_s,
            n_phi,
            n_speed,
            flux_w: Vec::new(),
        };
        let mut fw = Vec::with_capacity(n_phi * n_speed);
        for ip in 0..n_phi {
            let (p0, p1) = g.phi_bounds(ip);
            for ia in 0..n_speed {
                let (a0, a1) = g.speed_bounds(ia);
                fw.push((p1.sin() - p0.sin()) * (a1.powi(3) - a0.powi(3)) / 3.0);
            }
        }
        g.flux_w = fw;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.poly.n_edges() * self.n_s * self.n_phi * self.n_speed
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of (edge, arclength) cells.
    pub fn n_positions(&self) -> usize {
        self.poly.n_edges() * self.n_s
    }

    /// Number of velocity cells at one position.
    pub fn n_velocities(&self) -> usize {
        self.n_phi * self.n_speed
    }

    pub fn index(&self, c: BoundaryCell) -> usize {
        ((c.edge * self.n_s + c.is) * self.n_phi + c.iphi) * self.n_speed + c.ispeed
    }

    pub fn cell(&self, i: usize) -> BoundaryCell {
        let ispeed = i % self.n_speed;
        let r = i / self.n_speed;
        let iphi = r % self.n_phi;
        let r = r / self.n_phi;
        BoundaryCell {
            edge: r / self.n_s,
            is: r % self.n_s,
            iphi,
            ispeed,
        }
    }

    pub fn ds(&self, edge: usize) -> f64 {
        self.poly.edge_length(edge) / self.n_s as f64
    }

    pub fn s_center(&self, edge: usize, is: usize) -> f64 {
        (is as f64 + 0.5) * self.ds(edge)
    }

    pub fn dphi(&self) -> f64 {
        PI / self.n_phi as f64
    }

    pub fn phi_bounds(&self, ip: usize) -> (f64, f64) {
        let d = self.dphi();
        (-0.5 * PI + ip as f64 * d, -0.5 * PI + (ip + 1) as f64 * d)
    }

    pub fn phi_center(&self, ip: usize) -> f64 {
        -0.5 * PI + (ip as f64 + 0.5) * self.dphi()
    }

    pub fn speed_bounds(&self, ia: usize) -> (f64, f64) {
        let h = (self.annulus.v_max - self.annulus.v_min) / self.n_speed as f64;
        (self.annulus.v_min + ia as f64 * h, self.annulus.v_min + (ia + 1) as f64 * h)
    }

    pub fn speed_center(&self, ia: usize) -> f64 {
        let (a, b) = self.speed_bounds(ia);
        0.5 * (a + b)
    }

    /// `∫∫ w·n dw` over velocity cell `(iphi, ispeed)`, per unit arclength.
    pub fn flux_weight(&self, iphi: usize, ispeed: usize) -> f64 {
        self.flux_w[iphi * self.n_speed + ispeed]
    }

    /// Flux-weighted measure of cell `i`.
    pub fn measure(&self, i: usize) -> f64 {
        let c = self.cell(i);
        self.ds(c.edge) * self.flux_weight(c.iphi, c.ispeed)
    }

    /// Outgoing velocity (`w·n ≥ 0`) at the centre of a velocity cell.
    pub fn outgoing_velocity(&self, edge: usize, iphi: usize, ispeed: usize) -> Vec2 {
        let phi = self.phi_center(iphi);
        let n = self.poly.normal(edge);
        let t = self.poly.tangent(edge);
        (n * phi.cos() + t * phi.sin()) * self.speed_center(ispeed)
    }

    /// Centre of cell `i` as an outgoing wall state.
    pub fn node(&self, i: usize) -> BoundaryPoint {
        let c = self.cell(i);
        BoundaryPoint {
            edge: c.edge,
            s: self.s_center(c.edge, c.is),
            w: self.outgoing_velocity(c.edge, c.iphi, c.ispeed),
        }
    }

    /// Angle of `w` to the outward normal of `edge`, in `(-π, π]`.
    pub fn phi_of(&self, edge: usize, w: Vec2) -> f64 {
        let n = self.poly.normal(edge);
        let t = self.poly.tangent(edge);
        w.dot(t).atan2(w.dot(n))
    }

    /// Cell containing an outgoing wall state (clamped to the grid).
    pub fn locate(&self, b: &BoundaryPoint) -> usize {
        let phi = self.phi_of(b.edge, b.w);
        let is = ((b.s / self.ds(b.edge)) as isize).clamp(0, self.n_s as isize - 1) as usize;
        let ip = (((phi + 0.5 * PI) / self.dphi()) as isize).clamp(0, self.n_phi as isize - 1) as usize;
        self.index(BoundaryCell {
            edge: b.edge,
            is,
            iphi: ip,
            ispeed: self.speed_index(b.w.norm()),
        })
    }

    pub fn speed_index(&self, speed: f64) -> usize {
        let h = (self.annulus.v_max - self.annulus.v_min) / self.n_speed as f64;
        (((speed - self.annulus.v_min) / h) as isize).clamp(0, self.n_speed as isize - 1) as usize
    }

    /// Bilinear weights in (arclength, angle) between cell centres, nearest
    /// cell in speed. Centres beyond the first/last are clamped.
    pub fn interp_weights(&self, b: &BoundaryPoint) -> [(usize, f64); 4] {
        let phi = self.phi_of(b.edge, b.w);
        let ia = self.speed_index(b.w.norm());
        let (is0, is1, ts) = bracket(b.s / self.ds(b.edge) - 0.5, self.n_s);
        let (ip0, ip1, tp) = bracket((phi + 0.5 * PI) / self.dphi() - 0.5, self.n_phi);
        let idx = |is, ip| {
            self.index(BoundaryCell {
                edge: b.edge,
                is,
                iphi: ip,
                ispeed: ia,
            })
        };
        [
            (idx(is0, ip0), (1.0 - ts) * (1.0 - tp)),
            (idx(is1, ip0), ts * (1.0 - tp)),
            (idx(is0, ip1), (1.0 - ts) * tp),
            (idx(is1, ip1), ts * tp),
        ]
    }
}

fn bracket(x: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 || x <= 0.0 {
        return (0, 0, 0.0);
    }
    if x >= (n - 1) as f64 {
        return (n - 1, n - 1, 0.0);
    }
    let i = x.floor() as usize;
    (i, i + 1, x - i as f64)
}

/// A piecewise-constant function on the outgoing wall phase space.
#[derive(Debug, Clone)]
pub struct BoundaryDensity {
    pub grid: Arc<BoundaryGrid>,
    pub values: Vec<f64>,
}

impl BoundaryDensity {
    pub fn zeros(grid: Arc<BoundaryGrid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn constant(grid: Arc<BoundaryGrid>, c: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![c; n] }
    }

    pub fn from_fn(grid: Arc<BoundaryGrid>, f: impl Fn(&BoundaryPoint) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self { grid, values }
    }

    /// Weighted norm `Σ |f| (w·n) dμ`.
    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v.abs() * self.grid.measure(i))
            .sum()
    }

    /// Weighted integral `Σ f (w·n) dμ`.
    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.grid.measure(i))
            .sum()
    }

    /// Interpolated value at an outgoing wall state.
    pub fn eval(&self, b: &BoundaryPoint) -> f64 {
        self.grid
            .interp_weights(b)
            .iter()
            .map(|&(i, w)| w * self.values[i])
            .sum()
    }

    /// CSV rows `edge,s,theta,alpha,value`; `theta` is the absolute
    /// direction of the outgoing velocity.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "edge,s,theta,alpha,value")?;
        for i in 0..self.grid.len() {
            let c = self.grid.cell(i);
            let v = self.grid.outgoing_velocity(c.edge, c.iphi, c.ispeed);
            writeln!(
                w,
                "{},{:.12e},{:.12e},{:.12e},{:.17e}",
                c.edge,
                self.grid.s_center(c.edge, c.is),
                v.angle(),
                self.grid.speed_center(c.ispeed),
                self.values[i]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> BoundaryGrid {
        BoundaryGrid::new(
            ConvexPolygon::unit_square(),
            VelocityAnnulus::new(1.0, 2.0).unwrap(),
            8,
            6,
            3,
        )
        .unwrap()
    }

    #[test]
    fn index_roundtrip() {
        let g = grid();
        for i in 0..g.len() {
            assert_eq!(g.index(g.cell(i)), i);
            assert_eq!(g.locate(&g.node(i)), i);
        }
    }

    #[test]
    fn total_measure_is_exact() {
        let g = grid();
        let total: f64 = (0..g.len()).map(|i| g.measure(i)).sum();
        // perimeter × 2 × (8 - 1)/3
        assert!((total - 4.0 * 14.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_reproduces_nodes() {
        let g = Arc::new(grid());
        let f = BoundaryDensity::from_fn(g.clone(), |b| b.s + b.w.x);
        for i in (0..g.len()).step_by(7) {
            assert!((f.eval(&g.node(i)) - f.values[i]).abs() < 1e-12);
        }
    }
}

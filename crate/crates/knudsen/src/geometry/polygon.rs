use super::Vec2;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Absolute tolerances, all scaled by the domain diameter (and `v_max` for
/// the tangency test).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeomTolerances {
    /// Distance below which a point counts as lying on an edge.
    pub geom: f64,
    /// Distance to a vertex below which a ray counts as degenerate.
    pub vertex: f64,
    /// Minimum |v·n| for a non-tangential wall crossing.
    pub tangent: f64,
}

impl GeomTolerances {
    pub fn for_scale(diam: f64, v_max: f64) -> Self {
        Self {
            geom: 1e-12 * diam,
            vertex: 1e-9 * diam,
            tangent: 1e-10 * v_max,
        }
    }
}

/// A strictly convex polygon with counterclockwise vertices.
///
/// Edge `i` runs from vertex `i` to vertex `i+1`; arclength on an edge is
/// measured from its first vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Vec2>,
    normals: Vec<Vec2>,
    tangents: Vec<Vec2>,
    lengths: Vec<f64>,
    offsets: Vec<f64>,
    diam: f64,
    s_min: f64,
    xi_min: f64,
    area: f64,
    tol: GeomTolerances,
}

/// Where a backward ray leaves the polygon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitHit {
    /// Exit time `T = inf{s > 0 : r - s v ∉ Ω}`.
    pub t: f64,
    /// The boundary point `r - T v`.
    pub point: Vec2,
    pub edge: usize,
    /// Arclength of `point` along `edge`.
    pub s: f64,
}

impl ConvexPolygon {
    /// Validates and builds a polygon. Vertices must be counterclockwise with
    /// no three consecutive ones collinear.
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidInput(format!(
                "polygon needs at least 3 vertices, got {n}"
            )));
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(Error::InvalidInput("non-finite vertex".into()));
        }
        let mut diam: f64 = 0.0;
        for (i, a) in vertices.iter().enumerate() {
            for b in &vertices[i + 1..] {
                diam = diam.max(a.dist(*b));
            }
        }
        let mut lengths = Vec::with_capacity(n);
        let mut tangents = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        let mut area2 = 0.0;
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let d = b - a;
            let len = d.norm();
            if len <= 1e-12 * diam {
                return Err(Error::InvalidInput(format!("edge {i} has zero length")));
            }
            let t = d * (1.0 / len);
            let nrm = Vec2::new(t.y, -t.x);
            lengths.push(len);
            tangents.push(t);
            normals.push(nrm);
            offsets.push(nrm.dot(a));
            area2 += a.cross(b);
        }
        if area2 <= 0.0 {
            return Err(Error::InvalidInput(
                "vertices must be ordered counterclockwise".into(),
            ));
        }
        let mut xi_min = PI;
        for i in 0..n {
            let t0 = tangents[i];
            let t1 = tangents[(i + 1) % n];
            let turn = t0.cross(t1).atan2(t0.dot(t1));
            if turn <= 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "polygon is not strictly convex at vertex {}",
                    (i + 1) % n
                )));
            }
            xi_min = xi_min.min(PI - turn);
        }
        let s_min = lengths.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(Self {
            vertices,
            normals,
            tangents,
            lengths,
            offsets,
            diam,
            s_min,
            xi_min,
            area: 0.5 * area2,
            tol: GeomTolerances::for_scale(diam, 1.0),
        })
    }

    /// The unit square `[0,1]²`.
    pub fn unit_square() -> Self {
        Self::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ])
        .expect("unit square is valid")
    }

    /// Regular `n`-gon with the given side length, centred at the origin.
    pub fn regular(n: usize, side: f64) -> Result<Self> {
        if n < 3 || side <= 0.0 {
            return Err(Error::InvalidInput("regular polygon needs n >= 3, side > 0".into()));
        }
        let radius = side / (2.0 * (PI / n as f64).sin());
        let verts = (0..n)
            .map(|k| Vec2::polar(radius, 2.0 * PI * k as f64 / n as f64))
            .collect();
        Self::new(verts)
    }

    /// Rescales the tangency tolerance to the largest speed in use.
    pub fn with_speed_scale(mut self, v_max: f64) -> Self {
        self.tol = GeomTolerances::for_scale(self.diam, v_max);
        self
    }

    pub fn tolerances(&self) -> GeomTolerances {
        self.tol
    }

    pub fn n_edges(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Vec2 {
        self.vertices[i % self.vertices.len()]
    }

    /// Outward unit normal of edge `i`.
    pub fn normal(&self, i: usize) -> Vec2 {
        self.normals[i]
    }

    /// Unit direction of edge `i`.
    pub fn tangent(&self, i: usize) -> Vec2 {
        self.tangents[i]
    }

    pub fn edge_length(&self, i: usize) -> f64 {
        self.lengths[i]
    }

    /// Value `c` of the supporting line `n·x = c` of edge `i`.
    pub fn offset(&self, i: usize) -> f64 {
        self.offsets[i]
    }

    pub fn perimeter(&self) -> f64 {
        self.lengths.iter().sum()
    }

    pub fn diam(&self) -> f64 {
        self.diam
    }

    pub fn s_min(&self) -> f64 {
        self.s_min
    }

    /// Smallest inner angle in radians.
    pub fn xi_min(&self) -> f64 {
        self.xi_min
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bbox(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    /// Point at arclength `s` on edge `i`.
    pub fn edge_point(&self, i: usize, s: f64) -> Vec2 {
        self.vertices[i] + self.tangents[i] * s
    }

    /// Signed distance-like slack: `max_i (n_i·p - c_i)`, nonpositive inside.
    pub fn max_violation(&self, p: Vec2) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, c)| n.dot(p) - c)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Membership in the closed polygon up to `tol.geom`.
    pub fn contains(&self, p: Vec2) -> bool {
        self.max_violation(p) <= self.tol.geom
    }

    /// Exit time of the backward ray `s ↦ r - s v` and its boundary point.
    ///
    /// Rays leaving within `tol.vertex` of a vertex, or crossing the exit
    /// edge with `|v·n| < tol.tangent`, are reported as degenerate.
    pub fn exit_time(&self, r: Vec2, v: Vec2) -> Result<ExitHit> {
        self.exit_time_excluding(r, v, usize::MAX)
    }

    /// As [`exit_time`](Self::exit_time) but ignoring edge `skip` (the edge a
    /// boundary start point lies on).
    pub fn exit_time_excluding(&self, r: Vec2, v: Vec2, skip: usize) -> Result<ExitHit> {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..self.n_edges() {
            if i == skip {
                continue;
            }
            let nv = self.normals[i].dot(v);
            if nv >= 0.0 {
                continue;
            }
            let t = ((self.normals[i].dot(r) - self.offsets[i]) / nv).max(0.0);
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, i));
            }
        }
        let (t, edge) = best.ok_or_else(|| {
            Error::DegenerateRay(format!("zero velocity or no exit edge for r={r:?}, v={v:?}"))
        })?;
        let nv = self.normals[edge].dot(v);
        if nv.abs() < self.tol.tangent {
            return Err(Error::DegenerateRay(format!(
                "ray tangent to edge {edge} (|v·n| = {:.3e})",
                nv.abs()
            )));
        }
        let point = r - v * t;
        let s = (point - self.vertices[edge]).dot(self.tangents[edge]);
        let len = self.lengths[edge];
        if s < self.tol.vertex || s > len - self.tol.vertex {
            return Err(Error::DegenerateRay(format!(
                "ray exits through a vertex of edge {edge} (s = {s:.3e})"
            )));
        }
        Ok(ExitHit { t, point, edge, s })
    }
}

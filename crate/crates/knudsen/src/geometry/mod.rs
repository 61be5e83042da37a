//! Convex polygonal domains, backward exit times and the billiard map.

mod billiard;
pub mod clip;
mod polygon;
mod vec2;

pub use billiard::*;
pub use polygon::{ConvexPolygon, ExitHit, GeomTolerances};
pub use vec2::Vec2;

/// The velocity annulus `{v_min < |v| < v_max}`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VelocityAnnulus {
    pub v_min: f64,
    pub v_max: f64,
}

impl VelocityAnnulus {
    pub fn new(v_min: f64, v_max: f64) -> crate::Result<Self> {
        if !(v_min > 0.0 && v_max > v_min && v_max.is_finite()) {
            return Err(crate::Error::InvalidInput(format!(
                "velocity annulus needs 0 < v_min < v_max < inf, got [{v_min}, {v_max}]"
            )));
        }
        Ok(Self { v_min, v_max })
    }

    /// Lebesgue measure `π (v_max² - v_min²)`.
    pub fn measure(&self) -> f64 {
        std::f64::consts::PI * (self.v_max.powi(2) - self.v_min.powi(2))
    }
}

/// Specular reflection `v - 2(v·n)n` across the line with unit normal `n`.
#[inline]
pub fn reflect(v: Vec2, n: Vec2) -> Vec2 {
    v - n * (2.0 * v.dot(n))
}

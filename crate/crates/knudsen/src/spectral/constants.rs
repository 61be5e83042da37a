use crate::error::{Error, Result};
use crate::geometry::{big_c_tau_bound, c_tau_bound, ConvexPolygon};
use serde::{Deserialize, Serialize};

/// Shape and wall constants entering the spectral bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConstants {
    pub omega: f64,
    pub k0: u32,
    /// Lower bound on the mean chord factor `c_τ`.
    pub c_tau: f64,
    /// Upper bound on the defect `C_{τ,k0}`.
    pub big_c_tau: f64,
    pub v_max: f64,
}

impl SpectralConstants {
    /// Constants from the closed-form shape bounds (`k0 = 2`, polygons
    /// without acute angles).
    pub fn for_polygon(poly: &ConvexPolygon, v_max: f64, omega: f64, k0: u32) -> Result<Self> {
        Self::new(omega, k0, c_tau_bound(poly), big_c_tau_bound(poly), v_max)
    }

    pub fn new(omega: f64, k0: u32, c_tau: f64, big_c_tau: f64, v_max: f64) -> Result<Self> {
        if !(omega > 0.0 && omega <= 1.0) {
            return Err(Error::InvalidInput(format!("omega must lie in (0, 1], got {omega}")));
        }
        if k0 == 0 {
            return Err(Error::InvalidInput("k0 must be at least 1".into()));
        }
        if !(c_tau > 0.0 && big_c_tau < 1.0 && v_max > 0.0) {
            return Err(Error::ShapeViolation(format!(
                "need (1 - C_tau) c_tau > 0, got c_tau = {c_tau}, C_tau = {big_c_tau}"
            )));
        }
        Ok(Self { omega, k0, c_tau, big_c_tau, v_max })
    }

    /// `2^{-1/k0}`.
    pub fn threshold(&self) -> f64 {
        2f64.powf(-1.0 / self.k0 as f64)
    }

    pub fn check_threshold(&self) -> Result<()> {
        if self.omega <= self.threshold() {
            return Err(Error::OmegaBelowThreshold {
                omega: self.omega,
                k0: self.k0,
                threshold: self.threshold(),
            });
        }
        Ok(())
    }

    /// `m = log ω · v_max / c_τ`.
    pub fn m(&self) -> f64 {
        self.omega.ln() * self.v_max / self.c_tau
    }

    /// `E(μ) = Re μ (1 - C_τ) c_τ / v_max - log ω`, the log of the
    /// per-reflection decay of the backward series.
    pub fn exponent(&self, re_mu: f64) -> f64 {
        re_mu * (1.0 - self.big_c_tau) * self.c_tau / self.v_max - self.omega.ln()
    }

    /// Closed-form bound on `‖X_μ‖`:
    /// `(1-ω)/ω [(ω^{-k0} - 1)/(ω^{-1} - 1) + e^{k0 E}/(1 - e^E)]`;
    /// infinite when `E ≥ 0`.
    pub fn x_bound(&self, re_mu: f64) -> f64 {
        let w = self.omega;
        if w == 1.0 {
            return 0.0;
        }
        let e = self.exponent(re_mu);
        if e >= 0.0 {
            return f64::INFINITY;
        }
        let k0 = self.k0 as f64;
        (1.0 - w) / w * ((w.powf(-k0) - 1.0) / (1.0 / w - 1.0) + (k0 * e).exp() / (1.0 - e.exp()))
    }

    /// The largest real `m1 ≤ m` with `x_bound(m1) ≤ 1`, by bisection.
    pub fn m1(&self) -> Result<f64> {
        self.check_threshold()?;
        // E = 0 is where the tail stops converging.
        let e_zero = self.omega.ln() * self.v_max / ((1.0 - self.big_c_tau) * self.c_tau);
        let mut hi = e_zero.min(self.m());
        if self.x_bound(hi) <= 1.0 {
            return Ok(hi);
        }
        let mut lo = hi - 1.0;
        while self.x_bound(lo) >= 1.0 {
            lo = hi - 2.0 * (hi - lo);
            if lo < -1e12 {
                return Err(Error::NonConvergent("no m1 bracket found".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.x_bound(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * hi.abs().max(1.0) {
                break;
            }
        }
        Ok(lo)
    }

    /// `2 ω^{k0} - 1`, the lower bound on `‖S(t) f‖₁ / ‖f‖₁` for short times.
    pub fn group_lower_bound(&self) -> f64 {
        2.0 * self.omega.powi(self.k0 as i32) - 1.0
    }

    /// `k0 (1 - C_τ) c_τ / v_max`, the end of the window in which
    /// [`group_lower_bound`](Self::group_lower_bound) applies.
    pub fn window_t_max(&self) -> f64 {
        self.k0 as f64 * (1.0 - self.big_c_tau) * self.c_tau / self.v_max
    }

    /// Number of backward-series terms after which the term bound
    /// `e^{k E}` falls below `tol`, capped at `k_max`. `None` when
    /// `E ≥ 0` (no decay guaranteed).
    pub fn backward_depth(&self, re_mu: f64, tol: f64, k_max: usize) -> Option<usize> {
        let e = self.exponent(re_mu);
        (e < 0.0).then(|| ((tol.ln() / e).ceil().max(1.0) as usize).min(k_max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(omega: f64) -> SpectralConstants {
        SpectralConstants::for_polygon(&ConvexPolygon::unit_square(), 2.0, omega, 2).unwrap()
    }

    #[test]
    fn threshold_and_m1() {
        let c = square(0.9);
        assert!((c.threshold() - 0.5f64.sqrt()).abs() < 1e-15);
        let m1 = c.m1().unwrap();
        assert!(m1 < c.m());
        assert!(c.x_bound(m1 - 1e-6) < 1.0 && c.x_bound(m1 + 1e-6) > 1.0);
        assert!((m1 + 5.76).abs() < 0.01, "{m1}");
        assert!(matches!(square(0.65).m1(), Err(Error::OmegaBelowThreshold { .. })));
    }

    #[test]
    fn m1_increases_with_omega() {
        let ws: Vec<f64> = (0..10).map(|i| 0.72 + 0.027 * i as f64).collect();
        let m1: Vec<f64> = ws.iter().map(|w| square(*w).m1().unwrap()).collect();
        assert!(m1.windows(2).all(|p| p[1] > p[0]), "{m1:?}");
    }

    #[test]
    fn group_window() {
        let c = square(0.8);
        assert!((c.group_lower_bound() - 0.28).abs() < 1e-12);
        assert!((c.window_t_max() - 0.0786).abs() < 1e-4);
    }
}

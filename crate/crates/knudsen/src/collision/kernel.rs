use crate::error::{Error, Result};
use crate::geometry::{Vec2, VelocityAnnulus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

/// A bounded non-negative function of one variable: a constant or a
/// piecewise-linear table (clamped outside its range).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tabulated {
    Constant(f64),
    Table { x: Vec<f64>, y: Vec<f64> },
}

impl Default for Tabulated {
    fn default() -> Self {
        Tabulated::Constant(1.0)
    }
}

impl Tabulated {
    pub fn validate(&self, what: &str) -> Result<()> {
        match self {
            Tabulated::Constant(c) if c.is_finite() && *c >= 0.0 => Ok(()),
            Tabulated::Table { x, y }
                if !x.is_empty()
                    && x.len() == y.len()
                    && x.windows(2).all(|w| w[1] > w[0])
                    && y.iter().all(|v| v.is_finite() && *v >= 0.0) =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidInput(format!(
                "{what}: needs a finite non-negative constant or a table with increasing x"
            ))),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Tabulated::Constant(c) => *c,
            Tabulated::Table { x, y } => {
                if t <= x[0] {
                    return y[0];
                }
                let n = x.len();
                if t >= x[n - 1] {
                    return y[n - 1];
                }
                let i = x.partition_point(|v| *v <= t) - 1;
                let f = (t - x[i]) / (x[i + 1] - x[i]);
                y[i] * (1.0 - f) + y[i + 1] * f
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Tabulated::Constant(c) => *c,
            Tabulated::Table { y, .. } => y.iter().cloned().fold(0.0, f64::max),
        }
    }
}

/// The collision kernel in the `σ` variables, `B̃(v, v₁, σ)` without the
/// truncation indicator. `α ∈ [0, π]` is the angle between `σ` and `v - v₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `sin^D α / (C + |v - v₁|^β) · A(|v - v₁|) · a(sin α)`.
    Family {
        #[serde(rename = "D")]
        d: f64,
        beta: f64,
        #[serde(rename = "C")]
        c: f64,
        #[serde(default)]
        a: Tabulated,
        #[serde(default, rename = "A")]
        big_a: Tabulated,
    },
    /// Bilinear table in `(|v - v₁|, sin α)`, row-major in `rel_speed`.
    Table {
        rel_speed: Vec<f64>,
        sin_alpha: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Default for KernelSpec {
    /// `D = 2, β = 0, C = 1, a ≡ 1, A ≡ 1`, i.e. `B̃ = sin²α / 2`.
    fn default() -> Self {
        KernelSpec::Family {
            d: 2.0,
            beta: 0.0,
            c: 1.0,
            a: Tabulated::Constant(1.0),
            big_a: Tabulated::Constant(1.0),
        }
    }
}

fn bilinear(xs: &[f64], ys: &[f64], vals: &[f64], x: f64, y: f64) -> f64 {
    let loc = |g: &[f64], t: f64| -> (usize, usize, f64) {
        if g.len() == 1 || t <= g[0] {
            return (0, 0, 0.0);
        }
        if t >= g[g.len() - 1] {
            return (g.len() - 1, g.len() - 1, 0.0);
        }
        let i = g.partition_point(|v| *v <= t) - 1;
        (i, i + 1, (t - g[i]) / (g[i + 1] - g[i]))
    };
    let (i0, i1, fx) = loc(xs, x);
    let (j0, j1, fy) = loc(ys, y);
    let n = ys.len();
    let at = |i: usize, j: usize| vals[i * n + j];
    (1.0 - fx) * ((1.0 - fy) * at(i0, j0) + fy * at(i0, j1)) + fx * ((1.0 - fy) * at(i1, j0) + fy * at(i1, j1))
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Family { d, beta, c, a, big_a } => {
                if !(d.is_finite() && *d >= 0.0 && beta.is_finite() && *beta >= 0.0 && c.is_finite() && *c > 0.0) {
                    return Err(Error::InvalidInput("kernel family needs D >= 0, beta >= 0, C > 0".into()));
                }
                a.validate("kernel a")?;
                big_a.validate("kernel A")
            }
            KernelSpec::Table {
                rel_speed,
                sin_alpha,
                values,
            } => {
                let inc = |g: &Vec<f64>| !g.is_empty() && g.windows(2).all(|w| w[1] > w[0]);
                if !inc(rel_speed)
                    || !inc(sin_alpha)
                    || values.len() != rel_speed.len() * sin_alpha.len()
                    || values.iter().any(|v| !v.is_finite() || *v < 0.0)
                {
                    return Err(Error::InvalidInput("kernel table: bad axes or values".into()));
                }
                Ok(())
            }
        }
    }

    /// `B̃(v, v₁, σ)` (indicator not included).
    pub fn eval(&self, v: Vec2, v1: Vec2, sigma: Vec2) -> f64 {
        let d = v - v1;
        let nd = d.norm();
        if nd == 0.0 {
            return 0.0;
        }
        let ca = (sigma.dot(d) / (nd * sigma.norm())).clamp(-1.0, 1.0);
        self.eval_polar(nd, (1.0 - ca * ca).max(0.0).sqrt())
    }

    /// `B̃` as a function of the relative speed and `sin α`.
    pub fn eval_polar(&self, rel_speed: f64, sin_alpha: f64) -> f64 {
        match self {
            KernelSpec::Family { d, beta, c, a, big_a } => {
                sin_alpha.powf(*d) / (c + rel_speed.powf(*beta)) * big_a.eval(rel_speed) * a.eval(sin_alpha)
            }
            KernelSpec::Table {
                rel_speed: rs,
                sin_alpha: sa,
                values,
            } => bilinear(rs, sa, values, rel_speed, sin_alpha),
        }
    }

    /// `B̃(v, φ(v; v₁, σ), σ)` from `|v - v₁|` and `cos α` of `σ` against
    /// `v - v₁`: the relative speed is `|v - v₁|/cos α` and the angle `2α`.
    pub fn eval_at_phi(&self, rel_speed: f64, cos_alpha: f64) -> f64 {
        let c = cos_alpha.abs().min(1.0);
        let s = (1.0 - c * c).max(0.0).sqrt();
        self.eval_polar(rel_speed / c, (2.0 * s * c).min(1.0))
    }

    /// `‖B‖`, the supremum of the kernel.
    pub fn sup_norm(&self) -> f64 {
        match self {
            KernelSpec::Family { beta, c, a, big_a, .. } => {
                let den = if *beta == 0.0 { c + 1.0 } else { *c };
                big_a.sup() * a.sup() / den
            }
            KernelSpec::Table { values, .. } => values.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// Closed-form envelope of the Carleman integrand for the family in two
    /// dimensions: `2^{D+1} max_α sin^Dα cos^{D-2}α · ‖A‖‖a‖ / inf(C + |·|^β)`.
    /// `None` for tables and for `D < 2`, where it is infinite.
    pub fn analytic_b(&self) -> Option<f64> {
        match self {
            KernelSpec::Family { d, beta, c, a, big_a } if *d >= 2.0 => {
                let (s2, c2) = if *d == 2.0 {
                    (1.0, 0.0)
                } else {
                    (d / (2.0 * d - 2.0), (d - 2.0) / (2.0 * d - 2.0))
                };
                let shape = s2.powf(d / 2.0) * if *d == 2.0 { 1.0 } else { c2.powf((d - 2.0) / 2.0) };
                let den = if *beta == 0.0 { c + 1.0 } else { *c };
                Some(2f64.powf(d + 1.0) * shape * big_a.sup() * a.sup() / den)
            }
            _ => None,
        }
    }
}

/// `(v*, v₁*)` for collision parameter `e`: exchange of the `e`-component
/// of the relative velocity. Conserves momentum and energy.
#[inline]
pub fn collide_pair(v: Vec2, v1: Vec2, e: Vec2) -> (Vec2, Vec2) {
    let k = e.dot(v - v1);
    (v - e * k, v1 + e * k)
}

/// `φ(v; w, σ) = -v + 2w + |v - w|²/(σ·(v - w)) σ`.
#[inline]
pub fn carleman_phi(v: Vec2, w: Vec2, sigma: Vec2) -> Vec2 {
    let d = v - w;
    -v + w * 2.0 + sigma * (d.norm_sq() / sigma.dot(d))
}

/// `ψ(v; w, σ) = w + |v - w|²/(σ·(v - w)) σ`.
#[inline]
pub fn carleman_psi(v: Vec2, w: Vec2, sigma: Vec2) -> Vec2 {
    let d = v - w;
    w + sigma * (d.norm_sq() / sigma.dot(d))
}

fn in_annulus(va: &VelocityAnnulus, u: Vec2) -> bool {
    let s = u.norm();
    s > va.v_min && s < va.v_max
}

/// The Carleman integrand `2 B̃_J(v, φ(v₁), σ) / cos²α(v; v₁, σ)` in two
/// dimensions (where `|de/dσ| = 1`), with the truncation to `V × V`.
/// Zero outside `S₊(v - v₁)`.
pub fn carleman_integrand(spec: &KernelSpec, va: &VelocityAnnulus, v: Vec2, v1: Vec2, sigma: Vec2) -> f64 {
    let d = v - v1;
    let sd = sigma.dot(d);
    if sd <= 0.0 {
        return 0.0;
    }
    let nd = d.norm();
    let ca = sd / nd;
    let phi = carleman_phi(v, v1, sigma);
    let psi = phi + v - v1;
    if !in_annulus(va, phi) || !in_annulus(va, psi) || !in_annulus(va, v1) {
        return 0.0;
    }
    2.0 * spec.eval_at_phi(nd, ca) / (ca * ca)
}

/// Sampled supremum `b` of the Carleman integrand over `v, v₁ ∈ V` and
/// `σ ∈ S₊(v - v₁)`.
///
/// Samples are drawn at relative speeds `2^{-k}`, `k = 1..=24`, with angles
/// both uniform and clustered at `α → π/2`. If the running supremum keeps
/// doubling between the middle and the last level the kernel violates the
/// boundedness condition and [`Error::UnboundedKernel`] is returned.
pub fn bound_b(spec: &KernelSpec, va: &VelocityAnnulus, seed: u64) -> Result<f64> {
    spec.validate()?;
    let levels = 24;
    let per_level = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut running = Vec::with_capacity(levels);
    let mut sup: f64 = 0.0;
    for k in 1..=levels {
        let eps = 0.5f64.powi(k as i32) * (va.v_max - va.v_min + va.v_max);
        for _ in 0..per_level {
            let sp = (va.v_min.powi(2) + rng.gen::<f64>() * (va.v_max.powi(2) - va.v_min.powi(2))).sqrt();
            let v = Vec2::polar(sp, rng.gen::<f64>() * std::f64::consts::TAU);
            let d = Vec2::polar(eps * (0.5 + 0.5 * rng.gen::<f64>()), rng.gen::<f64>() * std::f64::consts::TAU);
            let v1 = v - d;
            if !in_annulus(va, v1) {
                continue;
            }
            let alpha = if rng.gen::<bool>() {
                rng.gen::<f64>() * FRAC_PI_2
            } else {
                FRAC_PI_2 - 10f64.powf(-8.0 * rng.gen::<f64>())
            };
            let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let base = d.angle();
            let sigma = Vec2::from_angle(base + side * alpha);
            sup = sup.max(carleman_integrand(spec, va, v, v1, sigma));
        }
        running.push(sup);
    }
    let mid = running[levels / 2 - 1];
    let last = running[levels - 1];
    if !last.is_finite() || (mid > 0.0 && last > 2.0 * mid) {
        return Err(Error::UnboundedKernel(format!(
            "sampled Carleman supremum grows under refinement: {mid:.3e} -> {last:.3e}"
        )));
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_kernel_norm_and_bound() {
        let k = KernelSpec::default();
        assert_eq!(k.sup_norm(), 0.5);
        assert_eq!(k.analytic_b(), Some(4.0));
        let va = VelocityAnnulus::new(1.0, 2.0).unwrap();
        let b = bound_b(&k, &va, 1).unwrap();
        assert!((0.95 * 4.0..=4.0 + 1e-12).contains(&b), "{b}");
    }

    #[test]
    fn d_one_is_unbounded() {
        let k = KernelSpec::Family {
            d: 1.0,
            beta: 0.0,
            c: 1.0,
            a: Tabulated::Constant(1.0),
            big_a: Tabulated::Constant(1.0),
        };
        let va = VelocityAnnulus::new(1.0, 2.0).unwrap();
        assert!(matches!(bound_b(&k, &va, 1), Err(Error::UnboundedKernel(_))));
    }

    #[test]
    fn larger_d_lowers_bound() {
        let va = VelocityAnnulus::new(1.0, 2.0).unwrap();
        let mk = |d: f64| KernelSpec::Family {
            d,
            beta: 0.0,
            c: 1.0,
            a: Tabulated::Constant(1.0),
            big_a: Tabulated::Constant(1.0),
        };
        let b2 = bound_b(&mk(2.0), &va, 3).unwrap();
        let b4 = bound_b(&mk(4.0), &va, 3).unwrap();
        let b8 = bound_b(&mk(8.0), &va, 3).unwrap();
        assert!(b8 < b4 && b4 < b2);
        let a4 = mk(4.0).analytic_b().unwrap();
        assert!(b4 <= a4 * (1.0 + 1e-12) && b4 >= 0.95 * a4, "{b4} {a4}");
    }

    #[test]
    fn tabulated_interpolates() {
        let t = Tabulated::Table {
            x: vec![0.0, 1.0],
            y: vec![1.0, 3.0],
        };
        assert_eq!(t.eval(0.5), 2.0);
        assert_eq!(t.eval(2.0), 3.0);
        assert_eq!(t.sup(), 3.0);
    }
}

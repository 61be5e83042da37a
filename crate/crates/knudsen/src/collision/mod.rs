//! Collision operator: kernel family, velocity quadrature, spatial
//! mollification and the Carleman form of the gain term.

mod kernel;
mod table;

pub use kernel::{
    bound_b, carleman_integrand, carleman_phi, carleman_psi, collide_pair, KernelSpec, Tabulated,
};
pub use table::{carleman_gain, carleman_loss, direct_gain, CarlemanGain, CollisionTable};

use crate::error::{Error, Result};
use crate::transport::{PhaseDensity, PhaseGrid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// `h_γ(r, y) = c · max(0, 1 - |r - y|/γ)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    pub gamma: f64,
    #[serde(default = "one")]
    pub c: f64,
}

fn one() -> f64 {
    1.0
}

impl Mollifier {
    pub fn new(gamma: f64, c: f64) -> Result<Self> {
        let m = Self { gamma, c };
        m.validate()?;
        Ok(m)
    }

    /// `γ = 0.2 · diam`, `c = 1`.
    pub fn default_for(diam: f64) -> Self {
        Self { gamma: 0.2 * diam, c: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("mollifier gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidInput(format!("mollifier scale must be >= 0, got {}", self.c)));
        }
        Ok(())
    }

    pub fn eval(&self, d: f64) -> f64 {
        let x = 1.0 - d / self.gamma;
        if x > 0.0 {
            self.c * x * x
        } else {
            0.0
        }
    }

    pub fn sup(&self) -> f64 {
        self.c
    }
}

/// Gain and loss parts of `Q(p, p)`: `Q = gain - p · loss_rate`.
#[derive(Debug, Clone)]
pub struct SplitQ {
    pub gain: PhaseDensity,
    pub loss_rate: PhaseDensity,
}

/// `Q(p, q) = ½ [Qc(p, q_γ) + Qc(q, p_γ)]` on a phase grid, where
/// `q_γ(r, v) = ∫ h_γ(r, y) q(y, v) dy` and `Qc` is the velocity
/// quadrature of [`CollisionTable`] applied at each spatial cell.
#[derive(Debug, Clone)]
pub struct CollisionOperator {
    pub grid: Arc<PhaseGrid>,
    pub kernel: KernelSpec,
    pub mollifier: Mollifier,
    pub table: CollisionTable,
    /// Per cell: `(neighbour, h_γ(r, y) |cell_y|)` on cell centroids.
    neighbours: Vec<Vec<(usize, f64)>>,
}

impl CollisionOperator {
    pub fn new(grid: Arc<PhaseGrid>, kernel: KernelSpec, mollifier: Mollifier, n_e: usize) -> Result<Self> {
        mollifier.validate()?;
        let table = CollisionTable::build(&grid.vel, &kernel, n_e)?;
        let neighbours = grid
            .cells
            .iter()
            .map(|a| {
                grid.cells
                    .iter()
                    .enumerate()
                    .filter_map(|(k, b)| {
                        let w = mollifier.eval(a.centroid.dist(b.centroid));
                        (w > 0.0).then_some((k, w * b.area))
                    })
                    .collect()
            })
            .collect();
        Ok(Self { grid, kernel, mollifier, table, neighbours })
    }

    /// `2 ‖h_γ‖ ‖B‖`, the constant of `‖Q(p, q)‖₁ ≤ 2‖h_γ‖‖B‖‖p‖₁‖q‖₁`.
    pub fn norm_constant(&self) -> f64 {
        2.0 * self.mollifier.sup() * self.kernel.sup_norm()
    }

    /// `p_γ`.
    pub fn mollify(&self, p: &[f64]) -> Vec<f64> {
        let nv = self.grid.n_v();
        let mut out = vec![0.0; p.len()];
        out.par_chunks_mut(nv).enumerate().for_each(|(c, o)| {
            for &(y, w) in &self.neighbours[c] {
                for (ok, pk) in o.iter_mut().zip(&p[y * nv..(y + 1) * nv]) {
                    *ok += w * pk;
                }
            }
        });
        out
    }

    fn check(&self, p: &PhaseDensity) {
        assert!(
            Arc::ptr_eq(&p.grid, &self.grid) || p.values.len() == self.grid.len(),
            "density on a different grid"
        );
    }

    /// `Q(p, q)` as raw values.
    pub fn apply_values(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        let nv = self.grid.n_v();
        let pg = self.mollify(p);
        let qg = self.mollify(q);
        let mut out = vec![0.0; p.len()];
        out.par_chunks_mut(nv).enumerate().for_each(|(c, o)| {
            let s = c * nv..(c + 1) * nv;
            self.table.qc_add(&p[s.clone()], &qg[s.clone()], 0.5, o);
            self.table.qc_add(&q[s.clone()], &pg[s], 0.5, o);
        });
        out
    }

    pub fn apply_q(&self, p: &PhaseDensity, q: &PhaseDensity) -> PhaseDensity {
        self.check(p);
        self.check(q);
        PhaseDensity::from_values(self.grid.clone(), self.apply_values(&p.values, &q.values))
    }

    /// `Q(p, p) = Qc(p, p_γ)`.
    pub fn apply_values_pp(&self, p: &[f64]) -> Vec<f64> {
        let nv = self.grid.n_v();
        let pg = self.mollify(p);
        let mut out = vec![0.0; p.len()];
        out.par_chunks_mut(nv).enumerate().for_each(|(c, o)| {
            let s = c * nv..(c + 1) * nv;
            self.table.qc_add(&p[s.clone()], &pg[s], 1.0, o);
        });
        out
    }

    pub fn apply_q_pp(&self, p: &PhaseDensity) -> PhaseDensity {
        self.check(p);
        PhaseDensity::from_values(self.grid.clone(), self.apply_values_pp(&p.values))
    }

    /// Gain and loss rate of `Q(p, p)`; the loss rate depends only on `p_γ`.
    pub fn split_values(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nv = self.grid.n_v();
        let pg = self.mollify(p);
        let mut gain = vec![0.0; p.len()];
        let mut rate = vec![0.0; p.len()];
        gain.par_chunks_mut(nv)
            .zip(rate.par_chunks_mut(nv))
            .enumerate()
            .for_each(|(c, (g, r))| {
                let s = c * nv..(c + 1) * nv;
                let mut loss = vec![0.0; nv];
                self.table.gain_loss(&p[s.clone()], &pg[s.clone()], g, &mut loss);
                self.table.loss_rate(&pg[s], r);
            });
        (gain, rate)
    }

    pub fn split_q(&self, p: &PhaseDensity) -> SplitQ {
        self.check(p);
        let (g, r) = self.split_values(&p.values);
        SplitQ {
            gain: PhaseDensity::from_values(self.grid.clone(), g),
            loss_rate: PhaseDensity::from_values(self.grid.clone(), r),
        }
    }

    /// Gain term of `Q(p, p)` in Carleman variables with `n_sigma` nodes
    /// on each half circle. Returns the gain and the excluded measure
    /// (summed over spatial cells).
    pub fn carleman_gain(&self, p: &PhaseDensity, n_sigma: usize) -> (PhaseDensity, f64) {
        self.check(p);
        let nv = self.grid.n_v();
        let pg = self.mollify(&p.values);
        let mut out = Vec::with_capacity(p.values.len());
        let mut excl = 0.0;
        for c in 0..self.grid.n_cells() {
            let s = c * nv..(c + 1) * nv;
            let cg = carleman_gain(&self.grid.vel, &self.kernel, n_sigma, &p.values[s.clone()], &pg[s]);
            out.extend(cg.gain);
            excl += cg.excluded_measure;
        }
        (PhaseDensity::from_values(self.grid.clone(), out), excl)
    }
}

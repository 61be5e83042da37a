use super::grid::{PhaseDensity, PhaseGrid, VelocityGrid};
use super::TransportParams;
use crate::boundary::sample_boundary_velocity;
use crate::error::{Error, Result};
use crate::geometry::{reflect, ConvexPolygon, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub r: Vec2,
    pub v: Vec2,
}

/// How wall re-emission picks velocities.
#[derive(Debug, Clone)]
pub enum McMode {
    /// Exact continuous law `∝ |u·n| M(u)` over the annulus.
    Continuous,
    /// Velocities stay on the grid nodes. Diffuse re-emission draws from
    /// the same discrete weights as the push operator; specular images off
    /// the grid are split at random between the two nearest angles.
    Grid(Arc<VelocityGrid>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct McStats {
    pub wall_hits: u64,
    /// Rays that hit a vertex and were nudged.
    pub degenerate: u64,
}

/// Particles with equal weights and a reproducible random stream per
/// particle and per call.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub particles: Vec<Particle>,
    pub time: f64,
    pub seed: u64,
    epoch: u64,
}

fn rng_for(seed: u64, epoch: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64);
    rng
}

fn inside_convex(poly: &[Vec2], p: Vec2) -> bool {
    let n = poly.len();
    (0..n).all(|i| (poly[(i + 1) % n] - poly[i]).cross(p - poly[i]) >= 0.0)
}

impl ParticleEnsemble {
    /// Draws `n` particles from a non-negative grid density: the state by
    /// its mass, the position uniformly in the cell, the velocity at the
    /// node (grid mode) or uniformly in the velocity cell.
    pub fn sample(p0: &PhaseDensity, n: usize, seed: u64, mode: &McMode) -> Result<Self> {
        let g = &p0.grid;
        let mut cum = Vec::with_capacity(p0.values.len());
        let mut acc = 0.0;
        for (s, v) in p0.values.iter().enumerate() {
            if *v < 0.0 {
                return Err(Error::InvalidInput("particle sampling needs a non-negative density".into()));
            }
            acc += v * g.measure(s);
            cum.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::InvalidInput("particle sampling needs positive mass".into()));
        }
        let particles = (0..n)
            .into_par_iter()
            .with_min_len(4096)
            .map(|i| {
                let mut rng = rng_for(seed, 0, i);
                let u = rng.gen::<f64>() * acc;
                let s = cum.partition_point(|c| *c <= u).min(cum.len() - 1);
                let (c, k) = g.split(s);
                let cell = &g.cells[c];
                let (lo, hi) = (
                    g.lo + Vec2::new(cell.ix as f64 * g.h.x, cell.iy as f64 * g.h.y),
                    g.lo + Vec2::new((cell.ix + 1) as f64 * g.h.x, (cell.iy + 1) as f64 * g.h.y),
                );
                let r = loop {
                    let p = Vec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
                    if cell.full || inside_convex(&cell.poly, p) {
                        break p;
                    }
                };
                let v = match mode {
                    McMode::Grid(_) => g.vel.velocity(k),
                    McMode::Continuous => {
                        let (j, is) = g.vel.split(k);
                        let th = (j as f64 + rng.gen::<f64>()) * g.vel.dtheta();
                        let (a, b) = g.vel.speed_bounds(is);
                        let sp = (a * a + rng.gen::<f64>() * (b * b - a * a)).sqrt();
                        Vec2::polar(sp, th)
                    }
                };
                Particle { r, v }
            })
            .collect();
        Ok(Self {
            particles,
            time: 0.0,
            seed,
            epoch: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Histogram density on `grid`: `count / (N |cell|)`.
    pub fn histogram(&self, grid: Arc<PhaseGrid>) -> PhaseDensity {
        let idx: Vec<usize> = self
            .particles
            .par_iter()
            .with_min_len(4096)
            .map(|p| grid.state(grid.locate(p.r), grid.vel.locate(p.v)))
            .collect();
        let mut counts = vec![0.0; grid.len()];
        for i in idx {
            counts[i] += 1.0;
        }
        let n = self.particles.len() as f64;
        for (s, c) in counts.iter_mut().enumerate() {
            *c /= n * grid.measure(s);
        }
        PhaseDensity { grid, values: counts }
    }
}

struct GridEmission {
    /// Per edge: cumulative probabilities and node velocities.
    cum: Vec<Vec<(f64, Vec2)>>,
}

impl GridEmission {
    fn new(poly: &ConvexPolygon, vel: &VelocityGrid, params: &TransportParams) -> Self {
        let mut cum = Vec::new();
        for e in 0..poly.n_edges() {
            let n = poly.normal(e);
            let mut list = Vec::new();
            let mut acc = 0.0;
            for k in 0..vel.len() {
                let u = vel.velocity(k);
                if u.dot(n) < 0.0 {
                    acc += -u.dot(n) * params.profile.value(e, u.norm()) * vel.measure(k);
                    list.push((acc, u));
                }
            }
            for x in &mut list {
                x.0 /= acc;
            }
            cum.push(list);
        }
        Self { cum }
    }

    fn draw<R: Rng>(&self, edge: usize, rng: &mut R) -> Vec2 {
        let list = &self.cum[edge];
        let u = rng.gen::<f64>();
        let i = list.partition_point(|x| x.0 <= u).min(list.len() - 1);
        list[i].1
    }
}

/// Moves every particle for time `t` with Maxwell walls. Each particle uses
/// its own random stream, so results do not depend on the thread count.
pub fn evolve_mc(e: &mut ParticleEnsemble, t: f64, params: &TransportParams, poly: &ConvexPolygon, mode: &McMode) -> Result<McStats> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("time must be finite and >= 0, got {t}")));
    }
    let emission = match mode {
        McMode::Grid(vel) => Some(GridEmission::new(poly, vel, params)),
        McMode::Continuous => None,
    };
    let (seed, epoch) = (e.seed, e.epoch);
    let stats: Vec<McStats> = e
        .particles
        .par_iter_mut()
        .enumerate()
        .with_min_len(1024)
        .map(|(i, p)| {
            let mut rng = rng_for(seed, epoch, i);
            move_particle(p, t, params, poly, mode, emission.as_ref(), &mut rng)
        })
        .collect();
    e.epoch += 1;
    e.time += t;
    Ok(stats.iter().fold(McStats::default(), |a, s| McStats {
        wall_hits: a.wall_hits + s.wall_hits,
        degenerate: a.degenerate + s.degenerate,
    }))
}

fn move_particle<R: Rng>(
    p: &mut Particle,
    t: f64,
    params: &TransportParams,
    poly: &ConvexPolygon,
    mode: &McMode,
    emission: Option<&GridEmission>,
    rng: &mut R,
) -> McStats {
    let mut st = McStats::default();
    let mut left = t;
    let mut last_edge: Option<usize> = None;
    loop {
        let hit = match last_edge {
            Some(e) => poly.exit_time_excluding(p.r, -p.v, e),
            None => poly.exit_time(p.r, -p.v),
        };
        let hit = match hit {
            Ok(h) => h,
            Err(_) => {
                st.degenerate += 1;
                let th: f64 = 1e-10 * if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let (c, s) = (th.cos(), th.sin());
                p.v = Vec2::new(c * p.v.x - s * p.v.y, s * p.v.x + c * p.v.y);
                continue;
            }
        };
        if hit.t >= left {
            p.r = p.r + p.v * left;
            return st;
        }
        left -= hit.t;
        p.r = hit.point;
        st.wall_hits += 1;
        last_edge = Some(hit.edge);
        let n = poly.normal(hit.edge);
        p.v = match (mode, emission) {
            (McMode::Grid(vel), Some(em)) => {
                if rng.gen::<f64>() < params.omega {
                    let [(k0, w0), (k1, _)] = vel.split_velocity(reflect(p.v, n));
                    let k = if rng.gen::<f64>() < w0 { k0 } else { k1 };
                    vel.velocity(k)
                } else {
                    em.draw(hit.edge, rng)
                }
            }
            _ => sample_boundary_velocity(poly, hit.edge, p.v, params.omega, &params.profile, rng),
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::MaxwellProfile;
    use crate::geometry::VelocityAnnulus;

    #[test]
    fn particles_stay_inside_and_keep_speed_under_specular() {
        let va = VelocityAnnulus::new(1.0, 2.0).unwrap();
        let g = Arc::new(PhaseGrid::unit_square(4, 8, 2, va).unwrap());
        let p0 = PhaseDensity::uniform(g.clone());
        let mut e = ParticleEnsemble::sample(&p0, 2000, 3, &McMode::Continuous).unwrap();
        let speeds: Vec<f64> = e.particles.iter().map(|p| p.v.norm()).collect();
        let params = TransportParams::new(1.0, MaxwellProfile::constant(va)).unwrap();
        let st = evolve_mc(&mut e, 3.0, &params, &g.poly, &McMode::Continuous).unwrap();
        assert!(st.wall_hits > 2000);
        for (p, s) in e.particles.iter().zip(speeds) {
            assert!(g.poly.max_violation(p.r) < 1e-9);
            assert!((p.v.norm() - s).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_result() {
        let va = VelocityAnnulus::new(1.0, 2.0).unwrap();
        let g = Arc::new(PhaseGrid::unit_square(4, 8, 2, va).unwrap());
        let p0 = PhaseDensity::uniform(g.clone());
        let params = TransportParams::new(0.3, MaxwellProfile::constant(va)).unwrap();
        let run = || {
            let mut e = ParticleEnsemble::sample(&p0, 500, 9, &McMode::Continuous).unwrap();
            evolve_mc(&mut e, 1.0, &params, &g.poly, &McMode::Continuous).unwrap();
            e.particles
        };
        assert_eq!(run(), run());
    }
}

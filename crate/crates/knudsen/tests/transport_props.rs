use knudsen::boundary::MaxwellProfile;
use knudsen::geometry::{Vec2, VelocityAnnulus};
use knudsen::transport::{
    evolve_mc, evolve_series, McMode, PhaseDensity, PhaseGrid, ParticleEnsemble, TransportParams,
};
use proptest::prelude::*;
use std::sync::Arc;

fn grid(n: usize, nt: usize, ns: usize) -> Arc<PhaseGrid> {
    Arc::new(PhaseGrid::unit_square(n, nt, ns, VelocityAnnulus::new(1.0, 2.0).unwrap()).unwrap())
}

/// Bilinear interpolation of cell-centred values at `x`, written out
/// directly from the cell indices.
fn bilinear(g: &PhaseGrid, vals: &[f64], k: usize, x: Vec2) -> f64 {
    let fx = (x.x - g.lo.x) / g.h.x - 0.5;
    let fy = (x.y - g.lo.y) / g.h.y - 0.5;
    let (i0, j0) = (fx.floor() as usize, fy.floor() as usize);
    let (a, b) = (fx - i0 as f64, fy - j0 as f64);
    let at = |i: usize, j: usize| vals[g.state(g.cell_at(i, j).unwrap(), k)];
    (1.0 - a) * (1.0 - b) * at(i0, j0) + a * (1.0 - b) * at(i0 + 1, j0) + (1.0 - a) * b * at(i0, j0 + 1) + a * b * at(i0 + 1, j0 + 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn short_time_is_free_flight(seed in 0u64..1000, omega in 0.0..1.0f64, frac in 0.05..0.95f64) {
        let g = grid(10, 8, 2);
        let params = TransportParams::new(omega, MaxwellProfile::constant(g.vel.annulus)).unwrap();
        let mut s = seed;
        let vals = (0..g.len())
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                0.5 + (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let p0 = PhaseDensity::zeros(g.clone()).with_values(vals);
        let t = frac * g.h.x / g.vel.annulus.v_max;
        let out = evolve_series(&p0, t, &params).unwrap();
        prop_assert!((out.density.mass() - p0.mass()).abs() <= 1e-9 * p0.mass());
        let mut checked = 0;
        for (c, cell) in g.cells.iter().enumerate() {
            for k in 0..g.n_v() {
                let v = g.vel.velocity(k);
                let back = cell.centroid - v * t;
                let m = 0.5 * g.h.x + 1e-12;
                let interior = back.x - m > 0.0 && back.x + m < 1.0 && back.y - m > 0.0 && back.y + m < 1.0
                    && back.x > 0.5 * g.h.x && back.x < 1.0 - 0.5 * g.h.x
                    && back.y > 0.5 * g.h.y && back.y < 1.0 - 0.5 * g.h.y;
                if !interior {
                    continue;
                }
                let want = bilinear(&g, &p0.values, k, back);
                let got = out.density.values[g.state(c, k)];
                prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {}", got, want);
                checked += 1;
            }
        }
        prop_assert!(checked > 0);
    }

    #[test]
    fn positivity_and_mass(omega in 0.0..1.0f64, t in 0.0..1.5f64, tilt in -1.5..1.5f64) {
        let g = grid(6, 8, 2);
        let va = g.vel.annulus;
        let prof = MaxwellProfile::per_edge(va, vec![tilt, -tilt, 0.5 * tilt, 0.0]).unwrap();
        let params = TransportParams::new(omega, prof).unwrap();
        let p0 = PhaseDensity::from_fn(g.clone(), |r, v| (1.0 + (5.0 * r.x).cos() * v.y).max(0.0));
        let out = evolve_series(&p0, t, &params).unwrap();
        prop_assert!(out.density.ess_inf() >= -1e-14);
        prop_assert!((out.density.mass() - p0.mass()).abs() <= 1e-9 * p0.mass());
    }
}

#[test]
fn pure_specular_preserves_norm() {
    let g = grid(8, 8, 2);
    let params = TransportParams::new(1.0, MaxwellProfile::constant(g.vel.annulus)).unwrap();
    let p0 = PhaseDensity::from_fn(g.clone(), |r, _| if r.x < 0.5 { 2.0 } else { 0.0 });
    let out = evolve_series(&p0, 2.0, &params).unwrap();
    assert!((out.density.l1() - p0.l1()).abs() < 1e-12);
}

#[test]
fn mc_free_flight_and_weight() {
    let g = grid(4, 8, 2);
    let params = TransportParams::new(0.5, MaxwellProfile::constant(g.vel.annulus)).unwrap();
    let p0 = PhaseDensity::from_fn(g.clone(), |r, _| if (r.x - 0.5).abs() < 0.3 && (r.y - 0.5).abs() < 0.3 { 1.0 } else { 0.0 });
    let mut e = ParticleEnsemble::sample(&p0, 1000, 5, &McMode::Continuous).unwrap();
    let before = e.particles.clone();
    let t = 0.05;
    let st = evolve_mc(&mut e, t, &params, &g.poly, &McMode::Continuous).unwrap();
    assert_eq!(st.wall_hits, 0);
    for (a, b) in before.iter().zip(&e.particles) {
        assert!((a.r + a.v * t).dist(b.r) < 1e-14);
    }
    let e0 = e.clone();
    evolve_mc(&mut e, 0.0, &params, &g.poly, &McMode::Continuous).unwrap();
    assert_eq!(e0.particles, e.particles);
}

#[test]
fn stationary_state_and_envelopes() {
    use knudsen::transport::{check_bound_preservation, stationary_of};
    let g = grid(12, 16, 2);
    let prof = MaxwellProfile::per_edge(g.vel.annulus, vec![0.8, -0.5, 0.3, 1.2]).unwrap();
    let params = TransportParams::new(0.0, prof).unwrap();
    let op = params.operator(g.clone(), 0.25).unwrap();
    let st = stationary_of(&op, 1e-9, 2000).unwrap();
    assert!(st.r_squared >= 0.98 && st.rate < 1.0);
    assert!(st.density.ess_inf() > 0.0);
    assert!((st.density.mass() - 1.0).abs() < 1e-9);
    let rep = check_bound_preservation(&st.density, &st.density, &op, &[1, 4], 1e-6);
    assert!(rep.holds && (rep.a - 1.0).abs() < 1e-12 && (rep.b - 1.0).abs() < 1e-12);
    let p0 = PhaseDensity::from_fn(g.clone(), |r, v| 1.0 + 0.9 * (6.0 * r.x).sin() * (v.y / v.norm()));
    let rep = check_bound_preservation(&p0, &st.density, &op, &[1, 2, 4, 8], 1e-6);
    assert!(rep.holds, "{:?}", rep.violation);
}

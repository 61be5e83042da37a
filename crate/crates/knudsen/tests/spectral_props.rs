use knudsen::boundary::{BoundaryGrid, MaxwellProfile};
use knudsen::geometry::{ConvexPolygon, VelocityAnnulus};
use knudsen::spectral::*;
use knudsen::transport::{PhaseDensity, PhaseGrid, TransportParams};
use knudsen::Error;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn annulus() -> VelocityAnnulus {
    VelocityAnnulus::new(1.0, 2.0).unwrap()
}

fn consts(omega: f64) -> SpectralConstants {
    SpectralConstants::for_polygon(&ConvexPolygon::unit_square(), 2.0, omega, 2).unwrap()
}

fn ctx(omega: f64, mu: f64) -> BoundaryOperatorContext {
    let grid = Arc::new(BoundaryGrid::new(ConvexPolygon::unit_square(), annulus(), 8, 8, 2).unwrap());
    BoundaryOperatorContext::new(grid, &MaxwellProfile::constant(annulus()), consts(omega), C64::new(mu, 0.0), 1e-10, 200).unwrap()
}

fn random_wall(n: usize, seed: u64, signed: bool) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let off = if signed { 0.5 } else { 0.0 };
    (0..n).map(|_| C64::new(rng.gen::<f64>() - off, 0.0)).collect()
}

#[test]
fn x_norm_below_one_at_twice_m1() {
    let c = consts(0.9);
    let m1 = c.m1().unwrap();
    let ctx = ctx(0.9, 2.0 * m1);
    let norm = ctx.x_operator().unwrap().norm();
    assert!(norm < 1.0, "{norm}");
    assert!(norm <= c.x_bound(2.0 * m1) + 1e-3, "{norm} vs {}", c.x_bound(2.0 * m1));
}

#[test]
fn omega_below_threshold_is_rejected() {
    assert!(matches!(consts(0.65).m1(), Err(Error::OmegaBelowThreshold { .. })));
    assert!(matches!(consts(0.7).check_threshold(), Err(Error::OmegaBelowThreshold { .. })));
    assert!(consts(0.71).check_threshold().is_ok());
}

#[test]
fn m1_is_monotone_in_omega() {
    let m1: Vec<f64> = (0..10).map(|i| consts(0.71 + 0.028 * i as f64).m1().unwrap()).collect();
    assert!(m1.windows(2).all(|p| p[1] > p[0]), "{m1:?}");
}

#[test]
fn id_minus_a_series_solves_its_equation() {
    let c = consts(0.9);
    let ctx = ctx(0.9, 2.0 * c.m());
    for seed in 0..10 {
        let psi = random_wall(ctx.grid.len(), seed, true);
        let r = ctx.id_minus_a_residual(&psi).unwrap();
        assert!(r <= 1e-6, "seed {seed}: {r}");
    }
    let zero = vec![C64::new(0.0, 0.0); ctx.grid.len()];
    assert!(ctx.solve_id_minus_a_mu(&zero).unwrap().iter().all(|z| z.norm() == 0.0));
}

#[test]
fn a_mu_is_a_weighted_isometry_without_damping() {
    let ctx = ctx(1.0, 0.0);
    for seed in 0..5 {
        let f = random_wall(ctx.grid.len(), seed, false);
        let a = ctx.apply_a_mu(&f);
        let (n0, n1) = (weighted_norm(&ctx.grid, &f), weighted_norm(&ctx.grid, &a));
        assert!((n1 / n0 - 1.0).abs() < 0.05, "seed {seed}: {n0} -> {n1}");
    }
}

#[test]
fn a_mu_contracts_for_positive_mu_and_is_linear() {
    let ctx = ctx(0.9, 0.7);
    let f = random_wall(ctx.grid.len(), 11, true);
    let g = random_wall(ctx.grid.len(), 12, true);
    let af = ctx.apply_a_mu(&f);
    assert!(weighted_norm(&ctx.grid, &af) <= 0.9 * weighted_norm(&ctx.grid, &f) * 1.05);
    let sum: Vec<C64> = f.iter().zip(&g).map(|(a, b)| a * 2.0 - b).collect();
    let lhs = ctx.apply_a_mu(&sum);
    let ag = ctx.apply_a_mu(&g);
    let d: f64 = lhs.iter().zip(af.iter().zip(&ag)).map(|(l, (a, b))| (l - (a * 2.0 - b)).norm()).sum();
    assert!(d < 1e-12);
}

#[test]
fn factorization_holds_on_random_vectors() {
    let c = consts(0.9);
    let ctx = ctx(0.9, 2.0 * c.m1().unwrap());
    for seed in 0..3 {
        let f = random_wall(ctx.grid.len(), 100 + seed, true);
        let d = ctx.factorization_defect(&f).unwrap();
        assert!(d < 1e-8, "seed {seed}: {d}");
    }
}

#[test]
fn series_depth_covers_the_observed_tail() {
    let c = consts(0.9);
    let ctx = ctx(0.9, 2.0 * c.m1().unwrap());
    // The depth comes from the worst-case term bound; actual terms decay at
    // least as fast, so the last kept term is already below the tolerance.
    for i in (0..ctx.grid.len()).step_by(7) {
        let terms = ctx.terms(&ctx.grid.node(i)).unwrap();
        assert_eq!(terms.len(), ctx.depth);
        assert!(terms.last().unwrap().coef.norm() <= 1e-10, "{}", terms.last().unwrap().coef);
    }
}

#[test]
fn series_outside_the_regime_is_refused() {
    let ctx = ctx(0.9, -0.05);
    assert!(ctx.regime.is_none());
    let psi = random_wall(ctx.grid.len(), 3, true);
    assert!(matches!(ctx.solve_id_minus_a_mu(&psi), Err(Error::SeriesDivergent(_))));
}

fn phase() -> Arc<PhaseGrid> {
    Arc::new(PhaseGrid::unit_square(6, 8, 2, annulus()).unwrap())
}

#[test]
fn resolvent_satisfies_the_transport_equation() {
    let m1 = consts(0.9).m1().unwrap();
    for mu in [2.0 * m1, 1.5] {
        let ctx = ctx(0.9, mu);
        let pg = phase();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = PhaseDensity::from_values(pg.clone(), (0..pg.len()).map(|_| rng.gen::<f64>() - 0.3).collect());
        let r = TransportResolvent::new(&ctx, &g, 1e-12, 200).unwrap();
        let res = r.interior_residual(1e-5).unwrap();
        assert!(res <= 1e-5, "mu {mu}: {res}");
        assert!(r.report.boundary_residual <= 1e-8, "mu {mu}: {:?}", r.report);
    }
}

#[test]
fn resolvent_of_zero_is_zero() {
    let ctx = ctx(0.9, 2.0 * consts(0.9).m1().unwrap());
    let g = PhaseDensity::zeros(phase());
    let r = TransportResolvent::new(&ctx, &g, 1e-12, 200).unwrap();
    assert!(r.values().unwrap().iter().all(|z| z.norm() == 0.0));
}

#[test]
fn very_negative_mu_needs_few_neumann_terms() {
    // ‖X_μ‖ tends to about (1 - ω)/ω² as μ → -∞, so the term count is fixed
    // by the tolerance rather than shrinking to one.
    let ctx = ctx(0.9, -40.0);
    let pg = phase();
    let g = PhaseDensity::uniform(pg);
    let r = TransportResolvent::new(&ctx, &g, 1e-4, 200).unwrap();
    assert!(r.report.x_terms <= 5, "{:?}", r.report);
    assert!(r.report.x_norm < 0.13);
    assert!(r.interior_residual(1e-5).unwrap() < 1e-8);
}

#[test]
fn group_lower_bound_on_a_small_grid() {
    let c = consts(0.8);
    let pg = phase();
    let params = TransportParams::new(0.8, MaxwellProfile::constant(annulus())).unwrap();
    let t = 0.9 * c.window_t_max();
    let rep = group_lower_bound_check(pg, &params, &c, t, 10, 5, 1e-9).unwrap();
    assert!(rep.violations.is_empty(), "{rep:?}");
    assert!((rep.bound - 0.28).abs() < 1e-12);
}

use knudsen::boundary::MaxwellProfile;
use knudsen::collision::{KernelSpec, Mollifier};
use knudsen::geometry::VelocityAnnulus;
use knudsen::solver::*;
use knudsen::spectral::SpectralConstants;
use knudsen::transport::{PhaseDensity, PhaseGrid, TransportParams};
use knudsen::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

fn model(n: usize) -> Model {
    let va = VelocityAnnulus::new(1.0, 2.0).unwrap();
    let g = Arc::new(PhaseGrid::unit_square(n, 8, 2, va).unwrap());
    let params = TransportParams::new(0.9, MaxwellProfile::constant(va)).unwrap();
    let mol = Mollifier::default_for(g.poly.diam());
    Model::new(g, params, KernelSpec::default(), mol, 6).unwrap()
}

fn bump(m: &Model) -> PhaseDensity {
    PhaseDensity::from_fn(m.grid.clone(), |r, v| {
        (1.0 + 0.5 * (PI * r.x).cos() * (PI * r.y).cos()) * (1.0 + 0.2 * v.y / v.norm())
    })
    .normalized()
}

fn random_density(m: &Model, seed: u64) -> PhaseDensity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PhaseDensity::from_values(m.grid.clone(), (0..m.grid.len()).map(|_| 0.2 + rng.gen::<f64>()).collect()).normalized()
}

fn stamps(dt: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 * dt).collect()
}

fn consts() -> SpectralConstants {
    SpectralConstants::for_polygon(&knudsen::geometry::ConvexPolygon::unit_square(), 2.0, 0.9, 2).unwrap()
}

#[test]
fn psi_without_collisions_is_free_flight() {
    let m = model(8);
    let p0 = bump(&m);
    let prop = Propagator::new(&m, 0.05, 6, FreeFlight::Compound).unwrap();
    let path = TimedDensityPath::constant(&stamps(0.05, 6), &random_density(&m, 1)).unwrap();
    let out = psi_map(&m, &prop, 0.0, &p0, &path).unwrap();
    let free = prop.free_flight(&p0.values);
    for (d, f) in out.densities().iter().zip(&free) {
        assert_eq!(&d.values, f);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn psi_conserves_mass_and_obeys_the_norm_bound(seed in 0u64..1000, lambda in 0.01f64..0.5) {
        let m = model(6);
        let p0 = bump(&m);
        let dt = 0.04;
        let prop = Propagator::new(&m, dt, 5, FreeFlight::Compound).unwrap();
        let mut path = TimedDensityPath::new(0.0, random_density(&m, seed));
        for k in 1..=5 {
            path.push(k as f64 * dt, random_density(&m, seed + k)).unwrap();
        }
        let out = psi_map(&m, &prop, lambda, &p0, &path).unwrap();
        for s in out.stats() {
            prop_assert!((s.mass - p0.mass()).abs() <= 1e-9, "{s:?}");
        }
        let t = 5.0 * dt;
        let bound = p0.l1() + 2.0 * lambda * t * m.h_sup() * m.b_norm() * path.sup_l1().powi(2);
        prop_assert!(out.sup_l1() <= bound * (1.0 + 1e-12));
    }
}

#[test]
fn picard_from_two_guesses_reaches_one_fixed_point() {
    let m = model(8);
    let p0 = bump(&m);
    let (dt, n) = (1.0 / 16.0, 16);
    let c1 = c_one_estimate(&m, dt, n).unwrap();
    let thr = lambda_threshold(&m, p0.ess_inf(), p0.ess_sup(), 1.0, c1);
    let cfg = SolverConfig { lambda: 0.5 * thr, n_steps: n, ..Default::default() };
    let prop = Propagator::new(&m, dt, n, FreeFlight::Compound).unwrap();
    let a = picard_local_from(&m, &prop, &p0, &TimedDensityPath::constant(&stamps(dt, n), &p0).unwrap(), &cfg, c1).unwrap();
    let other = PhaseDensity::uniform(m.grid.clone());
    let b = picard_local_from(&m, &prop, &p0, &TimedDensityPath::constant(&stamps(dt, n), &other).unwrap(), &cfg, c1).unwrap();
    assert!(a.path.dist(&b.path) <= 2.0 * cfg.picard_tol);
    for r in [&a.report, &b.report] {
        assert!(r.max_ratio <= r.delta, "{r:?}");
        assert!(r.sandwich_holds);
        assert!(r.norm_defect <= 1e-9);
    }
}

#[test]
fn lambda_above_threshold_is_refused() {
    let m = model(6);
    let p0 = bump(&m);
    let c1 = c_one_estimate(&m, 0.1, 5).unwrap();
    let thr = lambda_threshold(&m, p0.ess_inf(), p0.ess_sup(), 0.5, c1);
    let cfg = SolverConfig { lambda: 1.01 * thr, n_steps: 5, ..Default::default() };
    let prop = Propagator::new(&m, 0.1, 5, FreeFlight::Compound).unwrap();
    let guess = TimedDensityPath::constant(&stamps(0.1, 5), &p0).unwrap();
    let err = picard_local_from(&m, &prop, &p0, &guess, &cfg, c1).unwrap_err();
    assert!(matches!(err, Error::LambdaTooLarge { .. }), "{err}");
    assert!(err.is_regime_violation());
}

#[test]
fn forward_without_collisions_is_transport() {
    let m = model(8);
    let p0 = bump(&m);
    let cfg = SolverConfig { lambda: 0.0, t_local: 0.25, n_steps: 5, ..Default::default() };
    let res = solve_forward(&m, &p0, 0.5, &cfg).unwrap();
    let k = m.transport.operator(m.grid.clone(), 0.05).unwrap();
    assert_eq!(res.path.len(), 11);
    let expect = k.apply_n(&p0, 10);
    assert!(res.path.last().l1_dist(&expect) < 1e-13);
}

#[test]
fn forward_solution_stays_inside_its_envelopes() {
    let m = model(8);
    let p0 = bump(&m);
    let cfg = SolverConfig { lambda: 0.05, t_local: 0.5, n_steps: 10, ..Default::default() };
    let res = solve_forward(&m, &p0, 0.5, &cfg).unwrap();
    let cps: Vec<f64> = (1..=5).map(|k| 0.1 * k as f64).collect();
    let env = envelope_report(&m, &res.path, &cps, cfg.lambda, res.c_one, 0.05).unwrap();
    assert!(env.nonnegative && env.upper_holds && env.lower_holds, "{env:?}");
    assert!(env.max_norm_defect <= 1e-9);
    assert!(env.points.windows(2).all(|w| w[1].c_tilde <= w[0].c_tilde));
}

#[test]
fn characteristic_form_without_collisions_has_unit_factor() {
    let m = model(8);
    let p0 = bump(&m);
    let cfg = SolverConfig { lambda: 0.0, t_local: 0.4, n_steps: 8, ..Default::default() };
    let res = solve_forward(&m, &p0, 0.4, &cfg).unwrap();
    let rep = characteristic_form_check(&m, &res.path, 0.0, 30, 3).unwrap();
    assert!(rep.samples.iter().all(|s| s.psi == 1.0));
    assert!(rep.psi_lower == 1.0 && rep.psi_upper == 1.0);
    assert!(rep.mean_residual <= rep.mean_estimate * (1.0 + 1e-12));
}

#[test]
fn characteristic_form_holds_within_grid_error() {
    let m = model(8);
    let p0 = bump(&m);
    let cfg = SolverConfig { lambda: 0.05, t_local: 0.4, n_steps: 8, ..Default::default() };
    let res = solve_forward(&m, &p0, 0.4, &cfg).unwrap();
    let rep = characteristic_form_check(&m, &res.path, cfg.lambda, 40, 9).unwrap();
    assert!(rep.psi_bounds_hold);
    assert!(rep.samples.iter().all(|s| s.psi >= 1.0));
    assert!(rep.ratio <= 5.0, "{}", rep.ratio);
}

#[test]
fn backward_step_above_the_bound_is_refused() {
    let m = model(6);
    let p0 = bump(&m);
    let cfg = SolverConfig { lambda: 0.05, backward_mu: 0.5, ..Default::default() };
    let err = solve_backward(&m, &p0, -0.5, &cfg, &consts()).unwrap_err();
    assert!(matches!(err, Error::MuTooLarge { .. }), "{err}");
}

#[test]
fn backward_below_the_omega_threshold_is_refused() {
    let m = model(6);
    let p0 = bump(&m);
    let c = SpectralConstants::for_polygon(&m.grid.poly, 2.0, 0.6, 2).unwrap();
    let err = solve_backward(&m, &p0, -0.1, &SolverConfig::default(), &c).unwrap_err();
    assert!(matches!(err, Error::OmegaBelowThreshold { .. }));
}

#[test]
fn backward_output_is_a_nonnegative_unit_path() {
    let m = model(8);
    let p0 = bump(&m);
    let cfg = SolverConfig { lambda: 0.05, backward_mu: 0.02, ..Default::default() };
    let res = solve_backward(&m, &p0, -0.1, &cfg, &consts()).unwrap();
    let r = &res.report;
    assert_eq!(r.steps, 5);
    assert_eq!(res.path.len(), 6);
    assert!((res.path.t_start() + 0.1).abs() < 1e-12 && res.path.t_end() == 0.0);
    assert!(r.nonnegative && r.max_norm_defect <= 1e-9, "{r:?}");
    assert!(r.growth_holds);
    assert!(r.inner_max_ratio <= r.kappa.max(1e-3));
}

#[test]
fn backward_roundtrip_improves_with_smaller_steps() {
    let m = model(12);
    let p0 = bump(&m);
    let err = |mu: f64| {
        let cfg = SolverConfig {
            lambda: 0.0,
            t_local: 0.1,
            n_steps: 4,
            free_flight: FreeFlight::Direct,
            backward_mu: mu,
            ..Default::default()
        };
        let b = solve_backward(&m, &p0, -0.1, &cfg, &consts()).unwrap();
        solve_forward(&m, b.path.first(), 0.1, &cfg).unwrap().path.last().l1_dist(&p0)
    };
    let (e1, e2) = (err(0.02), err(0.01));
    assert!(e2 < 0.8 * e1, "{e1} -> {e2}");
}

#[test]
fn resolvent_wrapper_solves_the_transport_equation() {
    let m = model(6);
    let c = consts();
    let g = random_density(&m, 4);
    let r = transport_resolvent(&m, &g, 2.0 * c.m1().unwrap(), c, WallResolution { n_s: 8, n_phi: 8, n_speed: 2 }, 1e-12).unwrap();
    assert!(r.residual <= 1e-5, "{}", r.residual);
    let zero = transport_resolvent(&m, &PhaseDensity::zeros(m.grid.clone()), 1.0, c, WallResolution { n_s: 8, n_phi: 8, n_speed: 2 }, 1e-12).unwrap();
    assert!(zero.f.values.iter().all(|x| *x == 0.0));
    let inside = transport_resolvent(&m, &g, -0.01, c, WallResolution::default(), 1e-12);
    assert!(matches!(inside, Err(Error::SeriesDivergent(_))));
}

#[test]
fn path_stamps_must_increase() {
    let m = model(4);
    let p = bump(&m);
    let mut path = TimedDensityPath::new(0.0, p.clone());
    path.push(0.5, p.clone()).unwrap();
    assert!(path.push(0.5, p.clone()).is_err());
    assert_eq!(path.index_at(0.49), 0);
    assert_eq!(path.index_at(0.5), 1);
    assert_eq!(path.index_at(7.0), 1);
    assert_eq!(path.index_at(-1.0), 0);
}

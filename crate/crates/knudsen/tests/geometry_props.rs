use knudsen::geometry::{
    billiard_step, invariant_histogram, reflect, BoundaryPoint, ConvexPolygon, Direction, Vec2,
};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Smallest positive `s` with `r - s v` on some edge, by solving every
/// ray/segment intersection independently.
fn brute_exit(poly: &ConvexPolygon, r: Vec2, v: Vec2) -> (f64, Vec2) {
    let verts = poly.vertices();
    let n = verts.len();
    let d = -v;
    let mut best = (f64::INFINITY, Vec2::ZERO);
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        let e = b - a;
        let den = d.cross(e);
        if den.abs() < 1e-15 {
            continue;
        }
        let ap = a - r;
        let s = ap.cross(e) / den;
        let u = ap.cross(d) / den;
        if s > 1e-14 && (-1e-12..=1.0 + 1e-12).contains(&u) && s < best.0 {
            best = (s, r + d * s);
        }
    }
    best
}

#[test]
fn exit_time_matches_segment_oracle() {
    let sq = ConvexPolygon::unit_square();
    let r = Vec2::new(0.25, 0.75);
    let v = Vec2::new(1.0, 1.0) * (1.0 / 2f64.sqrt());
    let hit = sq.exit_time(r, v).unwrap();
    let (t, p) = brute_exit(&sq, r, v);
    assert!((hit.t - t).abs() < 1e-12);
    assert!(hit.point.dist(p) < 1e-12);
}

proptest! {
    #[test]
    fn reflect_is_isometric_involution(vx in -5.0..5.0f64, vy in -5.0..5.0f64, th in 0.0..std::f64::consts::TAU) {
        let v = Vec2::new(vx, vy);
        let n = Vec2::from_angle(th);
        let r = reflect(v, n);
        prop_assert!((r.norm() - v.norm()).abs() <= 1e-14 * v.norm().max(1e-300));
        prop_assert!(reflect(r, n).dist(v) <= 1e-14 * v.norm().max(1.0));
    }

    #[test]
    fn exit_point_on_boundary_and_ray_inside(
        x in 0.01..0.99f64, y in 0.01..0.99f64, th in 0.0..std::f64::consts::TAU, sp in 1.0..2.0f64,
        sides in 3usize..8,
    ) {
        let poly = ConvexPolygon::regular(sides, 1.0).unwrap();
        let (lo, hi) = poly.bbox();
        let r = lo + Vec2::new((hi.x - lo.x) * x, (hi.y - lo.y) * y);
        prop_assume!(poly.max_violation(r) < -1e-6);
        let v = Vec2::polar(sp, th);
        let Ok(hit) = poly.exit_time(r, v) else { return Ok(()) };
        let tol = 1e-12 * poly.diam();
        prop_assert!(hit.t > 0.0);
        prop_assert!(poly.max_violation(hit.point).abs() <= tol);
        for k in 1..=32 {
            let s = hit.t * k as f64 / 33.0;
            prop_assert!(poly.max_violation(r - v * s) <= tol);
        }
        let (t, p) = brute_exit(&poly, r, v);
        prop_assert!((t - hit.t).abs() <= 1e-9 * poly.diam());
        prop_assert!(p.dist(hit.point) <= 1e-9 * poly.diam());
    }

    #[test]
    fn billiard_roundtrip_and_speed(e in 0usize..4, s in 0.01..0.99f64, phi in -1.5..1.5f64, sp in 1.0..2.0f64) {
        let sq = ConvexPolygon::unit_square();
        let n = sq.normal(e);
        let t = sq.tangent(e);
        let b = BoundaryPoint { edge: e, s, w: (n * phi.cos() + t * phi.sin()) * sp };
        let Ok(f) = billiard_step(&sq, &b, Direction::Forward) else { return Ok(()) };
        prop_assert!((f.w.norm() - sp).abs() <= 1e-14 * sp);
        let back = billiard_step(&sq, &f, Direction::Inverse).unwrap();
        prop_assert_eq!(back.edge, b.edge);
        prop_assert!((back.s - b.s).abs() <= 1e-12 * sq.diam());
        prop_assert!(back.w.dist(b.w) <= 1e-13);
    }
}

#[test]
fn invariant_measure_chi_square() {
    let sq = ConvexPolygon::unit_square();
    let (obs, probs) = invariant_histogram(&sq, 1.0, 2.0, 8, 8, 200_000, 5, 11);
    let n: u64 = obs.iter().sum();
    let chi2: f64 = obs
        .iter()
        .zip(&probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (obs.len() - 1) as f64;
    let pval = 1.0 - ChiSquared::new(dof).unwrap().cdf(chi2);
    assert!(pval > 0.01, "chi2 = {chi2}, p = {pval}");
}

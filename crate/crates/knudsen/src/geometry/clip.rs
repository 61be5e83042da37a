//! Convex polygon clipping used by the exact cell-overlap transport.

use super::Vec2;

/// Signed area of a closed vertex loop (positive when counterclockwise).
pub fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..n {
        a += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * a
}

pub fn area(poly: &[Vec2]) -> f64 {
    signed_area(poly).abs()
}

pub fn centroid(poly: &[Vec2]) -> Vec2 {
    let n = poly.len();
    let a = signed_area(poly);
    if n < 3 || a.abs() < 1e-300 {
        let s = poly.iter().fold(Vec2::ZERO, |acc, p| acc + *p);
        return s * (1.0 / n.max(1) as f64);
    }
    let mut c = Vec2::ZERO;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let w = p.cross(q);
        c += (p + q) * w;
    }
    c * (1.0 / (6.0 * a))
}

/// Keeps the part of `poly` with `n·x <= c` (Sutherland–Hodgman, one plane).
pub fn clip_halfplane(poly: &[Vec2], n: Vec2, c: f64) -> Vec<Vec2> {
    let m = poly.len();
    let mut out = Vec::with_capacity(m + 1);
    if m == 0 {
        return out;
    }
    for i in 0..m {
        let p = poly[i];
        let q = poly[(i + 1) % m];
        let dp = n.dot(p) - c;
        let dq = n.dot(q) - c;
        if dp <= 0.0 {
            out.push(p);
        }
        if (dp < 0.0 && dq > 0.0) || (dp > 0.0 && dq < 0.0) {
            let t = dp / (dp - dq);
            out.push(p + (q - p) * t);
        }
    }
    if out.len() < 3 {
        out.clear();
    }
    out
}

/// Intersection of `poly` with a convex counterclockwise `clipper`.
pub fn clip_convex(poly: &[Vec2], clipper: &[Vec2]) -> Vec<Vec2> {
    let m = clipper.len();
    let mut cur = poly.to_vec();
    for i in 0..m {
        if cur.is_empty() {
            break;
        }
        let a = clipper[i];
        let b = clipper[(i + 1) % m];
        let t = b - a;
        let n = Vec2::new(t.y, -t.x);
        cur = clip_halfplane(&cur, n, n.dot(a));
    }
    cur
}

/// Intersection with the axis-aligned box `[lo, hi]`.
pub fn clip_box(poly: &[Vec2], lo: Vec2, hi: Vec2) -> Vec<Vec2> {
    let mut cur = clip_halfplane(poly, Vec2::new(1.0, 0.0), hi.x);
    cur = clip_halfplane(&cur, Vec2::new(-1.0, 0.0), -lo.x);
    cur = clip_halfplane(&cur, Vec2::new(0.0, 1.0), hi.y);
    clip_halfplane(&cur, Vec2::new(0.0, -1.0), -lo.y)
}

pub fn translate(poly: &[Vec2], d: Vec2) -> Vec<Vec2> {
    poly.iter().map(|p| *p + d).collect()
}

/// Mirror image across the line `n·x = c` (`n` unit). Orientation is
/// restored so the result stays counterclockwise.
pub fn mirror(poly: &[Vec2], n: Vec2, c: f64) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = poly
        .iter()
        .map(|p| *p - n * (2.0 * (n.dot(*p) - c)))
        .collect();
    out.reverse();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(lo: f64, hi: f64) -> Vec<Vec2> {
        vec![
            Vec2::new(lo, lo),
            Vec2::new(hi, lo),
            Vec2::new(hi, hi),
            Vec2::new(lo, hi),
        ]
    }

    #[test]
    fn overlapping_squares() {
        let a = square(0.0, 1.0);
        let b = square(0.5, 1.5);
        assert!((area(&clip_convex(&a, &b)) - 0.25).abs() < 1e-15);
        assert!(clip_convex(&a, &square(2.0, 3.0)).is_empty());
    }

    #[test]
    fn diagonal_cut_and_centroid() {
        let a = square(0.0, 1.0);
        let tri = clip_halfplane(&a, Vec2::new(1.0, 1.0), 1.0);
        assert!((area(&tri) - 0.5).abs() < 1e-15);
        let c = centroid(&tri);
        assert!(c.dist(Vec2::new(1.0 / 3.0, 1.0 / 3.0)) < 1e-15);
    }

    #[test]
    fn mirror_keeps_orientation() {
        let a = square(0.0, 1.0);
        let m = mirror(&a, Vec2::new(1.0, 0.0), 1.0);
        assert!((signed_area(&m) - 1.0).abs() < 1e-15);
        assert!((centroid(&m).x - 1.5).abs() < 1e-15);
    }
}

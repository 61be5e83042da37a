/// `∫ hat_j(t) γ_k(t) dt` for `j = 0..=j_max`, where `γ_k` is the density
/// of the sum of `k` independent exponential times of mean `scale` and
/// `hat_j` the piecewise-linear hat centred at `j h`. Composite Simpson on
/// each half of every hat; the weights are renormalized to sum to one.
pub fn gamma_hat_weights(k: usize, scale: f64, h: f64, j_max: usize) -> Vec<f64> {
    assert!(k >= 1 && scale > 0.0 && h > 0.0);
    let ln_norm: f64 = (1..k).map(|i| (i as f64).ln()).sum::<f64>() + k as f64 * scale.ln();
    let pdf = |t: f64| {
        if t < 0.0 {
            0.0
        } else if t == 0.0 {
            if k == 1 {
                1.0 / scale
            } else {
                0.0
            }
        } else {
            ((k as f64 - 1.0) * t.ln() - t / scale - ln_norm).exp()
        }
    };
    const N: usize = 64;
    let mut w: Vec<f64> = (0..=j_max)
        .map(|j| {
            let tj = j as f64 * h;
            let mut tot = 0.0;
            for (a, b) in [(tj - h, tj), (tj, tj + h)] {
                if b <= 0.0 {
                    continue;
                }
                let a = a.max(0.0);
                let dx = (b - a) / N as f64;
                let mut acc = 0.0;
                for i in 0..=N {
                    let t = a + i as f64 * dx;
                    let c = if i == 0 || i == N {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    acc += c * pdf(t) * (1.0 - (t - tj).abs() / h);
                }
                tot += acc * dx / 3.0;
            }
            tot
        })
        .collect();
    let s: f64 = w.iter().sum();
    for x in &mut w {
        *x /= s;
    }
    w
}

/// Gauss–Laguerre nodes and weights for `∫_0^∞ e^{-x} φ(x) dx`, by Newton
/// iteration on the Laguerre recurrence.
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z: f64 = 0.0;
    for i in 0..n {
        z = match i {
            0 => 3.0 / (1.0 + 2.4 * nf),
            1 => z + 15.0 / (1.0 + 2.5 * nf),
            _ => {
                let ai = (i - 1) as f64;
                z + ((1.0 + 2.55 * ai) / (1.9 * ai)) * (z - x[i - 2])
            }
        };
        let mut pp = 0.0;
        let mut p2 = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0 - z) * p2 - jf * p3) / (jf + 1.0);
            }
            pp = (nf * p1 - nf * p2) / z;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        w[i] = -1.0 / (pp * nf * p2);
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laguerre_integrates_moments() {
        let (x, w) = gauss_laguerre(8);
        let mut fact = 1.0;
        for m in 0..16 {
            if m > 0 {
                fact *= m as f64;
            }
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(m)).sum();
            assert!((q / fact - 1.0).abs() < 1e-10, "moment {m}: {q} vs {fact}");
        }
    }

    #[test]
    fn hat_weights_reproduce_mean_and_variance() {
        for (k, mu) in [(1, 0.02), (5, 0.02), (20, 0.005)] {
            let h = 0.002;
            let kf = k as f64;
            let jmax = ((mu * (kf + 10.0 * kf.sqrt() + 10.0)) / h).ceil() as usize;
            let w = gamma_hat_weights(k, mu, h, jmax);
            let mean: f64 = w.iter().enumerate().map(|(j, w)| w * j as f64 * h).sum();
            assert!((mean - kf * mu).abs() < 1e-6, "k {k}: mean {mean}");
            // hats add h²/6 to the variance
            let var: f64 = w.iter().enumerate().map(|(j, w)| w * (j as f64 * h - mean).powi(2)).sum();
            assert!((var - kf * mu * mu - h * h / 6.0).abs() < 1e-3 * kf * mu * mu, "k {k}: var {var}");
        }
    }
}

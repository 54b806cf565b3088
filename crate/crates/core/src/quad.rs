//! Gauss-Legendre rules.

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            if n == 1 {
                dp = 1.0;
            }
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n == 1 {
        x[0] = 0.0;
        w[0] = 2.0;
    }
    (x, w)
}

/// Map a rule from `[-1, 1]` to `[a, b]`.
pub fn mapped(rule: &(Vec<f64>, Vec<f64>), a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    rule.0.iter().zip(&rule.1).map(move |(&x, &w)| (c + h * x, h * w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for n in [1, 2, 5, 12, 16, 24] {
            let r = gauss_legendre(n);
            assert!((r.1.iter().sum::<f64>() - 2.0).abs() < 1e-14);
            // x^(2n-2) integrates to 2/(2n-1)
            let k = 2 * n - 2;
            let s: f64 = r.0.iter().zip(&r.1).map(|(x, w)| w * x.powi(k as i32)).sum();
            assert!((s - 2.0 / (k as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn mapped_interval() {
        let r = gauss_legendre(10);
        let s: f64 = mapped(&r, 0.0, std::f64::consts::PI).map(|(x, w)| w * x.sin()).sum();
        assert!((s - 2.0).abs() < 1e-13);
    }
}

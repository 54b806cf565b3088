//! Small statistics helpers: moments, standard errors, Wilson intervals,
//! least squares, bootstrap.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::rng::Rng;

/// Mean and standard error of the mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn ci(&self, z: f64) -> (f64, f64) {
        (self.mean - z * self.se, self.mean + z * self.se)
    }

    /// `|mean - target| <= k se` (with an absolute floor for exact cases).
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se + 1e-12 * (1.0 + target.abs())
    }
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

pub fn estimate(x: &[f64]) -> Estimate {
    let n = x.len();
    Estimate { mean: mean(x), se: (variance(x) / n as f64).sqrt(), n }
}

/// Excess kurtosis (0 for a Gaussian).
pub fn excess_kurtosis(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// Sample variance with its standard error, from the fourth central moment.
pub fn variance_estimate(x: &[f64]) -> Estimate {
    let n = x.len() as f64;
    let m = mean(x);
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    Estimate { mean: variance(x), se: ((m4 - m2 * m2) / n).max(0.0).sqrt(), n: x.len() }
}

/// Pearson correlation with the large-sample standard error `(1 - r^2)/sqrt(n)`.
pub fn correlation(x: &[f64], y: &[f64]) -> Estimate {
    let n = x.len();
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let r = sxy / (sxx * syy).sqrt();
    Estimate { mean: r, se: (1.0 - r * r) / (n as f64).sqrt(), n }
}

/// Sample covariance of paired data and its standard error (from the
/// variance of the centred products).
pub fn covariance(x: &[f64], y: &[f64]) -> Estimate {
    let n = x.len();
    let (mx, my) = (mean(x), mean(y));
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let c = prods.iter().sum::<f64>() / (n - 1) as f64;
    Estimate { mean: c, se: (variance(&prods) / n as f64).sqrt(), n }
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let c = (p + z2 / (2.0 * n)) / den;
    let h = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    ((c - h).max(0.0), (c + h).min(1.0))
}

/// Weighted least squares `y = a + b x`; returns `(a, b, se_a, se_b)`.
/// With `w = None` the residual variance is estimated from the data; with
/// weights `1/sigma^2` the fit uses the supplied variances.
pub fn linear_fit(x: &[f64], y: &[f64], w: Option<&[f64]>) -> (f64, f64, f64, f64) {
    let n = x.len();
    let ones = vec![1.0; n];
    let w = w.unwrap_or(&ones);
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    let b = (sw * sxy - sx * sy) / det;
    let a = (sy - b * sx) / sw;
    let mut var_a = sxx / det;
    let mut var_b = sw / det;
    if std::ptr::eq(w.as_ptr(), ones.as_ptr()) && n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(x, y)| (y - a - b * x).powi(2)).sum();
        let s2 = rss / (n - 2) as f64;
        var_a *= s2;
        var_b *= s2;
    }
    (a, b, var_a.sqrt(), var_b.sqrt())
}

/// Percentile bootstrap interval of a statistic.
pub fn bootstrap_ci(x: &[f64], stat: impl Fn(&[f64]) -> f64, reps: usize, level: f64, rng: &mut Rng) -> (f64, f64) {
    let n = x.len();
    let mut buf = vec![0.0; n];
    let mut vals: Vec<f64> = (0..reps)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = x[rng.random_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    let lo = ((1.0 - level) / 2.0 * reps as f64) as usize;
    let hi = (((1.0 + level) / 2.0 * reps as f64) as usize).min(reps - 1);
    (vals[lo], vals[hi])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_contains_p() {
        let (lo, hi) = wilson(30, 100, 1.96);
        assert!(lo < 0.3 && hi > 0.3);
        let (lo, hi) = wilson(0, 50, 1.96);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.1);
    }

    #[test]
    fn exact_line_fit() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|x| 2.0 - 0.5 * x).collect();
        let (a, b, sa, sb) = linear_fit(&x, &y, None);
        assert!((a - 2.0).abs() < 1e-12 && (b + 0.5).abs() < 1e-12);
        assert!(sa < 1e-6 && sb < 1e-6);
    }

    #[test]
    fn quantiles() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
    }
}

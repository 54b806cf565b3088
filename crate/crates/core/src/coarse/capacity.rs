//! Capacity lower bounds for unions of equal cubes.
//!
//! For cubes `a_1 + Q, ..., a_m + Q` and the normalised equilibrium measure
//! `e` of `Q`, every measure `sum_b w_b e(. - a_b)` with `sum w = 1` gives
//! `cap >= 1 / w^T M w` where `M_bc` is the mutual energy of the two cube
//! measures. The best such `w` is `M^-1 1 / 1^T M^-1 1` when nonnegative.
//! For `Q` a single point this is the exact capacity.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::green::GreenOracle;
use crate::lattice::{BoxSpec, Point};
use crate::potential::{equilibrium_free_iterative, equilibrium_measure, Kernel, LINE_DENSE_BELOW};

/// Subset enumerations above this count fall back to greedy removal.
pub const EXHAUSTIVE_SUBSETS: u64 = 200_000;

pub struct BlockEnergy<'a> {
    pub side: i64,
    pub cube_capacity: f64,
    oracle: &'a GreenOracle,
    /// `A(D) = sum_x e(x) e(x + D)` for the normalised cube measure.
    autocorr: Vec<(Point, f64)>,
}

impl<'a> BlockEnergy<'a> {
    pub fn new(side: i64, oracle: &'a GreenOracle) -> Result<BlockEnergy<'a>> {
        let d = oracle.dim();
        let cube = BoxSpec::half_open(Point::zero(d), 0, side).to_set();
        let eq = if cube.len() < LINE_DENSE_BELOW {
            equilibrium_measure(&cube, Kernel::Free(oracle))?
        } else {
            equilibrium_free_iterative(&cube, oracle)?
        };
        let norm = eq.normalized();
        let mut acc = HashMap::<Point, f64>::new();
        for (x, a) in &norm {
            for (y, b) in &norm {
                *acc.entry(*y - *x).or_insert(0.0) += a * b;
            }
        }
        let mut autocorr: Vec<(Point, f64)> = acc.into_iter().filter(|(_, w)| *w > 1e-16).collect();
        autocorr.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(BlockEnergy { side, cube_capacity: eq.capacity, oracle, autocorr })
    }

    /// Mutual energy of the cube measures at `a` and `b`.
    pub fn mutual(&self, a: &Point, b: &Point) -> Result<f64> {
        if a == b {
            return Ok(1.0 / self.cube_capacity);
        }
        let dz = *b - *a;
        let mut s = 0.0;
        for (dl, w) in &self.autocorr {
            s += w * self.oracle.value(&(dz + *dl))?;
        }
        Ok(s)
    }

    pub fn matrix(&self, pts: &[Point]) -> Result<DMatrix<f64>> {
        let n = pts.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let e = self.mutual(&pts[i], &pts[j])?;
                m[(i, j)] = e;
                m[(j, i)] = e;
            }
        }
        Ok(m)
    }
}

/// Lower bound on the capacity of the union of the cubes indexed by `s`.
pub fn subset_bound(m: &DMatrix<f64>, s: &[usize]) -> f64 {
    let k = s.len();
    if k == 0 {
        return 0.0;
    }
    let sub = DMatrix::from_fn(k, k, |i, j| m[(s[i], s[j])]);
    let one = DVector::from_element(k, 1.0);
    if let Some(ch) = sub.clone().cholesky() {
        let w = ch.solve(&one);
        if w.iter().all(|v| *v >= 0.0) {
            return w.sum();
        }
    }
    // uniform weights
    (k * k) as f64 / sub.sum()
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u64 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// Minimum of the bound over subsets of size `r`; exact when the number of
/// subsets is at most [`EXHAUSTIVE_SUBSETS`], otherwise by greedy removal.
/// Returns `(bound, exhaustive, subsets evaluated)`.
pub fn min_over_subsets(m: &DMatrix<f64>, r: usize) -> (f64, bool, u64) {
    let n = m.nrows();
    let r = r.min(n);
    if binomial(n as u64, r as u64) <= EXHAUSTIVE_SUBSETS {
        let mut best = f64::INFINITY;
        let mut idx: Vec<usize> = (0..r).collect();
        let mut count = 0u64;
        loop {
            best = best.min(subset_bound(m, &idx));
            count += 1;
            let mut i = r;
            while i > 0 && idx[i - 1] == n - r + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..r {
                idx[j] = idx[j - 1] + 1;
            }
        }
        (best, true, count)
    } else {
        let (trail, count) = greedy_trail(m, r);
        (trail.last().map(|t| t.1).unwrap_or(f64::INFINITY), false, count)
    }
}

/// Remove, one at a time, the cube whose removal lowers the bound most.
/// Returns `(size, bound)` from `n` down to `stop`.
fn greedy_trail(m: &DMatrix<f64>, stop: usize) -> (Vec<(usize, f64)>, u64) {
    let n = m.nrows();
    let mut keep: Vec<usize> = (0..n).collect();
    let mut trail = vec![(n, subset_bound(m, &keep))];
    let mut count = 1u64;
    while keep.len() > stop.max(1) {
        let mut best = (f64::INFINITY, 0);
        for k in 0..keep.len() {
            let mut s = keep.clone();
            s.remove(k);
            let b = subset_bound(m, &s);
            count += 1;
            if b < best.0 {
                best = (b, k);
            }
        }
        keep.remove(best.1);
        trail.push((keep.len(), best.0));
    }
    (trail, count)
}

/// `min over nonempty T of bound(T) * n / |T|`, exhaustive up to 16 cubes.
pub fn min_scaled_over_subsets(m: &DMatrix<f64>) -> (f64, bool) {
    let n = m.nrows();
    if n <= 16 {
        let mut best = f64::INFINITY;
        for mask in 1u32..(1u32 << n) {
            let s: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            best = best.min(subset_bound(m, &s) * n as f64 / s.len() as f64);
        }
        (best, true)
    } else {
        let (trail, _) = greedy_trail(m, 1);
        (trail.iter().map(|(k, b)| b * n as f64 / *k as f64).fold(f64::INFINITY, f64::min), false)
    }
}

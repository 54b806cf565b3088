//! Conjugate gradients, FFT-based convolution on boxes (circulant embedding of
//! block-Toeplitz matrices), orthonormal DST-I transforms and the spectral
//! Dirichlet solver on boxes.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Outcome of an iterative solve.
#[derive(Clone, Copy, Debug)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Conjugate gradients for a symmetric positive definite operator.
/// Stops when `|r| <= tol * |b|`.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgStats> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(CgStats { iterations: 0, residual: 0.0 });
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if rr.sqrt() <= tol * bnorm {
            return Ok(CgStats { iterations: it, residual: rr.sqrt() / bnorm });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Solver("operator not positive definite".into()));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    // Final true residual.
    apply(x, &mut ax);
    let res = norm(&b.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>()) / bnorm;
    if res <= tol {
        return Ok(CgStats { iterations: max_iter, residual: res });
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: res })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `A x = b` for SPD `A` by Cholesky; falls back to LU when the
/// factorisation fails numerically.
pub fn spd_solve(a: DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(b);
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(&rhs).iter().copied().collect());
    }
    a.lu().solve(&rhs).map(|v| v.iter().copied().collect()).ok_or_else(|| Error::Solver("singular matrix".into()))
}

/// Inverse of an SPD matrix.
pub fn spd_inverse(a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.inverse());
    }
    a.try_inverse().ok_or_else(|| Error::Solver("singular matrix".into()))
}

/// Smallest integer `>= n` of the form `2^a 3^b 5^c`.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// In-place multi-dimensional complex FFT over a row-major array.
pub struct FftNd {
    dims: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(dims: &[usize]) -> FftNd {
        let mut planner = FftPlanner::new();
        FftNd {
            dims: dims.to_vec(),
            fwd: dims.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inv: dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalised transform (`inverse` divides by nothing).
    pub fn process(&self, data: &mut [Complex64], inverse: bool) {
        let plans = if inverse { &self.inv } else { &self.fwd };
        let d = self.dims.len();
        let total = self.len();
        let mut inner = 1;
        for ax in (0..d).rev() {
            let n = self.dims[ax];
            let plan = &plans[ax];
            if inner == 1 {
                plan.process(data);
            } else {
                let outer = total / (n * inner);
                let mut buf = vec![Complex64::new(0.0, 0.0); n * inner];
                for o in 0..outer {
                    let base = o * n * inner;
                    // gather the `inner` lines of this slab into contiguous rows
                    for j in 0..n {
                        for i in 0..inner {
                            buf[i * n + j] = data[base + j * inner + i];
                        }
                    }
                    plan.process(&mut buf);
                    for j in 0..n {
                        for i in 0..inner {
                            data[base + j * inner + i] = buf[i * n + j];
                        }
                    }
                }
            }
            inner *= n;
        }
    }
}

/// Symmetric block-Toeplitz operator `y_x = sum_y k(|x - y|) v_y` on a box of
/// extents `ext`, applied by circulant embedding.
pub struct ConvOperator {
    ext: Vec<usize>,
    emb: Vec<usize>,
    fft: FftNd,
    kernel_hat: Vec<f64>,
}

impl ConvOperator {
    /// `kernel(abs_disp)` is evaluated on `|dx_i| < ext_i`.
    pub fn new(ext: &[usize], kernel: impl Fn(&[usize]) -> f64) -> ConvOperator {
        let d = ext.len();
        let emb: Vec<usize> = ext.iter().map(|&e| fast_len((2 * e).saturating_sub(1).max(1))).collect();
        let fft = FftNd::new(&emb);
        let total = fft.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        let mut idx = vec![0usize; d];
        let mut disp = vec![0usize; d];
        for b in buf.iter_mut() {
            let mut ok = true;
            for i in 0..d {
                let j = idx[i];
                let a = if j < ext[i] {
                    j
                } else if emb[i] - j < ext[i] {
                    emb[i] - j
                } else {
                    ok = false;
                    0
                };
                disp[i] = a;
            }
            if ok {
                *b = Complex64::new(kernel(&disp), 0.0);
            }
            for i in (0..d).rev() {
                idx[i] += 1;
                if idx[i] < emb[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        fft.process(&mut buf, false);
        let kernel_hat = buf.iter().map(|c| c.re / total as f64).collect();
        ConvOperator { ext: ext.to_vec(), emb, fft, kernel_hat }
    }

    pub fn len(&self) -> usize {
        self.ext.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `out = K v` with `v`, `out` row-major over the box.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let d = self.ext.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft.len()];
        let mut idx = vec![0usize; d];
        for &x in v {
            let mut e = 0;
            for i in 0..d {
                e = e * self.emb[i] + idx[i];
            }
            buf[e] = Complex64::new(x, 0.0);
            for i in (0..d).rev() {
                idx[i] += 1;
                if idx[i] < self.ext[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        self.fft.process(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= *k;
        }
        self.fft.process(&mut buf, true);
        idx.fill(0);
        for o in out.iter_mut() {
            let mut e = 0;
            for i in 0..d {
                e = e * self.emb[i] + idx[i];
            }
            *o = buf[e].re;
            for i in (0..d).rev() {
                idx[i] += 1;
                if idx[i] < self.ext[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
    }
}

/// Orthonormal DST-I applied along every axis of a row-major real array.
/// The transform is its own inverse.
pub struct DstNd {
    dims: Vec<usize>,
    plans: Vec<Arc<dyn Fft<f64>>>,
}

impl DstNd {
    pub fn new(dims: &[usize]) -> DstNd {
        let mut planner = FftPlanner::new();
        DstNd { dims: dims.to_vec(), plans: dims.iter().map(|&n| planner.plan_fft_forward(2 * (n + 1))).collect() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn process(&self, data: &mut [f64]) {
        let d = self.dims.len();
        let total: usize = self.dims.iter().product();
        assert_eq!(data.len(), total);
        let mut inner = 1;
        for ax in (0..d).rev() {
            let n = self.dims[ax];
            let m = 2 * (n + 1);
            let scale = (2.0 / (n + 1) as f64).sqrt() * 0.5;
            let outer = total / (n * inner);
            let lines = outer * inner;
            // Two real lines per complex transform, batched.
            let pairs = lines.div_ceil(2);
            const BATCH: usize = 64;
            let mut buf = vec![Complex64::new(0.0, 0.0); m * BATCH];
            let line_start = |l: usize| (l / inner) * n * inner + (l % inner);
            let mut pair = 0;
            while pair < pairs {
                let nb = BATCH.min(pairs - pair);
                let chunk = &mut buf[..m * nb];
                chunk.fill(Complex64::new(0.0, 0.0));
                for b in 0..nb {
                    let la = 2 * (pair + b);
                    let lb = la + 1;
                    let row = &mut chunk[b * m..(b + 1) * m];
                    let sa = line_start(la);
                    for j in 0..n {
                        let v = data[sa + j * inner];
                        row[j + 1].re = v;
                        row[m - 1 - j].re = -v;
                    }
                    if lb < lines {
                        let sb = line_start(lb);
                        for j in 0..n {
                            let v = data[sb + j * inner];
                            row[j + 1].im = v;
                            row[m - 1 - j].im = -v;
                        }
                    }
                }
                self.plans[ax].process(chunk);
                for b in 0..nb {
                    let la = 2 * (pair + b);
                    let lb = la + 1;
                    let row = &chunk[b * m..(b + 1) * m];
                    let sa = line_start(la);
                    for k in 0..n {
                        data[sa + k * inner] = -row[k + 1].im * scale;
                    }
                    if lb < lines {
                        let sb = line_start(lb);
                        for k in 0..n {
                            data[sb + k * inner] = row[k + 1].re * scale;
                        }
                    }
                }
                pair += nb;
            }
            inner *= n;
        }
    }

    /// Eigenvalues of `I - P` with Dirichlet conditions, in the DST basis.
    pub fn laplacian_eigenvalues(&self) -> Vec<f64> {
        let d = self.dims.len();
        let cos: Vec<Vec<f64>> = self
            .dims
            .iter()
            .map(|&n| (1..=n).map(|k| (std::f64::consts::PI * k as f64 / (n + 1) as f64).cos()).collect())
            .collect();
        let total: usize = self.dims.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let mu: f64 = (0..d).map(|i| cos[i][idx[i]]).sum::<f64>() / d as f64;
            out.push(1.0 - mu);
            for i in (0..d).rev() {
                idx[i] += 1;
                if idx[i] < self.dims[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        out
    }
}

/// Exact solver for `(I - P_B) u = b` on a box `B` with zero boundary values.
pub struct BoxDirichlet {
    dst: DstNd,
    eig: Vec<f64>,
}

impl BoxDirichlet {
    pub fn new(dims: &[usize]) -> BoxDirichlet {
        let dst = DstNd::new(dims);
        let eig = dst.laplacian_eigenvalues();
        BoxDirichlet { dst, eig }
    }

    pub fn solve(&self, rhs: &mut [f64]) {
        self.dst.process(rhs);
        for (v, l) in rhs.iter_mut().zip(&self.eig) {
            *v /= l;
        }
        self.dst.process(rhs);
    }

    pub fn dst(&self) -> &DstNd {
        &self.dst
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dst_is_orthonormal_involution() {
        let dims = [5, 3, 4];
        let dst = DstNd::new(&dims);
        let orig: Vec<f64> = (0..60).map(|k| ((k * 7919) % 13) as f64 - 6.0).collect();
        let mut v = orig.clone();
        dst.process(&mut v);
        let n0: f64 = orig.iter().map(|x| x * x).sum();
        let n1: f64 = v.iter().map(|x| x * x).sum();
        assert!((n0 - n1).abs() < 1e-10 * n0);
        dst.process(&mut v);
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dst_matches_direct_sum() {
        let n = 7;
        let x: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin() + 0.1).collect();
        let mut y = x.clone();
        DstNd::new(&[n]).process(&mut y);
        for k in 0..n {
            let want: f64 = (0..n)
                .map(|j| x[j] * (std::f64::consts::PI * ((j + 1) * (k + 1)) as f64 / (n + 1) as f64).sin())
                .sum::<f64>()
                * (2.0 / (n + 1) as f64).sqrt();
            assert!((y[k] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn box_dirichlet_inverts_laplacian() {
        let dims = [4, 5, 3];
        let solver = BoxDirichlet::new(&dims);
        let b: Vec<f64> = (0..60).map(|k| (k % 5) as f64 - 1.5).collect();
        let mut u = b.clone();
        solver.solve(&mut u);
        // apply I - P with zero outside
        let idx = |i: usize, j: usize, k: usize| (i * 5 + j) * 3 + k;
        for i in 0..4 {
            for j in 0..5 {
                for k in 0..3 {
                    let mut s = 0.0;
                    let nb = [
                        (i as i64 + 1, j as i64, k as i64),
                        (i as i64 - 1, j as i64, k as i64),
                        (i as i64, j as i64 + 1, k as i64),
                        (i as i64, j as i64 - 1, k as i64),
                        (i as i64, j as i64, k as i64 + 1),
                        (i as i64, j as i64, k as i64 - 1),
                    ];
                    for (a, b2, c) in nb {
                        if (0..4).contains(&a) && (0..5).contains(&b2) && (0..3).contains(&c) {
                            s += u[idx(a as usize, b2 as usize, c as usize)];
                        }
                    }
                    let lhs = u[idx(i, j, k)] - s / 6.0;
                    assert!((lhs - b[idx(i, j, k)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn convolution_matches_direct() {
        let ext = [6, 3];
        let kern = |a: &[usize]| 1.0 / (1.0 + (a[0] * a[0] + a[1] * a[1]) as f64);
        let op = ConvOperator::new(&ext, kern);
        let v: Vec<f64> = (0..18).map(|k| (k as f64 * 1.3).cos()).collect();
        let mut out = vec![0.0; 18];
        op.apply(&v, &mut out);
        for x in 0..18usize {
            let (xi, xj) = (x / 3, x % 3);
            let want: f64 = (0..18)
                .map(|y: usize| {
                    let (yi, yj) = (y / 3, y % 3);
                    kern(&[xi.abs_diff(yi), xj.abs_diff(yj)]) * v[y]
                })
                .sum();
            assert!((out[x] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_solves_spd() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let mut x = [0.0; 3];
        let st = conjugate_gradient(
            |v, o| {
                for i in 0..3 {
                    o[i] = (0..3).map(|j| a[i][j] * v[j]).sum();
                }
            },
            &b,
            &mut x,
            1e-14,
            50,
        )
        .unwrap();
        assert!(st.iterations <= 4);
        let m = DMatrix::from_fn(3, 3, |i, j| a[i][j]);
        let y = spd_solve(m, &b).unwrap();
        for i in 0..3 {
            assert!((x[i] - y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_lengths() {
        assert_eq!(fast_len(7), 8);
        assert_eq!(fast_len(31), 32);
        assert_eq!(fast_len(32769), 32805);
    }
}

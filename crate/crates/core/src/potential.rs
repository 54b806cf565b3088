//! Killed Green functions, equilibrium measures, capacities and escape
//! probabilities for simple random walk.
//!
//! Dense paths solve `G e = 1` with unknowns on the inner boundary of `K`
//! (interior points of `K` carry no equilibrium mass). Large free-space sets
//! use conjugate gradients with an FFT matvec over the bounding box, and large
//! relative problems solve the sparse Dirichlet problem for
//! `h = P[H_K < T_U]` and read off `e = h - P h` on `K`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::green::{GreenOracle, GreenTable};
use crate::lattice::{inner_boundary, segment, BoxSpec, Grid, Point, PointSet, TubeSpec, MAX_DIM};
use crate::linalg::{conjugate_gradient, spd_inverse, spd_solve, ConvOperator};
use crate::rng;
use crate::stats;

pub const DEFAULT_DENSE_LIMIT: usize = 3000;
/// Weights below `-NEGATIVE_TOL` are treated as a failed solve.
pub const NEGATIVE_TOL: f64 = 1e-8;
pub const CLIP_TOL: f64 = 1e-12;
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Below this many points the line capacity is solved densely.
pub const LINE_DENSE_BELOW: usize = 512;
const CG_TOL: f64 = 1e-12;

/// `g_U` on `U x U` as a dense matrix, `(I - P_U)^{-1}`.
#[derive(Clone, Debug)]
pub struct KilledGreen {
    u: PointSet,
    m: DMatrix<f64>,
}

impl KilledGreen {
    pub fn new(u: &PointSet) -> Result<KilledGreen> {
        Self::with_limit(u, DEFAULT_DENSE_LIMIT)
    }

    pub fn with_limit(u: &PointSet, limit: usize) -> Result<KilledGreen> {
        if u.is_empty() {
            return Err(Error::EmptySet("killed_green domain"));
        }
        if u.len() > limit {
            return Err(Error::TooLarge { what: "|U| for a dense killed Green matrix (use the sparse solvers)", size: u.len(), limit });
        }
        let n = u.len();
        let step = 1.0 / (2 * u.dim()) as f64;
        let mut a = DMatrix::<f64>::identity(n, n);
        for (i, p) in u.iter().enumerate() {
            for q in p.nn_neighbors() {
                if let Some(j) = u.position(&q) {
                    a[(i, j)] -= step;
                }
            }
        }
        let mut m = spd_inverse(a)?;
        // exact symmetrisation removes the O(eps) asymmetry of the inverse
        let mt = m.transpose();
        m = (m + mt) * 0.5;
        Ok(KilledGreen { u: u.clone(), m })
    }

    pub fn domain(&self) -> &PointSet {
        &self.u
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// `g_U(x, y)`, zero when either point is outside `U`.
    pub fn get(&self, x: &Point, y: &Point) -> f64 {
        match (self.u.position(x), self.u.position(y)) {
            (Some(i), Some(j)) => self.m[(i, j)],
            _ => 0.0,
        }
    }

    /// `max |(I - P_U) G - I|` over `U x U`.
    pub fn inverse_residual(&self) -> f64 {
        let n = self.u.len();
        let step = 1.0 / (2 * self.u.dim()) as f64;
        let mut worst: f64 = 0.0;
        for (i, p) in self.u.iter().enumerate() {
            let nbrs: Vec<usize> = p.nn_neighbors().filter_map(|q| self.u.position(&q)).collect();
            for j in 0..n {
                let mut v = self.m[(i, j)];
                for &k in &nbrs {
                    v -= step * self.m[(k, j)];
                }
                if i == j {
                    v -= 1.0;
                }
                worst = worst.max(v.abs());
            }
        }
        worst
    }

    pub fn symmetry_residual(&self) -> f64 {
        (&self.m - self.m.transpose()).amax()
    }
}

/// Which Green function a computation uses.
#[derive(Clone, Copy, Debug)]
pub enum Kernel<'a> {
    Free(&'a GreenOracle),
    Killed(&'a KilledGreen),
}

impl Kernel<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Kernel::Free(o) => o.dim(),
            Kernel::Killed(k) => k.u.dim(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Kernel::Free(_) => "free".into(),
            Kernel::Killed(k) => describe_set(&k.u),
        }
    }

    /// `K` must lie inside the domain.
    pub fn check_inside(&self, k: &PointSet) -> Result<()> {
        if k.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: k.dim() });
        }
        if let Kernel::Killed(g) = self {
            if !k.is_subset(&g.u) {
                return Err(Error::InvalidInput("K is not contained in U".into()));
            }
        }
        Ok(())
    }

    /// Matrix `g(a_i, b_j)`.
    pub fn gram(&self, a: &[Point], b: &[Point]) -> Result<DMatrix<f64>> {
        match self {
            Kernel::Killed(g) => Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| g.get(&a[i], &b[j]))),
            Kernel::Free(o) => {
                let table = displacement_table(o, a.iter().chain(b))?;
                Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| table.between(&a[i], &b[j])))
            }
        }
    }

    pub fn g(&self, x: &Point, y: &Point) -> Result<f64> {
        match self {
            Kernel::Killed(g) => Ok(g.get(x, y)),
            Kernel::Free(o) => o.between(x, y),
        }
    }
}

/// Green table covering all displacements between the given points.
pub fn displacement_table<'a>(o: &GreenOracle, pts: impl Iterator<Item = &'a Point>) -> Result<GreenTable> {
    let d = o.dim();
    let mut lo = [i64::MAX; MAX_DIM];
    let mut hi = [i64::MIN; MAX_DIM];
    for p in pts {
        for i in 0..d {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    if lo[0] > hi[0] {
        return o.table(&vec![0; d]);
    }
    let max_abs: Vec<usize> = (0..d).map(|i| (hi[i] - lo[i]) as usize).collect();
    o.table(&max_abs)
}

/// Short textual descriptor of a set.
pub fn describe_set(s: &PointSet) -> String {
    match s.bbox() {
        Some(b) if b.volume() == s.len() => format!("box{}..{}", b.lo, b.hi),
        Some(b) => format!("set(n={}, bbox {}..{})", s.len(), b.lo, b.hi),
        None => "empty".into(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquilibriumMeasure {
    /// Sorted support points (inside the inner boundary of `K`).
    pub support: Vec<Point>,
    pub weights: Vec<f64>,
    pub k_size: usize,
    pub domain: String,
    pub capacity: f64,
    /// `max_{x in K} |sum_y g(x,y) e(y) - 1|` (or the solver residual for the
    /// iterative paths).
    pub max_residual: f64,
    pub min_raw_weight: f64,
}

impl EquilibriumMeasure {
    fn from_raw(support: Vec<Point>, raw: Vec<f64>, k_size: usize, domain: String) -> Result<EquilibriumMeasure> {
        let min_raw_weight = raw.iter().copied().fold(f64::INFINITY, f64::min);
        if min_raw_weight < -NEGATIVE_TOL {
            return Err(Error::Invariant(format!("equilibrium weight {min_raw_weight:e} < -{NEGATIVE_TOL:e} (ill-conditioned solve)")));
        }
        let weights: Vec<f64> = raw.iter().map(|&w| if w.abs() < CLIP_TOL || w < 0.0 { 0.0 } else { w }).collect();
        let capacity = weights.iter().sum();
        Ok(EquilibriumMeasure { support, weights, k_size, domain, capacity, max_residual: f64::NAN, min_raw_weight })
    }

    pub fn weight(&self, p: &Point) -> f64 {
        self.support.binary_search(p).map(|i| self.weights[i]).unwrap_or(0.0)
    }

    /// Normalised measure `e / cap`.
    pub fn normalized(&self) -> Vec<(Point, f64)> {
        self.support.iter().zip(&self.weights).map(|(p, w)| (*p, w / self.capacity)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dense,
    Toeplitz,
    Sparse,
    Variational,
    MonteCarlo,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Dense => "dense",
            Method::Toeplitz => "toeplitz",
            Method::Sparse => "sparse",
            Method::Variational => "variational",
            Method::MonteCarlo => "mc",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CapacityReport {
    pub set: String,
    pub domain: String,
    pub value: f64,
    pub method: Method,
    pub err: f64,
    /// Set size parameters when the set is a line or tube.
    pub n: Option<i64>,
    pub l: Option<i64>,
}

/// Dense equilibrium measure of `K` for the given kernel.
pub fn equilibrium_measure(k: &PointSet, kern: Kernel) -> Result<EquilibriumMeasure> {
    equilibrium_measure_with_limit(k, kern, DEFAULT_DENSE_LIMIT)
}

pub fn equilibrium_measure_with_limit(k: &PointSet, kern: Kernel, limit: usize) -> Result<EquilibriumMeasure> {
    if k.is_empty() {
        return Err(Error::EmptySet("K"));
    }
    kern.check_inside(k)?;
    let bd = inner_boundary(k);
    let bd = if bd.is_empty() { k.clone() } else { bd };
    if bd.len() > limit {
        return Err(Error::TooLarge { what: "|inner boundary of K| for a dense equilibrium solve", size: bd.len(), limit });
    }
    let pts = bd.points();
    let g = kern.gram(pts, pts)?;
    let raw = spd_solve(g, &vec![1.0; pts.len()])?;
    let mut eq = EquilibriumMeasure::from_raw(pts.to_vec(), raw.clone(), k.len(), kern.describe())?;
    // Residual on all of K (boundary rows with the unclipped solution, then
    // the interior rows).
    let all = kern.gram(k.points(), pts)?;
    let pot = &all * nalgebra::DVector::from_column_slice(&eq.weights);
    eq.max_residual = pot.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    if eq.max_residual > RESIDUAL_TOL {
        return Err(Error::Invariant(format!("equilibrium residual {:e} exceeds {RESIDUAL_TOL:e}", eq.max_residual)));
    }
    Ok(eq)
}

/// Capacity via the dense equilibrium measure; with `cross_validate` the
/// variational value `1/E(e/cap)` is compared and its gap folded into `err`.
pub fn capacity(k: &PointSet, kern: Kernel, cross_validate: bool) -> Result<CapacityReport> {
    let eq = equilibrium_measure(k, kern)?;
    let mut err = eq.max_residual * eq.capacity;
    if cross_validate {
        let e = variational_energy(&eq.normalized(), kern)?;
        err = err.max((1.0 / e - eq.capacity).abs());
    }
    Ok(CapacityReport { set: describe_set(k), domain: kern.describe(), value: eq.capacity, method: Method::Dense, err, n: None, l: None })
}

/// `E_U(nu) = sum nu(x) g_U(x,y) nu(y)` for a probability measure `nu`.
pub fn variational_energy(nu: &[(Point, f64)], kern: Kernel) -> Result<f64> {
    if nu.is_empty() {
        return Err(Error::EmptySet("nu"));
    }
    let total: f64 = nu.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-10 || nu.iter().any(|(_, w)| *w < 0.0) {
        return Err(Error::InvalidInput(format!("nu must be a probability measure (total mass {total})")));
    }
    let pts: Vec<Point> = nu.iter().map(|(p, _)| *p).collect();
    kern.check_inside(&PointSet::from_points(kern.dim(), pts.iter().copied())?)?;
    let g = kern.gram(&pts, &pts)?;
    let w = nalgebra::DVector::from_iterator(nu.len(), nu.iter().map(|(_, w)| *w));
    Ok(w.dot(&(&g * &w)))
}

/// Sandwich bounds `|K| / max_x sum_y g(x,y)` and `|K| / min_x sum_y g(x,y)`.
pub fn capacity_bounds(k: &PointSet, kern: Kernel) -> Result<(f64, f64)> {
    let g = kern.gram(k.points(), k.points())?;
    let sums: Vec<f64> = g.row_iter().map(|r| r.sum()).collect();
    let mx = sums.iter().copied().fold(f64::MIN, f64::max);
    let mn = sums.iter().copied().fold(f64::MAX, f64::min);
    Ok((k.len() as f64 / mx, k.len() as f64 / mn))
}

/// Hitting distribution `H[x][y] = P_x[H_K < T_U, X_{H_K} = y]` for
/// `x in U`, `y in K` (rows ordered as `U`, columns as `K`), by a dense solve
/// of the Dirichlet problem on `U \ K`.
pub fn hitting_matrix(k: &PointSet, u: &PointSet) -> Result<DMatrix<f64>> {
    if !k.is_subset(u) {
        return Err(Error::InvalidInput("K is not contained in U".into()));
    }
    let free = u.difference(k);
    if free.len() > DEFAULT_DENSE_LIMIT {
        return Err(Error::TooLarge { what: "|U \\ K| for a dense hitting solve", size: free.len(), limit: DEFAULT_DENSE_LIMIT });
    }
    let step = 1.0 / (2 * u.dim()) as f64;
    let nf = free.len();
    let mut a = DMatrix::<f64>::identity(nf, nf);
    let mut rhs = DMatrix::<f64>::zeros(nf, k.len());
    for (i, p) in free.iter().enumerate() {
        for q in p.nn_neighbors() {
            if let Some(j) = free.position(&q) {
                a[(i, j)] -= step;
            } else if let Some(j) = k.position(&q) {
                rhs[(i, j)] += step;
            }
        }
    }
    let sol = if nf > 0 {
        a.cholesky().ok_or_else(|| Error::Solver("I - P on U \\ K not positive definite".into()))?.solve(&rhs)
    } else {
        rhs
    };
    let mut h = DMatrix::<f64>::zeros(u.len(), k.len());
    for (r, p) in u.iter().enumerate() {
        if let Some(j) = k.position(p) {
            h[(r, j)] = 1.0;
        } else {
            let i = free.position(p).expect("U \\ K");
            h.row_mut(r).copy_from(&sol.row(i));
        }
    }
    Ok(h)
}

/// `P_x[H_K < T_U]` for every `x in U` (ordered as `U`).
pub fn hitting_probability(k: &PointSet, u: &PointSet) -> Result<Vec<f64>> {
    let h = hitting_matrix(k, u)?;
    Ok(h.row_iter().map(|r| r.sum()).collect())
}

/// Free equilibrium measure by conjugate gradients with an FFT matvec over
/// the bounding box of `K`.
pub fn equilibrium_free_iterative(k: &PointSet, oracle: &GreenOracle) -> Result<EquilibriumMeasure> {
    if k.is_empty() {
        return Err(Error::EmptySet("K"));
    }
    let d = oracle.dim();
    if k.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: k.dim() });
    }
    let bb = k.bbox().expect("non-empty");
    let ext = bb.extents();
    let table = oracle.table(&ext.iter().map(|e| e - 1).collect::<Vec<_>>())?;
    let op = ConvOperator::new(&ext, |a| {
        let p = Point::new(&a.iter().map(|&v| v as i64).collect::<Vec<_>>());
        table.get(&p)
    });
    let bd = inner_boundary(k);
    let bd = if bd.is_empty() { k.clone() } else { bd };
    let idx: Vec<usize> = bd.iter().map(|p| bb.index(p)).collect();
    let vol = bb.volume();
    let mut full = vec![0.0; vol];
    let mut out = vec![0.0; vol];
    let apply = |x: &[f64], y: &mut [f64], full: &mut Vec<f64>, out: &mut Vec<f64>| {
        full.fill(0.0);
        for (v, &i) in x.iter().zip(&idx) {
            full[i] = *v;
        }
        op.apply(full, out);
        for (v, &i) in y.iter_mut().zip(&idx) {
            *v = out[i];
        }
    };
    let n = idx.len();
    let b = vec![1.0; n];
    let mut x = vec![1.0 / table.get(&Point::zero(d)); n];
    let stats = conjugate_gradient(|v, o| apply(v, o, &mut full, &mut out), &b, &mut x, CG_TOL, 20 * n + 200)?;
    let mut eq = EquilibriumMeasure::from_raw(bd.points().to_vec(), x, k.len(), "free".into())?;
    // Verify on all of K.
    full.fill(0.0);
    for (v, &i) in eq.weights.iter().zip(&idx) {
        full[i] = *v;
    }
    op.apply(&full, &mut out);
    eq.max_residual = k.iter().map(|p| (out[bb.index(p)] - 1.0).abs()).fold(0.0, f64::max);
    let _ = stats;
    if eq.max_residual > RESIDUAL_TOL {
        return Err(Error::NoConvergence { iterations: stats.iterations, residual: eq.max_residual });
    }
    Ok(eq)
}

/// Free capacity, dense for small boundaries and iterative otherwise.
pub fn capacity_free(k: &PointSet, oracle: &GreenOracle) -> Result<CapacityReport> {
    let bd = inner_boundary(k).len().max(1);
    let (eq, method) = if bd < LINE_DENSE_BELOW {
        (equilibrium_measure(k, Kernel::Free(oracle))?, Method::Dense)
    } else {
        (equilibrium_free_iterative(k, oracle)?, Method::Toeplitz)
    };
    Ok(CapacityReport {
        set: describe_set(k),
        domain: "free".into(),
        value: eq.capacity,
        method,
        err: eq.max_residual * eq.capacity,
        n: None,
        l: None,
    })
}

/// `cap(T_N)` for the segment `{0..N} e_1`.
pub fn line_capacity_fast(n: i64, d: usize, oracle: &GreenOracle) -> Result<CapacityReport> {
    if n < 1 {
        return Err(Error::InvalidInput(format!("line length N={n} must be >= 1")));
    }
    if oracle.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: oracle.dim() });
    }
    let t = segment(d, n);
    let mut r = capacity_free(&t, oracle)?;
    r.set = "line".into();
    r.n = Some(n);
    r.l = Some(0);
    Ok(r)
}

/// `floor(k N^delta)` with a guard against `1024^0.2 = 3.9999...`.
pub fn tube_width(n: i64, delta: f64, k: f64) -> i64 {
    (k * (n as f64).powf(delta) + 1e-9).floor() as i64
}

/// `cap(T_N(L))` with `L = floor(k N^delta)`.
pub fn tube_capacity(n: i64, delta: f64, k: f64, oracle: &GreenOracle) -> Result<CapacityReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("delta={delta} must lie in (0,1)")));
    }
    let l = tube_width(n, delta, k);
    tube_capacity_width(n, l, oracle)
}

pub fn tube_capacity_width(n: i64, l: i64, oracle: &GreenOracle) -> Result<CapacityReport> {
    let spec = TubeSpec::new(oracle.dim(), n, l)?;
    let set = spec.region().to_set();
    let mut r = capacity_free(&set, oracle)?;
    r.set = "tube".into();
    r.n = Some(n);
    r.l = Some(l);
    Ok(r)
}

/// `h(x) = P_x[H_K < T_U]` on the grid `bbox(U)` enlarged by one.
#[derive(Clone, Debug)]
pub struct HittingFunction {
    pub grid: Grid,
    /// 0 outside `U`, 1 on `K`.
    pub values: Vec<f64>,
    /// 0 outside `U`, 1 in `K`, 2 in `U \ K`.
    pub state: Vec<u8>,
    pub residual: f64,
}

impl HittingFunction {
    pub fn get(&self, p: &Point) -> f64 {
        self.grid.index(p).map(|i| self.values[i]).unwrap_or(0.0)
    }

    /// `max |h - P h|` over `U \ K`.
    pub fn harmonic_residual(&self) -> f64 {
        let step = 1.0 / (2 * self.grid.dim()) as f64;
        let mut worst: f64 = 0.0;
        for i in 0..self.grid.len() {
            if self.state[i] != 2 {
                continue;
            }
            let mut acc = 0.0;
            self.grid.for_each_nn(i, |j| acc += self.values[j]);
            worst = worst.max((self.values[i] - step * acc).abs());
        }
        worst
    }

    /// `e(x) = h(x) - (P h)(x)` on the inner boundary of `K`.
    pub fn equilibrium(&self, k: &PointSet, domain: String) -> Result<EquilibriumMeasure> {
        let step = 1.0 / (2 * self.grid.dim()) as f64;
        let bd = inner_boundary(k);
        let bd = if bd.is_empty() { k.clone() } else { bd };
        let raw: Vec<f64> = bd
            .iter()
            .map(|p| {
                let i = self.grid.index(p).expect("inside");
                let mut acc = 0.0;
                self.grid.for_each_nn(i, |j| acc += self.values[j]);
                1.0 - step * acc
            })
            .collect();
        let mut eq = EquilibriumMeasure::from_raw(bd.points().to_vec(), raw, k.len(), domain)?;
        eq.max_residual = self.residual;
        Ok(eq)
    }
}

/// Sparse conjugate-gradient solve of the Dirichlet problem for
/// `P[H_K < T_U]`.
pub fn hitting_function(k: &PointSet, u: &PointSet) -> Result<HittingFunction> {
    if k.is_empty() {
        return Err(Error::EmptySet("K"));
    }
    if !k.is_subset(u) {
        return Err(Error::InvalidInput("K is not contained in U".into()));
    }
    let d = u.dim();
    let grid = Grid::new(u.bbox().expect("non-empty").enlarge(1));
    let mut state = vec![0u8; grid.len()];
    for p in u.iter() {
        state[grid.index(p).expect("inside")] = 2;
    }
    for p in k.iter() {
        state[grid.index(p).expect("inside")] = 1;
    }
    let free: Vec<usize> = (0..grid.len()).filter(|&i| state[i] == 2).collect();
    let mut slot = vec![usize::MAX; grid.len()];
    for (s, &i) in free.iter().enumerate() {
        slot[i] = s;
    }
    let step = 1.0 / (2 * d) as f64;
    let rhs: Vec<f64> = free
        .iter()
        .map(|&i| {
            let mut c = 0;
            grid.for_each_nn(i, |j| c += (state[j] == 1) as usize);
            c as f64 * step
        })
        .collect();
    let mut h = vec![0.0; free.len()];
    let stats = conjugate_gradient(
        |x, y| {
            for (s, &i) in free.iter().enumerate() {
                let mut acc = 0.0;
                grid.for_each_nn(i, |j| {
                    if slot[j] != usize::MAX {
                        acc += x[slot[j]];
                    }
                });
                y[s] = x[s] - step * acc;
            }
        },
        &rhs,
        &mut h,
        CG_TOL,
        50_000,
    )?;
    let mut values = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        values[i] = match state[i] {
            1 => 1.0,
            2 => h[slot[i]],
            _ => 0.0,
        };
    }
    Ok(HittingFunction { grid, values, state, residual: stats.residual })
}

/// Equilibrium measure of `K` relative to `U` from the sparse Dirichlet
/// problem for `h = P[H_K < T_U]` on `U \ K`.
pub fn equilibrium_relative_sparse(k: &PointSet, u: &PointSet) -> Result<EquilibriumMeasure> {
    hitting_function(k, u)?.equilibrium(k, describe_set(u))
}

/// `cap_{T_N(2 floor(N^delta))}(T_N(floor(N^delta)))`.
pub fn relative_tube_capacity(d: usize, n: i64, delta: f64) -> Result<CapacityReport> {
    let l = tube_width(n, delta, 1.0);
    let inner = TubeSpec::new(d, n, l)?.region().to_set();
    let outer = TubeSpec::new(d, n, 2 * l)?.region().to_set();
    let eq = equilibrium_relative_sparse(&inner, &outer)?;
    Ok(CapacityReport {
        set: "tube".into(),
        domain: format!("tube(L={})", 2 * l),
        value: eq.capacity,
        method: Method::Sparse,
        err: eq.max_residual * eq.capacity,
        n: Some(n),
        l: Some(l),
    })
}

/// Monte Carlo estimate of `P_x[H_T = infinity]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EscapeEstimate {
    pub mean: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub n_walks: usize,
    /// Walks that hit `T` before leaving the simulation box.
    pub hits: usize,
    pub distance: i64,
    /// `C log(1 + d(x,T)) / log N` when a constant was supplied.
    pub bound: Option<f64>,
    pub bound_holds: Option<bool>,
}

/// Escape probabilities from a fixed target `T`.
///
/// Each walk runs until it hits `T` (score 0) or leaves the box
/// `bbox(T)` enlarged by `margin` at some `y`, scoring the exact value
/// `P_y[H_T = infinity] = 1 - sum_z g(y - z) e_T(z)`. The estimator is unbiased
/// with no horizon truncation.
pub struct EscapeSampler {
    t: PointSet,
    eq: EquilibriumMeasure,
    table: GreenTable,
    margin: i64,
    window: BoxSpec,
}

impl EscapeSampler {
    pub fn new(t: &PointSet, oracle: &GreenOracle, margin: i64) -> Result<EscapeSampler> {
        if margin < 1 {
            return Err(Error::InvalidInput("margin must be >= 1".into()));
        }
        let eq = if inner_boundary(t).len() < LINE_DENSE_BELOW {
            equilibrium_measure(t, Kernel::Free(oracle))?
        } else {
            equilibrium_free_iterative(t, oracle)?
        };
        let bb = t.bbox().expect("non-empty");
        let window = bb.enlarge(margin);
        let max_abs: Vec<usize> = (0..t.dim()).map(|i| bb.extent(i) - 1 + margin as usize + 1).collect();
        let table = oracle.table(&max_abs)?;
        Ok(EscapeSampler { t: t.clone(), eq, table, margin, window })
    }

    pub fn equilibrium(&self) -> &EquilibriumMeasure {
        &self.eq
    }

    /// `P_y[H_T = infinity]` for `y` just outside the window.
    pub fn exact_escape(&self, y: &Point) -> f64 {
        if self.t.contains(y) {
            return 0.0;
        }
        let hit: f64 = self.eq.support.iter().zip(&self.eq.weights).map(|(z, w)| w * self.table.between(y, z)).sum();
        (1.0 - hit).clamp(0.0, 1.0)
    }

    pub fn estimate(&self, x: &Point, n_walks: usize, seed: u64, c_gamma: Option<f64>, n_line: Option<i64>) -> Result<EscapeEstimate> {
        let distance = self.t.iter().map(|z| z.sup_dist(x)).min().unwrap_or(0);
        let bound = match (c_gamma, n_line) {
            (Some(c), Some(n)) => Some(c * (1.0 + distance as f64).ln() / (n as f64).ln()),
            _ => None,
        };
        if self.t.contains(x) {
            return Ok(EscapeEstimate {
                mean: 0.0,
                se: 0.0,
                ci: (0.0, 0.0),
                n_walks,
                hits: n_walks,
                distance: 0,
                bound,
                bound_holds: bound.map(|_| true),
            });
        }
        if !self.window.enlarge(-1).contains(x) && !self.window.contains(x) {
            return Err(Error::InvalidInput(format!("start point {x} lies outside the simulation window (margin {})", self.margin)));
        }
        let d = x.dim();
        let mut rng = rng::stream(seed, rng::purpose::WALK, 0);
        let mut cache: HashMap<Point, f64> = HashMap::new();
        let mut scores = Vec::with_capacity(n_walks);
        let mut hits = 0;
        for _ in 0..n_walks {
            let mut y = *x;
            let s = loop {
                if !self.window.contains(&y) {
                    let v = *cache.entry(y).or_insert_with(|| self.exact_escape(&y));
                    break v;
                }
                if self.t.contains(&y) {
                    hits += 1;
                    break 0.0;
                }
                let r: usize = rng.random_range(0..2 * d);
                let i = r / 2;
                let v = y[i] + if r % 2 == 0 { 1 } else { -1 };
                y.set(i, v);
            };
            scores.push(s);
        }
        let est = stats::estimate(&scores);
        let z = 1.959963984540054;
        let ci = ((est.mean - z * est.se).max(0.0), (est.mean + z * est.se).min(1.0));
        Ok(EscapeEstimate {
            mean: est.mean,
            se: est.se,
            ci,
            n_walks,
            hits,
            distance,
            bound,
            bound_holds: bound.map(|b| ci.0 <= b),
        })
    }
}

/// Convenience wrapper: escape probability from `x` to `T`.
pub fn escape_probability(x: &Point, t: &PointSet, oracle: &GreenOracle, n_walks: usize, seed: u64) -> Result<EscapeEstimate> {
    let margin = 8.max(2 * t.iter().map(|z| z.sup_dist(x)).min().unwrap_or(0) + 1);
    EscapeSampler::new(t, oracle, margin)?.estimate(x, n_walks, seed, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::BoxSpec;

    fn oracle3() -> GreenOracle {
        GreenOracle::new(3).unwrap()
    }

    #[test]
    fn killed_green_singleton_and_symmetry() {
        let u = PointSet::from_points(3, [Point::zero(3)]).unwrap();
        let g = KilledGreen::new(&u).unwrap();
        assert!((g.get(&Point::zero(3), &Point::zero(3)) - 1.0).abs() < 1e-15);
        let b2 = BoxSpec::ball(Point::zero(3), 2).to_set();
        let g = KilledGreen::new(&b2).unwrap();
        assert!(g.symmetry_residual() < 1e-10);
        assert!(g.inverse_residual() < 1e-10);
        let o = oracle3();
        for x in b2.iter() {
            for y in b2.iter() {
                assert!(g.get(x, y) <= o.between(x, y).unwrap());
            }
        }
    }

    #[test]
    fn killed_green_size_limit() {
        let u = BoxSpec::ball(Point::zero(3), 3).to_set();
        assert!(matches!(KilledGreen::with_limit(&u, 100), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn singleton_capacity_is_inverse_green() {
        let o = oracle3();
        let k = PointSet::from_points(3, [Point::zero(3)]).unwrap();
        let eq = equilibrium_measure(&k, Kernel::Free(&o)).unwrap();
        let g0 = o.value(&Point::zero(3)).unwrap();
        assert!((eq.capacity - 1.0 / g0).abs() < 1e-14);
        let e = variational_energy(&[(Point::zero(3), 1.0)], Kernel::Free(&o)).unwrap();
        assert!((e - g0).abs() < 1e-15);
    }

    #[test]
    fn ball_support_on_boundary_and_variational_equality() {
        let o = oracle3();
        let k = BoxSpec::ball(Point::zero(3), 2).to_set();
        let eq = equilibrium_measure(&k, Kernel::Free(&o)).unwrap();
        let bd = inner_boundary(&k);
        assert!(eq.support.iter().all(|p| bd.contains(p)));
        assert!(eq.weights.iter().all(|w| *w >= 0.0));
        let e = variational_energy(&eq.normalized(), Kernel::Free(&o)).unwrap();
        assert!((1.0 / e - eq.capacity).abs() < 1e-8 * eq.capacity);
        let (lo, hi) = capacity_bounds(&k, Kernel::Free(&o)).unwrap();
        assert!(lo <= eq.capacity + 1e-12 && eq.capacity <= hi + 1e-12);
    }

    #[test]
    fn dense_and_iterative_agree() {
        let o = oracle3();
        let k = BoxSpec::new(Point::new(&[0, -1, -1]), Point::new(&[12, 1, 1])).unwrap().to_set();
        let a = equilibrium_measure(&k, Kernel::Free(&o)).unwrap();
        let b = equilibrium_free_iterative(&k, &o).unwrap();
        assert!((a.capacity - b.capacity).abs() < 1e-9 * a.capacity);
        for (w1, w2) in a.weights.iter().zip(&b.weights) {
            assert!((w1 - w2).abs() < 1e-9);
        }
    }

    #[test]
    fn sparse_relative_matches_dense_killed() {
        let u = BoxSpec::ball(Point::zero(3), 3).to_set();
        let k = BoxSpec::ball(Point::zero(3), 1).to_set();
        let g = KilledGreen::new(&u).unwrap();
        let a = equilibrium_measure(&k, Kernel::Killed(&g)).unwrap();
        let b = equilibrium_relative_sparse(&k, &u).unwrap();
        assert!((a.capacity - b.capacity).abs() < 1e-9);
        let o = oracle3();
        let f = equilibrium_measure(&k, Kernel::Free(&o)).unwrap();
        assert!(a.capacity >= f.capacity);
    }

    #[test]
    fn last_exit_identity() {
        let u = BoxSpec::ball(Point::zero(3), 2).to_set();
        let k = PointSet::from_points(3, [Point::zero(3), Point::new(&[1, 0, 0]), Point::new(&[0, 1, 1])]).unwrap();
        let g = KilledGreen::new(&u).unwrap();
        let eq = equilibrium_measure(&k, Kernel::Killed(&g)).unwrap();
        let h = hitting_probability(&k, &u).unwrap();
        for (x, hx) in u.iter().zip(&h) {
            let s: f64 = eq.support.iter().zip(&eq.weights).map(|(y, w)| g.get(x, y) * w).sum();
            assert!((s - hx).abs() < 1e-10, "{x}");
        }
    }

    #[test]
    fn line_small_matches_dense_three_point() {
        let o = oracle3();
        let r = line_capacity_fast(1, 3, &o).unwrap();
        let g0 = o.value(&Point::zero(3)).unwrap();
        let g1 = o.value(&Point::axis(3, 0, 1)).unwrap();
        assert!((r.value - 2.0 / (g0 + g1)).abs() < 1e-10);
    }

    #[test]
    fn escape_inside_is_zero() {
        let o = oracle3();
        let t = segment(3, 10);
        let e = escape_probability(&Point::axis(3, 0, 4), &t, &o, 10, 1).unwrap();
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn escape_exact_far_value_consistent() {
        // P_y[H_{0} = inf] = 1 - g(y)/g(0)
        let o = oracle3();
        let t = PointSet::from_points(3, [Point::zero(3)]).unwrap();
        let s = EscapeSampler::new(&t, &o, 4).unwrap();
        let y = Point::new(&[5, 0, 0]);
        let want = 1.0 - o.value(&y).unwrap() / o.value(&Point::zero(3)).unwrap();
        assert!((s.exact_escape(&y) - want).abs() < 1e-12);
        // MC from a neighbour: 1 - g(e1)/g(0)
        let x = Point::axis(3, 0, 1);
        let est = s.estimate(&x, 20_000, 3, None, None).unwrap();
        let want = 1.0 - o.value(&x).unwrap() / o.value(&Point::zero(3)).unwrap();
        assert!(est.ci.0 - 2.0 * est.se <= want && want <= est.ci.1 + 2.0 * est.se, "{est:?} vs {want}");
    }
}

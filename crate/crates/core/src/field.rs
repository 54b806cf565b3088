//! Free-field samples on boxes.
//!
//! Dirichlet samples use the sine basis of the killed transition operator:
//! `phi = S diag(1/sqrt(1 - mu_k)) xi` with `S` the orthonormal DST-I, which
//! gives covariance `(I - P_U)^{-1} = g_U` exactly. Bulk samples are Dirichlet
//! samples on an enlarged box restricted to the window of interest.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BoxSpec, Grid, Point, RenormLattice, MAX_DIM};
use crate::linalg::{BoxDirichlet, DstNd};
use crate::rng;

/// Default cap on sample volume.
pub const MAX_VOLUME: usize = 40_000_000;
const MAGIC: &[u8; 4] = b"GFFS";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Law {
    Dirichlet,
    /// Restriction of a Dirichlet sample on `parent`, an `r`-fold enlargement.
    Bulk { r: i64, parent: BoxSpec, bias_bound: f64 },
    /// Dirichlet sample shifted by `delta * P[H_K < T_U]`.
    Tilted { delta: f64 },
}

impl Law {
    /// Whether values outside the box are identically zero.
    pub fn zero_outside(&self) -> bool {
        !matches!(self, Law::Bulk { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub bx: BoxSpec,
    /// Row-major over `bx`.
    pub values: Vec<f64>,
    pub law: Law,
    pub seed: u64,
    pub stream: u64,
    pub midpoints: Option<MidpointExtension>,
}

impl FieldSample {
    pub fn dim(&self) -> usize {
        self.bx.dim()
    }

    /// Value at `p`: zero outside the box for Dirichlet samples, `None`
    /// outside the window for bulk samples.
    pub fn get(&self, p: &Point) -> Option<f64> {
        if self.bx.contains(p) {
            Some(self.values[self.bx.index(p)])
        } else {
            match self.law {
                Law::Dirichlet | Law::Tilted { .. } => Some(0.0),
                Law::Bulk { .. } => None,
            }
        }
    }

    pub fn id(&self) -> String {
        let tag = match self.law {
            Law::Dirichlet => "dirichlet".to_string(),
            Law::Bulk { r, .. } => format!("bulk-R{r}"),
            Law::Tilted { delta } => format!("tilted-{delta}"),
        };
        format!("{tag}:{}..{}:seed{}:stream{}", self.bx.lo, self.bx.hi, self.seed, self.stream)
    }

    /// Restriction to a sub-box (same law tag).
    pub fn restrict(&self, sub: &BoxSpec) -> Result<FieldSample> {
        if !self.bx.contains_box(sub) {
            return Err(Error::InvalidInput("restriction box escapes the sample".into()));
        }
        let values = sub.iter().map(|p| self.values[self.bx.index(&p)]).collect();
        Ok(FieldSample { bx: *sub, values, law: self.law, seed: self.seed, stream: self.stream, midpoints: None })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let d = self.dim();
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(d as u32)?;
        for i in 0..d {
            w.write_i64::<LittleEndian>(self.bx.lo[i])?;
        }
        for i in 0..d {
            w.write_i64::<LittleEndian>(self.bx.hi[i])?;
        }
        match self.law {
            Law::Dirichlet => {
                w.write_u8(0)?;
                w.write_i64::<LittleEndian>(0)?;
                w.write_f64::<LittleEndian>(0.0)?;
            }
            Law::Bulk { r, bias_bound, .. } => {
                w.write_u8(1)?;
                w.write_i64::<LittleEndian>(r)?;
                w.write_f64::<LittleEndian>(bias_bound)?;
            }
            Law::Tilted { delta } => {
                w.write_u8(2)?;
                w.write_i64::<LittleEndian>(0)?;
                w.write_f64::<LittleEndian>(delta)?;
            }
        }
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u64::<LittleEndian>(self.stream)?;
        for v in &self.values {
            w.write_f64::<LittleEndian>(*v)?;
        }
        match &self.midpoints {
            None => w.write_u8(0)?,
            Some(m) => {
                w.write_u8(1)?;
                w.write_f64::<LittleEndian>(m.sigma2)?;
                w.write_u64::<LittleEndian>(m.seed)?;
                // one section per axis, keyed by base vertex (row-major)
                for axis in &m.mid {
                    for v in axis {
                        w.write_f64::<LittleEndian>(*v)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<FieldSample> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse { line: 0, msg: "not a field container".into() });
        }
        let ver = r.read_u32::<LittleEndian>()?;
        if ver != VERSION {
            return Err(Error::Parse { line: 0, msg: format!("unsupported container version {ver}") });
        }
        let d = r.read_u32::<LittleEndian>()? as usize;
        if !(1..=MAX_DIM).contains(&d) {
            return Err(Error::Parse { line: 0, msg: format!("bad dimension {d}") });
        }
        let mut lo = vec![0; d];
        let mut hi = vec![0; d];
        for v in lo.iter_mut() {
            *v = r.read_i64::<LittleEndian>()?;
        }
        for v in hi.iter_mut() {
            *v = r.read_i64::<LittleEndian>()?;
        }
        let bx = BoxSpec::new(Point::new(&lo), Point::new(&hi))?;
        let tag = r.read_u8()?;
        let rr = r.read_i64::<LittleEndian>()?;
        let bias = r.read_f64::<LittleEndian>()?;
        let law = match tag {
            0 => Law::Dirichlet,
            1 => Law::Bulk { r: rr, parent: parent_box(&bx, rr), bias_bound: bias },
            2 => Law::Tilted { delta: bias },
            t => return Err(Error::Parse { line: 0, msg: format!("unknown law tag {t}") }),
        };
        let seed = r.read_u64::<LittleEndian>()?;
        let stream = r.read_u64::<LittleEndian>()?;
        let n = bx.volume();
        let mut values = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut values)?;
        let midpoints = match r.read_u8()? {
            0 => None,
            1 => {
                let sigma2 = r.read_f64::<LittleEndian>()?;
                let mseed = r.read_u64::<LittleEndian>()?;
                let mut mid = Vec::with_capacity(d);
                for _ in 0..d {
                    let mut a = vec![0.0; n];
                    r.read_f64_into::<LittleEndian>(&mut a)?;
                    mid.push(a);
                }
                Some(MidpointExtension { bx, sigma2, seed: mseed, mid })
            }
            t => return Err(Error::Parse { line: 0, msg: format!("bad midpoint flag {t}") }),
        };
        Ok(FieldSample { bx, values, law, seed, stream, midpoints })
    }
}

/// Reusable exact sampler for `P_U` on a box.
pub struct DirichletSampler {
    bx: BoxSpec,
    dst: DstNd,
    scale: Vec<f64>,
}

impl DirichletSampler {
    pub fn new(bx: BoxSpec) -> Result<DirichletSampler> {
        if bx.volume() > MAX_VOLUME {
            return Err(Error::TooLarge { what: "sample volume", size: bx.volume(), limit: MAX_VOLUME });
        }
        let dst = DstNd::new(&bx.extents());
        let scale = dst.laplacian_eigenvalues().iter().map(|l| 1.0 / l.sqrt()).collect();
        Ok(DirichletSampler { bx, dst, scale })
    }

    pub fn box_spec(&self) -> &BoxSpec {
        &self.bx
    }

    /// Raw values for `(seed, stream)`.
    pub fn sample_values(&self, seed: u64, stream: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, rng::purpose::FIELD, stream);
        let mut v: Vec<f64> = self.scale.iter().map(|s| s * r.sample::<f64, _>(StandardNormal)).collect();
        self.dst.process(&mut v);
        v
    }

    pub fn sample(&self, seed: u64, stream: u64) -> FieldSample {
        FieldSample { bx: self.bx, values: self.sample_values(seed, stream), law: Law::Dirichlet, seed, stream, midpoints: None }
    }

    /// `g_U(x, x)` from the spectral sum.
    pub fn variance_at(&self, x: &Point) -> f64 {
        let ext = self.bx.extents();
        let d = ext.len();
        let modes: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let n = ext[i];
                let j = (x[i] - self.bx.lo[i] + 1) as f64;
                (1..=n)
                    .map(|k| {
                        let s = (std::f64::consts::PI * j * k as f64 / (n + 1) as f64).sin();
                        2.0 / (n + 1) as f64 * s * s
                    })
                    .collect()
            })
            .collect();
        let mut total = 0.0;
        let mut idx = vec![0usize; d];
        for s in &self.scale {
            let mut w = s * s;
            for i in 0..d {
                w *= modes[i][idx[i]];
            }
            total += w;
            for i in (0..d).rev() {
                idx[i] += 1;
                if idx[i] < ext[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        total
    }
}

/// Sample of `P_U` on a box.
pub fn sample_dirichlet(u: BoxSpec, seed: u64, stream: u64) -> Result<FieldSample> {
    Ok(DirichletSampler::new(u)?.sample(seed, stream))
}

/// `r`-fold enlargement of `b` about its centre.
pub fn parent_box(b: &BoxSpec, r: i64) -> BoxSpec {
    let d = b.dim();
    let mut lo = [0i64; MAX_DIM];
    let mut hi = [0i64; MAX_DIM];
    for i in 0..d {
        let c = b.lo[i] + (b.hi[i] - b.lo[i]) / 2;
        let rad = (b.hi[i] - c).max(1);
        lo[i] = c - r * rad;
        hi[i] = c + r * rad;
    }
    BoxSpec::new(Point::new(&lo[..d]), Point::new(&hi[..d])).expect("valid")
}

/// Approximate whole-space sampler: Dirichlet on the `r`-fold enlargement,
/// restricted to the window.
pub struct BulkSampler {
    window: BoxSpec,
    r: i64,
    inner: DirichletSampler,
    bias_bound: f64,
}

impl BulkSampler {
    /// `g0 = g(0)` from the free Green oracle, used for the recorded bias
    /// bound `max_x (g(0) - g_parent(x, x))` over the window corners and centre.
    pub fn new(window: BoxSpec, r: i64, g0: f64) -> Result<BulkSampler> {
        if r < 2 {
            return Err(Error::InvalidInput(format!("enlargement R={r} must be >= 2")));
        }
        let parent = parent_box(&window, r);
        let inner = DirichletSampler::new(parent)?;
        let d = window.dim();
        let mut probes = vec![window.lo, window.hi];
        let mut c = window.lo;
        for i in 0..d {
            c.set(i, window.lo[i] + (window.hi[i] - window.lo[i]) / 2);
        }
        probes.push(c);
        let bias_bound = probes.iter().map(|p| g0 - inner.variance_at(p)).fold(0.0, f64::max);
        Ok(BulkSampler { window, r, inner, bias_bound })
    }

    pub fn bias_bound(&self) -> f64 {
        self.bias_bound
    }

    pub fn parent(&self) -> BoxSpec {
        *self.inner.box_spec()
    }

    pub fn window(&self) -> BoxSpec {
        self.window
    }

    pub fn sample(&self, seed: u64, stream: u64) -> FieldSample {
        let full = self.inner.sample(seed, stream);
        let mut s = full.restrict(&self.window).expect("window inside parent");
        s.law = Law::Bulk { r: self.r, parent: self.parent(), bias_bound: self.bias_bound };
        s
    }

    /// Parent Dirichlet sample (for callers that need the field beyond the window).
    pub fn sample_parent(&self, seed: u64, stream: u64) -> FieldSample {
        self.inner.sample(seed, stream)
    }
}

pub fn sample_bulk(b: BoxSpec, r: i64, g0: f64, seed: u64, stream: u64) -> Result<FieldSample> {
    Ok(BulkSampler::new(b, r, g0)?.sample(seed, stream))
}

/// `phi = xi + psi` on `U_z`.
#[derive(Clone, Debug)]
pub struct DecompositionRecord {
    pub z: Point,
    pub u: BoxSpec,
    /// Harmonic average, row-major over `u`.
    pub xi: Vec<f64>,
    /// Local field, row-major over `u`.
    pub psi: Vec<f64>,
    pub parent: String,
}

impl DecompositionRecord {
    pub fn xi_at(&self, p: &Point) -> Option<f64> {
        self.u.contains(p).then(|| self.xi[self.u.index(p)])
    }

    pub fn psi_at(&self, p: &Point) -> f64 {
        if self.u.contains(p) {
            self.psi[self.u.index(p)]
        } else {
            0.0
        }
    }

    /// `max |xi_x - mean of neighbours|` over points with all neighbours in `U_z`.
    pub fn mean_value_residual(&self) -> f64 {
        let g = Grid::new(self.u);
        let d = self.u.dim();
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            if g.on_boundary_idx(i) {
                continue;
            }
            let mut s = 0.0;
            g.for_each_nn(i, |j| s += self.xi[j]);
            worst = worst.max((self.xi[i] - s / (2 * d) as f64).abs());
        }
        worst
    }
}

/// Harmonic decomposition of a sample in `U_z`, with boundary data read on
/// the outer boundary of `U_z`.
pub fn harmonic_decompose(f: &FieldSample, z: Point, lattice: &RenormLattice) -> Result<DecompositionRecord> {
    let u = lattice.u_box(z);
    harmonic_decompose_box(f, z, u)
}

pub fn harmonic_decompose_box(f: &FieldSample, z: Point, u: BoxSpec) -> Result<DecompositionRecord> {
    let need = u.enlarge(1);
    if !f.bx.contains_box(&need) && !f.law.zero_outside() {
        return Err(Error::InvalidInput(format!("U_z = {}..{} plus its outer boundary escapes the sample box", u.lo, u.hi)));
    }
    if f.law.zero_outside() && f.bx.intersect(&u).is_none() {
        return Err(Error::InvalidInput("U_z does not meet the sample box".into()));
    }
    let solver = BoxDirichlet::new(&u.extents());
    let g = Grid::new(u);
    let d = u.dim();
    let step = 1.0 / (2 * d) as f64;
    let mut rhs = vec![0.0; g.len()];
    for (i, r) in rhs.iter_mut().enumerate() {
        if !g.on_boundary_idx(i) {
            continue;
        }
        let p = g.point(i);
        for q in p.nn_neighbors() {
            if !u.contains(&q) {
                *r += step * f.get(&q).expect("checked above");
            }
        }
    }
    let mut xi = rhs;
    solver.solve(&mut xi);
    let phi: Vec<f64> = u.iter().map(|p| f.get(&p).expect("checked above")).collect();
    let psi = phi.iter().zip(&xi).map(|(a, b)| a - b).collect();
    Ok(DecompositionRecord { z, u, xi, psi, parent: f.id() })
}

/// Maximum of `xi` over `region ∩ U_z`; with `with_midpoints` the midpoint
/// values `(xi_x + xi_y)/2` on edges leaving the region are included.
pub fn harmonic_sup(rec: &DecompositionRecord, region: &BoxSpec, with_midpoints: bool) -> Result<f64> {
    let r = region.intersect(&rec.u).ok_or_else(|| Error::InvalidInput("region does not meet U_z".into()))?;
    if r != *region {
        return Err(Error::InvalidInput("region must lie inside U_z".into()));
    }
    let mut m = f64::NEG_INFINITY;
    for p in r.iter() {
        let v = rec.xi[rec.u.index(&p)];
        m = m.max(v);
        if with_midpoints {
            for q in p.nn_neighbors() {
                if !r.contains(&q) && rec.u.contains(&q) {
                    m = m.max(0.5 * (v + rec.xi[rec.u.index(&q)]));
                }
            }
        }
    }
    Ok(m)
}

/// Midpoint values on the edges of a box.
#[derive(Clone, Debug, PartialEq)]
pub struct MidpointExtension {
    pub bx: BoxSpec,
    pub sigma2: f64,
    pub seed: u64,
    /// `mid[i][x]`: midpoint of the edge `{x, x + e_i}` (`NaN` when
    /// `x + e_i` leaves the box), row-major in the base vertex.
    pub mid: Vec<Vec<f64>>,
}

/// `sigma_m^2 = d/2`: the value making the vertex residual i.i.d. `N(0, 1/2)`.
pub fn midpoint_variance(d: usize) -> f64 {
    d as f64 / 2.0
}

/// Draw `phi~_m = (phi_x + phi_y)/2 + eta_m`, `eta_m ~ N(0, d/2)`, on every edge
/// of the sample box.
pub fn extend_midpoints(f: &FieldSample, seed: u64) -> MidpointExtension {
    extend_midpoints_with(f, seed, midpoint_variance(f.dim()))
}

pub fn extend_midpoints_with(f: &FieldSample, seed: u64, sigma2: f64) -> MidpointExtension {
    let d = f.dim();
    let g = Grid::new(f.bx);
    let mut r = rng::stream(seed, rng::purpose::MIDPOINT, f.stream);
    let sd = sigma2.sqrt();
    let mut mid = vec![vec![f64::NAN; g.len()]; d];
    let ext = f.bx.extents();
    let mut stride = vec![1usize; d];
    for i in (0..d.saturating_sub(1)).rev() {
        stride[i] = stride[i + 1] * ext[i + 1];
    }
    let mut c = [0usize; MAX_DIM];
    for x in 0..g.len() {
        g.decode(x, &mut c);
        for i in 0..d {
            if c[i] + 1 < ext[i] {
                let y = x + stride[i];
                let eta: f64 = r.sample(StandardNormal);
                mid[i][x] = 0.5 * (f.values[x] + f.values[y]) + sd * eta;
            }
        }
    }
    MidpointExtension { bx: f.bx, sigma2, seed, mid }
}

impl MidpointExtension {
    /// `psi^_x = phi_x - (average of the 2d incident midpoints)`, for vertices
    /// with every incident edge inside the box.
    pub fn psi_hat(&self, f: &FieldSample) -> Vec<Option<f64>> {
        let d = self.bx.dim();
        let g = Grid::new(self.bx);
        let ext = self.bx.extents();
        let mut stride = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            stride[i] = stride[i + 1] * ext[i + 1];
        }
        let mut c = [0usize; MAX_DIM];
        (0..g.len())
            .map(|x| {
                g.decode(x, &mut c);
                if (0..d).any(|i| c[i] == 0 || c[i] + 1 >= ext[i]) {
                    return None;
                }
                let s: f64 = (0..d).map(|i| self.mid[i][x] + self.mid[i][x - stride[i]]).sum();
                Some(f.values[x] - s / (2 * d) as f64)
            })
            .collect()
    }
}

//! Concentric-shell coarse-graining in `d = 3` and the porous-line
//! comparison of capacities.

use serde::Serialize;

use super::capacity::{min_over_subsets, BlockEnergy};
use super::{boxes_meeting_boundary, path_id, AdmissibleCollection, CgParams, LambdaKind};
use crate::error::{Error, Result};
use crate::green::GreenOracle;
use crate::lattice::{BoxSpec, LatticePath, Point, PointSet};
use crate::potential::{capacity_free, line_capacity_fast};

/// Shell `i` (1-based) of the scheme: the box whose inner boundary is crossed
/// and the projected site `z~_i` on the first axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shell {
    pub bx: BoxSpec,
    pub projected: Point,
}

/// The shells used for `p`. Their spacing is `3KL`, a multiple of `L`, so the
/// anchors of shell points lie on nested boxes `3KL` apart.
pub fn shells(p: &CgParams) -> Result<Vec<Shell>> {
    let (d, n, step) = (p.d, p.n, 3 * p.k * p.l);
    let o = Point::zero(d);
    let (count, make): (i64, Box<dyn Fn(i64) -> (BoxSpec, i64)>) = match p.lambda {
        LambdaKind::Ball => (n / step - 1, Box::new(move |i| (BoxSpec::ball(o, step * i), step * i))),
        LambdaKind::Annulus => (n / step - 1, Box::new(move |i| (BoxSpec::ball(o, n + step * i), n + step * i))),
        LambdaKind::BoxAnnulus => (
            n / step - 1,
            Box::new(move |i| {
                let bx = BoxSpec::new(Point::splat(d, -n - step * i), Point::splat(d, 2 * n - 1 + step * i)).expect("non-empty");
                (bx, 2 * n - 1 + step * i)
            }),
        ),
        LambdaKind::Punctured { eps } => {
            let r0 = (eps * n as f64).ceil() as i64;
            ((n - r0) / step - 1, Box::new(move |i| (BoxSpec::ball(o, r0 + step * i), r0 + step * i)))
        }
    };
    if count < 1 {
        return Err(Error::Hypothesis(format!("no shells fit: N = {n}, 3KL = {step}")));
    }
    Ok((1..=count)
        .map(|i| {
            let (bx, t) = make(i);
            Shell { bx, projected: Point::axis(d, 0, t) }
        })
        .collect())
}

/// Shell coarse-graining of a crossing path.
pub fn coarse_grain_d3(path: &LatticePath, p: &CgParams) -> Result<AdmissibleCollection> {
    p.validate()?;
    if p.d != 3 {
        return Err(Error::InvalidInput(format!("shell scheme is for d = 3, got d = {}", p.d)));
    }
    let dom = p.domain();
    let cr = dom.crossing_segment(path)?;
    let pts = cr.points(path);
    let lat = p.lattice();
    let sh = shells(p)?;
    let mut points = Vec::with_capacity(sh.len());
    let mut tau = Vec::with_capacity(sh.len());
    let mut from = 0;
    for s in &sh {
        let off = pts[from..]
            .iter()
            .position(|x| s.bx.on_boundary(x))
            .ok_or_else(|| Error::Invariant(format!("crossing misses shell {}..{}", s.bx.lo, s.bx.hi)))?;
        from += off;
        points.push(lat.anchor(&pts[from]));
        tau.push(s.projected);
    }
    Ok(AdmissibleCollection {
        params: *p,
        points,
        path_id: path_id(path),
        gamma_shape: p.gamma_shape(),
        log_family_bound: entropy_bound(p)?,
        tau: Some(tau),
        leaves: None,
        scheme: "shells".into(),
    })
}

/// `log` of the number of collections the shell scheme can output: one
/// `L`-box per shell, among those meeting that shell.
pub fn entropy_bound(p: &CgParams) -> Result<f64> {
    Ok(shells(p)?.iter().map(|s| boxes_meeting_boundary(&s.bx, p.l).ln()).sum())
}

/// Capacity bookkeeping for the porous-line comparison at fixed parameters.
pub struct PorousContext<'a> {
    pub params: CgParams,
    pub blocks: BlockEnergy<'a>,
    pub line_capacity: f64,
    pub porous_capacity: f64,
    pub retained: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PorousReport {
    pub n: usize,
    pub retained: usize,
    pub line_capacity: f64,
    pub porous_capacity: f64,
    /// `cap(T~_N) / cap(T_N)`.
    pub porous_ratio: f64,
    /// Lower bound on `min cap(Sigma(C'))` over sub-collections of size
    /// `ceil((1-rho) n)`.
    pub sigma_lower: f64,
    pub sigma_ratio: f64,
    /// `sigma_ratio / (1 - rho)`.
    pub lambda_hat: f64,
    pub exhaustive: bool,
    pub subsets: u64,
    pub relaxed: bool,
}

impl<'a> PorousContext<'a> {
    pub fn new(p: &CgParams, oracle: &'a GreenOracle) -> Result<PorousContext<'a>> {
        p.validate()?;
        if p.d != 3 || oracle.dim() != 3 {
            return Err(Error::InvalidInput("porous projection is for d = 3".into()));
        }
        let blocks = BlockEnergy::new(p.l, oracle)?;
        let line_capacity = line_capacity_fast(p.n, 3, oracle)?.value;
        let sh = shells(p)?;
        let retained = ((1.0 - p.rho) * sh.len() as f64).ceil() as usize;
        let porous: Vec<Point> =
            sh.iter().take(retained).flat_map(|s| (0..p.l).map(move |t| s.projected + Point::axis(3, 0, t))).collect();
        let porous_capacity = capacity_free(&PointSet::from_points(3, porous)?, oracle)?.value;
        Ok(PorousContext { params: *p, blocks, line_capacity, porous_capacity, retained })
    }

    pub fn report(&self, c: &AdmissibleCollection) -> Result<PorousReport> {
        let n = c.n();
        let r = self.retained.min(n);
        let m = self.blocks.matrix(&c.points)?;
        let (sigma_lower, exhaustive, subsets) = min_over_subsets(&m, r);
        let sigma_ratio = sigma_lower / self.line_capacity;
        Ok(PorousReport {
            n,
            retained: r,
            line_capacity: self.line_capacity,
            porous_capacity: self.porous_capacity,
            porous_ratio: self.porous_capacity / self.line_capacity,
            sigma_lower,
            sigma_ratio,
            lambda_hat: sigma_ratio / (1.0 - self.params.rho),
            exhaustive,
            subsets,
            relaxed: self.params.relaxed,
        })
    }
}

/// One-shot version of [`PorousContext::report`].
pub fn porous_projection(c: &AdmissibleCollection, oracle: &GreenOracle) -> Result<PorousReport> {
    PorousContext::new(&c.params, oracle)?.report(c)
}

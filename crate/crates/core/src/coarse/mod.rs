//! Coarse-graining of crossing paths into well-separated box collections.
//!
//! `d3` implements the concentric-shell scheme, `d4` the dyadic shape
//! recursion, `badness` the psi/xi dichotomy and harmonic-average tails, and
//! `paths` a generator of random crossing paths used for soundness checks.

pub mod badness;
pub mod capacity;
pub mod d3;
pub mod d4;
pub mod paths;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::{BoxSpec, LatticePath, Point, Region, RenormLattice, MAX_DIM};

/// Smallest `K` of the asymptotic scheme.
pub const STRICT_MIN_K: i64 = 100;
/// Smallest `K` accepted in relaxed mode.
pub const RELAXED_MIN_K: i64 = 4;
/// Lower cardinality constant; the lower window is reported, not required.
pub const CARD_LOWER: f64 = 0.1;

/// The crossing domain `Lambda_N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaKind {
    /// `B_N`
    Ball,
    /// `B_2N \ B_N`
    Annulus,
    /// `D~_{0,N} \ C~_{0,N}`
    BoxAnnulus,
    /// `B_N \ B_{eps N}`
    Punctured { eps: f64 },
}

impl LambdaKind {
    pub fn name(&self) -> String {
        match self {
            LambdaKind::Ball => "ball".into(),
            LambdaKind::Annulus => "annulus".into(),
            LambdaKind::BoxAnnulus => "box_annulus".into(),
            LambdaKind::Punctured { eps } => format!("punctured_{eps}"),
        }
    }

    pub fn all(eps: f64) -> [LambdaKind; 4] {
        [LambdaKind::Ball, LambdaKind::Annulus, LambdaKind::BoxAnnulus, LambdaKind::Punctured { eps }]
    }
}

/// `Lambda_N = V \ U` for a crossing from `U` to the inner boundary of `V`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambda {
    pub kind: LambdaKind,
    pub d: usize,
    pub n: i64,
}

impl Lambda {
    pub fn new(kind: LambdaKind, d: usize, n: i64) -> Result<Lambda> {
        if !(2..=MAX_DIM).contains(&d) || n < 1 {
            return Err(Error::InvalidInput(format!("bad Lambda_N: d={d}, N={n}")));
        }
        if let LambdaKind::Punctured { eps } = kind {
            if !(eps > 0.0 && eps < 1.0 / 3.0) {
                return Err(Error::InvalidInput(format!("punctured ball needs eps in (0, 1/3), got {eps}")));
            }
        }
        Ok(Lambda { kind, d, n })
    }

    fn origin(&self) -> Point {
        Point::zero(self.d)
    }

    /// Outer box `V`.
    pub fn outer(&self) -> BoxSpec {
        let n = self.n;
        match self.kind {
            LambdaKind::Ball | LambdaKind::Punctured { .. } => BoxSpec::ball(self.origin(), n),
            LambdaKind::Annulus => BoxSpec::ball(self.origin(), 2 * n),
            LambdaKind::BoxAnnulus => BoxSpec::half_open(self.origin(), -2 * n, 3 * n),
        }
    }

    /// Inner set `U` the crossing starts from.
    pub fn inner(&self) -> BoxSpec {
        let n = self.n;
        match self.kind {
            LambdaKind::Ball => BoxSpec::ball(self.origin(), 0),
            LambdaKind::Annulus => BoxSpec::ball(self.origin(), n),
            LambdaKind::BoxAnnulus => BoxSpec::half_open(self.origin(), -n, 2 * n),
            LambdaKind::Punctured { eps } => BoxSpec::ball(self.origin(), self.eps_radius(eps)),
        }
    }

    fn eps_radius(&self, eps: f64) -> i64 {
        (eps * self.n as f64).ceil() as i64
    }

    /// `Lambda_N` as a set; for the ball it is all of `B_N`.
    pub fn contains_point(&self, p: &Point) -> bool {
        match self.kind {
            LambdaKind::Ball => self.outer().contains(p),
            _ => self.outer().contains(p) && !self.inner().contains(p),
        }
    }

    /// `bx ⊂ Lambda_N`.
    pub fn contains_box(&self, bx: &BoxSpec) -> bool {
        match self.kind {
            LambdaKind::Ball => self.outer().contains_box(bx),
            _ => self.outer().contains_box(bx) && self.inner().intersect(bx).is_none(),
        }
    }

    /// Oriented crossing segment `(a, b)`: `path[a]` is the last visit of `U`
    /// before `path[b]`, the first point on the inner boundary of `V` after
    /// some visit of `U`. Tries the reversed path when needed.
    pub fn crossing_segment(&self, path: &LatticePath) -> Result<Crossing> {
        if path.dim() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: path.dim() });
        }
        let (u, v) = (self.inner(), self.outer());
        let find = |pts: &[Point]| -> Option<(usize, usize)> {
            let first_u = pts.iter().position(|p| u.contains(p))?;
            let b = first_u + pts[first_u..].iter().position(|p| v.on_inner_boundary(p))?;
            let a = (first_u..=b).rev().find(|&i| u.contains(&pts[i]))?;
            Some((a, b))
        };
        if let Some((a, b)) = find(&path.points) {
            return Ok(Crossing { reversed: false, a, b });
        }
        let rev: Vec<Point> = path.points.iter().rev().copied().collect();
        if let Some((a, b)) = find(&rev) {
            return Ok(Crossing { reversed: true, a, b });
        }
        Err(Error::Hypothesis(format!("path does not cross {}", self.kind.name())))
    }
}

/// Indices of a crossing in the (possibly reversed) path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crossing {
    pub reversed: bool,
    pub a: usize,
    pub b: usize,
}

impl Crossing {
    /// The crossing points, oriented from `U` to `dV`.
    pub fn points(&self, path: &LatticePath) -> Vec<Point> {
        if self.reversed {
            let rev: Vec<Point> = path.points.iter().rev().copied().collect();
            rev[self.a..=self.b].to_vec()
        } else {
            path.points[self.a..=self.b].to_vec()
        }
    }
}

/// Parameters of a coarse-graining.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgParams {
    pub d: usize,
    pub k: i64,
    pub l: i64,
    pub n: i64,
    pub lambda: LambdaKind,
    pub rho: f64,
    /// `K` below the asymptotic threshold; always reported.
    pub relaxed: bool,
}

impl CgParams {
    pub fn new(d: usize, k: i64, l: i64, n: i64, lambda: LambdaKind, rho: f64, relaxed: bool) -> Result<CgParams> {
        let p = CgParams { d, k, l, n, lambda, rho, relaxed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let min_k = if self.relaxed { RELAXED_MIN_K } else { STRICT_MIN_K };
        if self.k < min_k {
            errs.push(format!("K = {} below {min_k}{}", self.k, if self.relaxed { "" } else { " (use relaxed mode)" }));
        }
        if self.l < 1 {
            errs.push(format!("L = {} must be >= 1", self.l));
        }
        if self.n < 10 * self.k * self.l {
            errs.push(format!("N = {} below 10KL = {}", self.n, 10 * self.k * self.l));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            errs.push(format!("rho = {} outside (0,1)", self.rho));
        }
        if !(3..=MAX_DIM).contains(&self.d) {
            errs.push(format!("d = {} outside 3..={MAX_DIM}", self.d));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(errs.join("; ")))
        }
    }

    pub fn lattice(&self) -> RenormLattice {
        RenormLattice { d: self.d, l: self.l, k: self.k }
    }

    pub fn domain(&self) -> Lambda {
        Lambda { kind: self.lambda, d: self.d, n: self.n }
    }

    /// `u(KL)`: `x` for `d = 3`, `x (log x)^2` above.
    pub fn u_kl(&self) -> f64 {
        let x = (self.k * self.l) as f64;
        if self.d == 3 {
            x
        } else {
            x * x.ln().powi(2)
        }
    }

    /// Shape of `Gamma(N/L)` without its constant.
    pub fn gamma_shape(&self) -> f64 {
        let r = self.n as f64 / self.l as f64;
        if self.d == 3 {
            r * r.max(2.0).ln() / self.k as f64
        } else {
            r
        }
    }

    pub fn label(&self) -> String {
        format!(
            "d{}-K{}-L{}-N{}-{}{}",
            self.d,
            self.k,
            self.l,
            self.n,
            self.lambda.name(),
            if self.relaxed { "-relaxed" } else { "" }
        )
    }
}

/// Leaf of the d>=4 recursion that produced a collection point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafRecord {
    pub level: usize,
    pub anchor: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleCollection {
    pub params: CgParams,
    /// Sites in `L Z^d`, in construction order.
    pub points: Vec<Point>,
    pub path_id: String,
    /// `Gamma(N/L)` shape and the natural-log bound on the family size
    /// implied by the construction.
    pub gamma_shape: f64,
    pub log_family_bound: f64,
    /// Projection `tau` onto the first axis (shell scheme only).
    pub tau: Option<Vec<Point>>,
    pub leaves: Option<Vec<LeafRecord>>,
    pub scheme: String,
}

impl AdmissibleCollection {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    /// Fitted `Gamma` constant: `log_family_bound / gamma_shape`.
    pub fn gamma_constant(&self) -> f64 {
        self.log_family_bound / self.gamma_shape
    }

    pub fn key(&self) -> String {
        let s: Vec<String> = self.points.iter().map(|p| p.to_string()).collect();
        s.join(";")
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.params).expect("serialisable"));
        h.update(self.key().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "params": self.params,
            "points": self.points,
            "n": self.n(),
            "path_id": self.path_id,
            "scheme": self.scheme,
            "gamma_shape": self.gamma_shape,
            "log_family_bound": self.log_family_bound,
            "tau": self.tau,
            "leaves": self.leaves,
            "digest": self.digest(),
        })
    }
}

/// Outcome of the admissibility checks for one collection.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verification {
    pub min_separation: Option<i64>,
    pub separation_ok: bool,
    pub inclusion_ok: bool,
    /// `n / (N / u(KL))`.
    pub cardinality_ratio: f64,
    pub cardinality_upper_ok: bool,
    /// Lower window with `CARD_LOWER`; reported, not required.
    pub cardinality_lower_ok: bool,
    pub crossing_ok: bool,
    pub lattice_ok: bool,
    pub tau_lipschitz_ok: Option<bool>,
}

impl Verification {
    pub fn passes(&self) -> bool {
        self.separation_ok
            && self.inclusion_ok
            && self.cardinality_upper_ok
            && self.crossing_ok
            && self.lattice_ok
            && self.tau_lipschitz_ok.unwrap_or(true)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !self.separation_ok {
            v.push("separation");
        }
        if !self.inclusion_ok {
            v.push("inclusion");
        }
        if !self.cardinality_upper_ok {
            v.push("cardinality");
        }
        if !self.crossing_ok {
            v.push("crossing");
        }
        if !self.lattice_ok {
            v.push("lattice");
        }
        if self.tau_lipschitz_ok == Some(false) {
            v.push("tau");
        }
        v
    }
}

/// Re-verify a collection against its source path.
pub fn verify_collection(c: &AdmissibleCollection, path: &LatticePath) -> Verification {
    let p = &c.params;
    let lat = p.lattice();
    let dom = p.domain();
    let sep = lat.min_separation();
    let mut min_sep: Option<i64> = None;
    for i in 0..c.points.len() {
        for j in i + 1..c.points.len() {
            let s = c.points[i].sup_dist(&c.points[j]);
            min_sep = Some(min_sep.map_or(s, |m| m.min(s)));
        }
    }
    let inclusion_ok = c.points.iter().all(|z| dom.contains_box(&lat.d_tilde(*z)));
    let crossing_ok = c.points.iter().all(|z| crosses_box_pair(path, &lat.c_box(*z), &lat.d_tilde(*z)));
    let lattice_ok = c.points.iter().all(|z| lat.is_site(z));
    let bound = p.n as f64 / p.u_kl();
    let n = c.n() as f64;
    let tau_lipschitz_ok = c.tau.as_ref().map(|t| tau_is_lipschitz(&c.points, t));
    Verification {
        min_separation: min_sep,
        separation_ok: min_sep.is_none_or(|m| m >= sep),
        inclusion_ok,
        cardinality_ratio: n / bound,
        cardinality_upper_ok: c.n() >= 1 && n <= bound,
        cardinality_lower_ok: n >= CARD_LOWER * bound,
        crossing_ok,
        lattice_ok,
        tau_lipschitz_ok,
    }
}

/// `|tau(z) - tau(z')| <= |z - z'|` in the Euclidean norm.
pub fn tau_is_lipschitz(points: &[Point], tau: &[Point]) -> bool {
    if points.len() != tau.len() {
        return false;
    }
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let a = (tau[i] - tau[j]).l2_norm();
            let b = (points[i] - points[j]).l2_norm();
            if a > b + 1e-9 {
                return false;
            }
        }
    }
    true
}

/// The path crosses `outer \ inner`: it visits `inner` and the inner
/// boundary of `outer`.
pub fn crosses_box_pair(path: &LatticePath, inner: &BoxSpec, outer: &BoxSpec) -> bool {
    path.crosses(inner, outer)
}

/// Induced crossing of `outer \ inner` starting at or after index `from`:
/// first visit `a0 >= from` of `inner`, first visit `b > a0` of the inner
/// boundary of `outer`, and `a` the last visit of `inner` in `[a0, b]`.
/// Points strictly between `a` and `b` avoid `inner`, so the segment lies in
/// `outer` minus the interior of `inner`.
pub fn induced_crossing(pts: &[Point], from: usize, inner: &BoxSpec, outer: &BoxSpec) -> Option<(usize, usize)> {
    let a0 = from + pts[from..].iter().position(|p| inner.contains(p))?;
    let b = a0 + pts[a0..].iter().position(|p| outer.on_inner_boundary(p))?;
    let a = (a0..=b).rev().find(|&i| inner.contains(&pts[i]))?;
    Some((a, b))
}

/// Stable identifier of a path.
pub fn path_id(path: &LatticePath) -> String {
    let mut h = Sha256::new();
    for p in &path.points {
        for c in p.coords() {
            h.update(c.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}

/// `d_inf` between two boxes.
pub fn box_distance(a: &BoxSpec, b: &BoxSpec) -> i64 {
    let mut m = 0;
    for i in 0..a.dim() {
        let gap = (b.lo[i] - a.hi[i]).max(a.lo[i] - b.hi[i]).max(0);
        m = m.max(gap);
    }
    m
}

/// Number of sites `z in L Z^d` whose `C_z` meets the inner boundary of `bx`.
pub fn boxes_meeting_boundary(bx: &BoxSpec, l: i64) -> f64 {
    let d = bx.dim();
    let mut meet = 1.0f64;
    let mut inside = 1.0f64;
    for i in 0..d {
        let (lo, hi) = (bx.lo[i], bx.hi[i]);
        meet *= (hi.div_euclid(l) - lo.div_euclid(l) + 1) as f64;
        // C_z within the interior lo+1..=hi-1: lo+1 <= z, z+l-1 <= hi-1
        let zlo = (lo + 1 + l - 1).div_euclid(l);
        let zhi = (hi - l).div_euclid(l);
        inside *= (zhi - zlo + 1).max(0) as f64;
    }
    meet - inside
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Adjacency;

    #[test]
    fn params_validation_is_itemised() {
        let e = CgParams::new(3, 4, 1, 20, LambdaKind::Ball, 0.25, false).unwrap_err().to_string();
        assert!(e.contains("K = 4") && e.contains("10KL"), "{e}");
        assert!(CgParams::new(3, 4, 1, 40, LambdaKind::Ball, 0.25, true).is_ok());
    }

    #[test]
    fn crossing_segment_orients_paths() {
        let dom = Lambda::new(LambdaKind::Ball, 3, 5).unwrap();
        let pts: Vec<Point> = (0..=5).rev().map(|k| Point::axis(3, 1, k)).collect();
        let path = LatticePath::new(pts, Adjacency::Nearest).unwrap();
        let c = dom.crossing_segment(&path).unwrap();
        assert!(c.reversed);
        let seg = c.points(&path);
        assert_eq!(seg[0], Point::zero(3));
        assert_eq!(seg.last().unwrap().sup_norm(), 5);
    }

    #[test]
    fn boundary_box_count() {
        // 12^3 shell box with L=4: 3^3 - 1 interior-free... every box meets the boundary
        let bx = BoxSpec::half_open(Point::zero(3), 0, 12);
        assert_eq!(boxes_meeting_boundary(&bx, 4), 26.0);
        let bx = BoxSpec::ball(Point::zero(3), 6);
        let brute = {
            let lat = RenormLattice::new(3, 4, 1).unwrap();
            let mut s = std::collections::HashSet::new();
            for p in bx.iter().filter(|p| bx.on_inner_boundary(p)) {
                s.insert(lat.anchor(&p));
            }
            s.len() as f64
        };
        assert_eq!(boxes_meeting_boundary(&bx, 4), brute);
    }
}

//! Dyadic coarse-graining of shapes, used for `d >= 4`.
//!
//! Scales `L_0 = 1`, `L_{m+1} = ceil(2 (1 + eps_m) L_m)` with
//! `eps_m = (m+1)^-2`. A shape at level `m` anchored at `z` is a *-connected
//! subset of `C~_{z,m} \ C^-_{z,m}` meeting both boundaries. Shapes are kept
//! lazily: the chain of box constraints inherited from the ancestors plus the
//! slice of the crossing that the shape must contain. The shape itself is the
//! *-component of the constraint region containing the slice, and can be
//! materialised when the region is small.

use std::collections::VecDeque;

use serde::Serialize;

use super::capacity::{min_scaled_over_subsets, subset_bound, BlockEnergy};
use super::paths::{random_box_crossing, PathStyle};
use super::{box_distance, boxes_meeting_boundary, induced_crossing, path_id, AdmissibleCollection, CgParams, LambdaKind, LeafRecord};
use crate::error::{Error, Result};
use crate::green::GreenOracle;
use crate::lattice::{BoxSpec, Grid, LatticePath, Point, PointSet, RenormLattice};
use crate::rng;

/// Largest `n0 - k0` the full scheme accepts.
pub const MAX_LEVEL_SPAN: usize = 6;
/// Largest region volume a shape is materialised in.
pub const MATERIALIZE_LIMIT: usize = 4_000_000;

pub fn eps(m: usize) -> f64 {
    1.0 / ((m + 1) * (m + 1)) as f64
}

/// `L_m`, in exact integer arithmetic.
pub fn scale(m: usize) -> i64 {
    let mut l: i64 = 1;
    for j in 0..m {
        let den = ((j + 1) * (j + 1)) as i64;
        let num = 2 * l * (den + 1);
        l = (num + den - 1) / den;
    }
    l
}

/// `C_{z,m} = z + [0, L_m)^d`.
pub fn c_box(z: Point, m: usize) -> BoxSpec {
    BoxSpec::half_open(z, 0, scale(m))
}

/// `C~_{z,m} = z + [-L_m, 2L_m)^d`.
pub fn c_tilde(z: Point, m: usize) -> BoxSpec {
    let l = scale(m);
    BoxSpec::half_open(z, -l, 2 * l)
}

/// `C^_{z,m} = z + [-L_m + L_{m-1}, 2L_m - L_{m-1})^d`, `m >= 1`.
pub fn c_hat(z: Point, m: usize) -> BoxSpec {
    let (l, lp) = (scale(m), scale(m - 1));
    BoxSpec::half_open(z, -l + lp, 2 * l - lp)
}

fn interior(b: &BoxSpec) -> Option<BoxSpec> {
    let d = b.dim();
    BoxSpec::new(b.lo + Point::splat(d, 1), b.hi - Point::splat(d, 1)).ok()
}

/// Offsets of sub-boxes of side `l` covering `[0, side)`: multiples of `l`
/// and a last one flush with the far end.
pub fn cover_positions(side: i64, l: i64) -> Vec<i64> {
    let mut v: Vec<i64> = (0..).map(|j| j * l).take_while(|&p| p <= side - l).collect();
    if *v.last().expect("side >= l") != side - l {
        v.push(side - l);
    }
    v
}

/// Number of covering sub-boxes that touch the boundary.
pub fn boundary_cover_count(side: i64, l: i64, d: usize) -> f64 {
    let p = cover_positions(side, l).len() as i32;
    (p as f64).powi(d as i32) - ((p - 2).max(0) as f64).powi(d as i32)
}

/// The covering sub-box (by its corner) containing `p`.
fn cover_box_of(p: &Point, lo: &Point, pos: &[i64]) -> Point {
    let d = p.dim();
    let mut z = *lo;
    for i in 0..d {
        let off = p[i] - lo[i];
        let k = pos.iter().rposition(|&q| q <= off).expect("p inside the covered box");
        z.set(i, lo[i] + pos[k]);
    }
    z
}

/// `|T1|` and `|T2|` at a parent of level `m`.
pub fn branch_counts(m: usize, d: usize) -> (f64, f64) {
    let (l, lp) = (scale(m), scale(m - 1));
    (boundary_cover_count(l, lp, d), boundary_cover_count(3 * l - 2 * lp, lp, d))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Constraint {
    /// `C~_{z,m} \ C^-_{z,m}`.
    Annulus { anchor: Point, level: usize },
    /// Complement of the interior of `hat`.
    OutsideInterior { hat: BoxSpec },
}

impl Constraint {
    pub fn admits(&self, p: &Point) -> bool {
        match self {
            Constraint::Annulus { anchor, level } => {
                c_tilde(*anchor, *level).contains(p) && !interior(&c_box(*anchor, *level)).is_some_and(|b| b.contains(p))
            }
            Constraint::OutsideInterior { hat } => !interior(hat).is_some_and(|b| b.contains(p)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Branch {
    Root,
    /// Cover box of the start of the crossing.
    First,
    /// Box of the last exit from `C^`.
    Second,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShapeNode {
    pub level: usize,
    pub anchor: Point,
    pub branch: Branch,
    /// Inclusive index range of the induced crossing in the oriented path.
    pub slice: (usize, usize),
    pub chain: Vec<Constraint>,
    pub children: Vec<ShapeNode>,
}

impl ShapeNode {
    pub fn contains(&self, p: &Point) -> bool {
        self.chain.iter().all(|c| c.admits(p))
    }

    pub fn leaves(&self) -> Vec<&ShapeNode> {
        if self.children.is_empty() {
            return vec![self];
        }
        self.children.iter().flat_map(|c| c.leaves()).collect()
    }

    pub fn nodes(&self) -> Vec<&ShapeNode> {
        let mut v = vec![self];
        for c in &self.children {
            v.extend(c.nodes());
        }
        v
    }

    /// The slice crosses `C~_{z,m} \ C_{z,m}`: it starts in `C` and ends on
    /// the inner boundary of `C~`.
    pub fn slice_crosses(&self, pts: &[Point]) -> bool {
        let (a, b) = self.slice;
        c_box(self.anchor, self.level).contains(&pts[a]) && c_tilde(self.anchor, self.level).on_boundary(&pts[b])
    }

    /// Explicit point set of the shape.
    pub fn materialize(&self, pts: &[Point]) -> Result<PointSet> {
        let region = c_tilde(self.anchor, self.level);
        if region.volume() > MATERIALIZE_LIMIT {
            return Err(Error::TooLarge { what: "shape region volume", size: region.volume(), limit: MATERIALIZE_LIMIT });
        }
        let grid = Grid::new(region);
        let mut seen = vec![false; grid.len()];
        let mut queue = VecDeque::new();
        for p in &pts[self.slice.0..=self.slice.1] {
            let i = grid.index(p).ok_or_else(|| Error::Invariant(format!("slice point {p} outside the shape region")))?;
            if !self.contains(p) {
                return Err(Error::Invariant(format!("slice point {p} violates the shape constraints")));
            }
            if !seen[i] {
                seen[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            grid.for_each_star(i, |j| {
                if !seen[j] && self.contains(&grid.point(j)) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            });
        }
        let out: Vec<Point> = (0..grid.len()).filter(|&i| seen[i]).map(|i| grid.point(i)).collect();
        PointSet::from_points(region.dim(), out)
    }
}

fn first_child(pts: &[Point], parent: &ShapeNode) -> Result<ShapeNode> {
    let m = parent.level;
    let (s, e) = parent.slice;
    let (l, lp) = (scale(m), scale(m - 1));
    let z1 = cover_box_of(&pts[s], &parent.anchor, &cover_positions(l, lp));
    let (a, b) = induced_crossing(&pts[s..=e], 0, &c_box(z1, m - 1), &c_tilde(z1, m - 1))
        .ok_or_else(|| Error::Invariant(format!("no induced crossing at level {} below {}", m - 1, parent.anchor)))?;
    let mut chain = parent.chain.clone();
    chain.push(Constraint::Annulus { anchor: z1, level: m - 1 });
    Ok(ShapeNode { level: m - 1, anchor: z1, branch: Branch::First, slice: (s + a, s + b), chain, children: vec![] })
}

fn second_child(pts: &[Point], parent: &ShapeNode) -> Result<ShapeNode> {
    let m = parent.level;
    let (s, e) = parent.slice;
    let (l, lp) = (scale(m), scale(m - 1));
    let hat = c_hat(parent.anchor, m);
    let j = (s..=e).rev().find(|&i| hat.contains(&pts[i])).ok_or_else(|| Error::Invariant("crossing never visits C^".into()))?;
    let z2 = cover_box_of(&pts[j], &hat.lo, &cover_positions(3 * l - 2 * lp, lp));
    let outer = c_tilde(z2, m - 1);
    let b = (j..=e).find(|&i| outer.on_boundary(&pts[i])).ok_or_else(|| Error::Invariant("last exit never leaves C~".into()))?;
    let mut chain = parent.chain.clone();
    chain.push(Constraint::Annulus { anchor: z2, level: m - 1 });
    chain.push(Constraint::OutsideInterior { hat });
    Ok(ShapeNode { level: m - 1, anchor: z2, branch: Branch::Second, slice: (j, b), chain, children: vec![] })
}

/// Recursion below `node`: both children down to level `k`, only the first
/// child from `k` down to the leaf level `k0`.
fn grow(pts: &[Point], node: &mut ShapeNode, k: usize, k0: usize) -> Result<()> {
    if node.level <= k0 {
        return Ok(());
    }
    let mut kids = vec![first_child(pts, node)?];
    if node.level > k {
        kids.push(second_child(pts, node)?);
    }
    for c in &mut kids {
        let (a, b) = c.slice;
        if let Some(p) = pts[a..=b].iter().find(|p| !c.contains(p)) {
            return Err(Error::Invariant(format!("induced crossing leaves its shape at {p} (level {})", c.level)));
        }
        grow(pts, c, k, k0)?;
    }
    node.children = kids;
    Ok(())
}

/// Shape tree of the crossing slice `slice` of `pts` through
/// `C~_{z,n} \ C_{z,n}`.
pub fn shape_tree(pts: &[Point], anchor: Point, n: usize, slice: (usize, usize), k: usize, k0: usize) -> Result<ShapeNode> {
    if !(1 <= k0 && k0 <= k && k <= n) {
        return Err(Error::InvalidInput(format!("need 1 <= k0 <= k <= n, got k0={k0}, k={k}, n={n}")));
    }
    let mut root = ShapeNode {
        level: n,
        anchor,
        branch: Branch::Root,
        slice,
        chain: vec![Constraint::Annulus { anchor, level: n }],
        children: vec![],
    };
    if !root.slice_crosses(pts) {
        return Err(Error::Hypothesis(format!("slice does not cross the level-{n} annulus at {anchor}")));
    }
    grow(pts, &mut root, k, k0)?;
    Ok(root)
}

/// `d_inf(a, b \ interior(hat))`.
fn distance_outside_interior(a: &BoxSpec, b: &BoxSpec, hat: &BoxSpec) -> i64 {
    let Some(inn) = interior(hat) else {
        return box_distance(a, b);
    };
    let mut best = i64::MAX;
    for i in 0..b.dim() {
        for low in [true, false] {
            let (mut lo, mut hi) = (b.lo, b.hi);
            if low {
                hi.set(i, b.hi[i].min(inn.lo[i] - 1));
            } else {
                lo.set(i, b.lo[i].max(inn.hi[i] + 1));
            }
            if let Ok(slab) = BoxSpec::new(lo, hi) {
                best = best.min(box_distance(a, &slab));
            }
        }
    }
    best
}

#[derive(Clone, Debug, Serialize)]
pub struct SeparationRecord {
    pub level: usize,
    pub required: f64,
    pub envelope: i64,
}

impl SeparationRecord {
    pub fn ok(&self) -> bool {
        self.envelope as f64 >= self.required
    }
}

/// Sibling separation at every branching node, from the constraint
/// envelopes of the two children.
pub fn separations(tree: &ShapeNode) -> Vec<SeparationRecord> {
    let mut out = Vec::new();
    for node in tree.nodes() {
        if node.children.len() == 2 {
            let (c1, c2) = (&node.children[0], &node.children[1]);
            let m = c1.level;
            let hat = c_hat(node.anchor, node.level);
            let env = distance_outside_interior(&c_tilde(c1.anchor, m), &c_tilde(c2.anchor, m), &hat);
            out.push(SeparationRecord { level: node.level, required: 2.0 * eps(m) * scale(m) as f64, envelope: env });
        }
    }
    out
}

/// Natural-log bound on the number of trees the recursion can produce from a
/// fixed level-`n` shape: `|T1| |T2|` choices per branching node and `|T1|`
/// per pruned node.
pub fn family_log_bound(n: usize, k: usize, k0: usize, d: usize) -> f64 {
    let mut s = 0.0;
    for m in (k + 1..=n).rev() {
        let (t1, t2) = branch_counts(m, d);
        s += 2f64.powi((n - m) as i32) * (t1 * t2).ln();
    }
    let leaves = 2f64.powi((n - k) as i32);
    for m in k0 + 1..=k {
        s += leaves * branch_counts(m, d).0.ln();
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Schedule {
    pub n0: usize,
    pub k0: usize,
    pub k: usize,
}

impl Schedule {
    pub fn new(p: &CgParams) -> Result<Schedule> {
        let (kk, l, n) = (p.k, p.l, p.n);
        let mut n0 = 0;
        while 10 * scale(n0 + 1) <= n {
            n0 += 1;
        }
        let k0 = (0..).find(|&m| scale(m) >= 5 * l).expect("scales grow");
        let need = (2 * kk * l + 3 * l) as f64;
        let k = (1..).find(|&m| 2.0 * eps(m - 1) * scale(m - 1) as f64 >= need).expect("eps_m L_m grows");
        if k > n0 || k < k0 {
            return Err(Error::Hypothesis(format!(
                "separation level k = {k} outside [k0, n0] = [{k0}, {n0}]; need L_k <= N/10, i.e. N >= {}",
                10 * scale(k)
            )));
        }
        if n0 - k0 > MAX_LEVEL_SPAN {
            return Err(Error::TooLarge { what: "recursion depth n0 - k0", size: n0 - k0, limit: MAX_LEVEL_SPAN });
        }
        Ok(Schedule { n0, k0, k })
    }

    pub fn leaves(&self) -> usize {
        1 << (self.n0 - self.k)
    }
}

/// The sup-norm sphere a crossing of `Lambda_N` must cross, where the top
/// shape is anchored.
fn top_surface(p: &CgParams) -> Option<BoxSpec> {
    let (d, n) = (p.d, p.n);
    let o = Point::zero(d);
    match p.lambda {
        LambdaKind::Ball => None,
        LambdaKind::Annulus => Some(BoxSpec::ball(o, 3 * n / 2)),
        LambdaKind::BoxAnnulus => Some(BoxSpec::new(Point::splat(d, -3 * n / 2), Point::splat(d, 5 * n / 2 - 1)).expect("non-empty")),
        LambdaKind::Punctured { .. } => Some(BoxSpec::ball(o, 3 * n / 4)),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct D4Outcome {
    pub collection: AdmissibleCollection,
    pub schedule: Schedule,
    pub tree: ShapeNode,
    pub separations: Vec<SeparationRecord>,
    /// Every leaf slice crosses its annulus.
    pub leaves_cross: bool,
    /// Oriented crossing the slices index into.
    #[serde(skip)]
    pub crossing: Vec<Point>,
}

pub fn coarse_grain_d4(path: &LatticePath, p: &CgParams) -> Result<AdmissibleCollection> {
    Ok(coarse_grain_d4_detailed(path, p)?.collection)
}

pub fn coarse_grain_d4_detailed(path: &LatticePath, p: &CgParams) -> Result<D4Outcome> {
    p.validate()?;
    if p.d < 4 {
        return Err(Error::InvalidInput(format!("shape scheme is for d >= 4, got d = {}", p.d)));
    }
    let sch = Schedule::new(p)?;
    let dom = p.domain();
    let pts = dom.crossing_segment(path)?.points(path);
    let ln0 = scale(sch.n0);
    let surface = top_surface(p);
    let anchor = match &surface {
        None => Point::zero(p.d),
        Some(s) => {
            let x = pts.iter().find(|x| s.on_boundary(x)).ok_or_else(|| Error::Invariant("crossing misses the anchor surface".into()))?;
            x.map(|v| v.div_euclid(ln0) * ln0)
        }
    };
    if !dom.contains_box(&c_tilde(anchor, sch.n0)) {
        return Err(Error::Invariant(format!("top shape at {anchor} leaves Lambda_N")));
    }
    let slice = induced_crossing(&pts, 0, &c_box(anchor, sch.n0), &c_tilde(anchor, sch.n0))
        .ok_or_else(|| Error::Invariant("no crossing of the top shape".into()))?;
    let tree = shape_tree(&pts, anchor, sch.n0, slice, sch.k, sch.k0)?;
    let lat = RenormLattice::new(p.d, p.l, p.k)?;
    let leaves = tree.leaves();
    let points: Vec<Point> = leaves.iter().map(|lf| lat.anchor(&pts[lf.slice.0])).collect();
    let leaves_cross = leaves.iter().all(|lf| lf.slice_crosses(&pts));
    let top_choices = surface.map_or(1.0, |s| 1.0 + boxes_meeting_boundary(&s, ln0));
    let per_leaf = ((scale(sch.k0) + p.l - 1) / p.l + 1) as f64;
    let log_family_bound = top_choices.ln()
        + family_log_bound(sch.n0, sch.k, sch.k0, p.d)
        + sch.leaves() as f64 * p.d as f64 * per_leaf.ln();
    let collection = AdmissibleCollection {
        params: *p,
        points,
        path_id: path_id(path),
        gamma_shape: p.gamma_shape(),
        log_family_bound,
        tau: None,
        leaves: Some(leaves.iter().map(|lf| LeafRecord { level: lf.level, anchor: lf.anchor }).collect()),
        scheme: "shapes".into(),
    };
    let separations = separations(&tree);
    Ok(D4Outcome { collection, schedule: sch, tree, separations, leaves_cross, crossing: pts })
}

/// Where the box `B(l)` of a leaf is placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoxChoice {
    /// Single point at the start of the leaf crossing.
    Start,
    /// Single point at its end.
    End,
    /// Largest allowed box, cornered at the start.
    LargestAtStart,
}

/// Random level-`n` shape trees with full branching down to `k`, in `d`
/// dimensions, from crossings of `C~_{0,n} \ C_{0,n}`.
pub fn kappa_instances(d: usize, n: usize, k: usize, count: usize, seed: u64) -> Result<Vec<(Vec<Point>, ShapeNode)>> {
    let o = Point::zero(d);
    let (u, v) = (c_box(o, n), c_tilde(o, n));
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let mut r = rng::stream(seed, rng::purpose::PATH, (n * 1_000_000 + j) as u64);
        let path = random_box_crossing(&u, &v, PathStyle::default(), &mut r)?;
        let pts = path.points;
        let slice = induced_crossing(&pts, 0, &u, &v).ok_or_else(|| Error::Invariant("walk does not cross".into()))?;
        let tree = shape_tree(&pts, o, n, slice, k, k)?;
        out.push((pts, tree));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct KappaLevel {
    pub n: usize,
    pub leaves: usize,
    pub instances: usize,
    /// Minimum over instances and box choices.
    pub kappa: f64,
    pub dyadic: f64,
    pub exhaustive: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct KappaReport {
    pub d: usize,
    pub k: usize,
    pub r_max: i64,
    /// Smallest single-box capacity among the box choices.
    pub base: f64,
    pub levels: Vec<KappaLevel>,
    /// Smallest `C` for which the recursion holds between consecutive levels.
    pub c_recursion: f64,
    /// Smallest `C` for which every two-leaf instance satisfies the
    /// two-set inequality.
    pub c_two_leaf: f64,
    pub monotone: bool,
}

/// `min over sub-collections T of cap(S_B(T)) |D| / |T|` on random instances
/// for `n = k..=n_max`, every box choice.
pub fn kappa_check(d: usize, k: usize, n_max: usize, per_level: usize, seed: u64, oracle: &GreenOracle) -> Result<KappaReport> {
    if oracle.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: oracle.dim() });
    }
    if n_max < k || n_max - k > MAX_LEVEL_SPAN {
        return Err(Error::InvalidInput(format!("need 0 <= n - k <= {MAX_LEVEL_SPAN}, got n={n_max}, k={k}")));
    }
    let r_max = ((eps(k) * scale(k) as f64) / 2.0).floor() as i64;
    if r_max < 1 {
        return Err(Error::Hypothesis(format!("eps_k L_k / 2 < 1 at k = {k}")));
    }
    let points = BlockEnergy::new(1, oracle)?;
    let large = if r_max > 1 { Some(BlockEnergy::new(r_max, oracle)?) } else { None };
    let mut choices = vec![(BoxChoice::Start, &points), (BoxChoice::End, &points)];
    if let Some(b) = &large {
        choices.push((BoxChoice::LargestAtStart, b));
    }
    let base = choices.iter().map(|(_, b)| b.cube_capacity).fold(f64::INFINITY, f64::min);
    let mut levels = Vec::new();
    let mut c_two = 0.0f64;
    for n in k..=n_max {
        let inst = kappa_instances(d, n, k, per_level, seed)?;
        let mut kappa = f64::INFINITY;
        let mut exhaustive = true;
        for (pts, tree) in &inst {
            let leaves = tree.leaves();
            for (choice, be) in &choices {
                let corners: Vec<Point> = leaves
                    .iter()
                    .map(|lf| match choice {
                        BoxChoice::End => pts[lf.slice.1],
                        _ => pts[lf.slice.0],
                    })
                    .collect();
                let m = be.matrix(&corners)?;
                let (kap, ex) = min_scaled_over_subsets(&m);
                exhaustive &= ex;
                kappa = kappa.min(kap);
                if n == k + 1 {
                    let joint = subset_bound(&m, &[0, 1]);
                    let single = be.cube_capacity;
                    let sep = (eps(k) * scale(k) as f64).powi(d as i32 - 2);
                    c_two = c_two.max((2.0 * single / joint - 1.0) * sep / single);
                }
            }
        }
        levels.push(KappaLevel {
            n,
            leaves: 1 << (n - k),
            instances: inst.len(),
            kappa,
            dyadic: 2f64.powi(n as i32),
            exhaustive,
        });
    }
    let mut c_rec = 0.0f64;
    let mut monotone = true;
    for w in levels.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        monotone &= b.kappa >= a.kappa;
        if b.kappa < b.dyadic {
            let x = b.dyadic / (eps(a.n) * scale(a.n) as f64).powi(d as i32 - 2);
            c_rec = c_rec.max((2.0 * a.kappa / b.kappa - 1.0) / x);
        }
    }
    Ok(KappaReport { d, k, r_max, base, levels, c_recursion: c_rec, c_two_leaf: c_two, monotone })
}

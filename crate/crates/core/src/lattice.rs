//! Points, boxes, finite point sets, paths and the renormalised lattice of
//! boxes used throughout the crate.
//!
//! Conventions: `BoxSpec` bounds are inclusive on both ends, iteration and
//! dense indexing are row-major (last coordinate fastest). `|.|` without
//! qualification is the sup-norm.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::ops::{Add, Index, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 6;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "Vec<i64>", try_from = "Vec<i64>")]
pub struct Point {
    dim: u8,
    c: [i64; MAX_DIM],
}

impl Point {
    pub fn new(coords: &[i64]) -> Point {
        assert!(
            !coords.is_empty() && coords.len() <= MAX_DIM,
            "point dimension {} out of range",
            coords.len()
        );
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Point { dim: coords.len() as u8, c }
    }

    pub fn zero(d: usize) -> Point {
        Point::new(&vec![0; d])
    }

    /// `t * e_i`.
    pub fn axis(d: usize, i: usize, t: i64) -> Point {
        let mut p = Point::zero(d);
        p.c[i] = t;
        p
    }

    pub fn splat(d: usize, v: i64) -> Point {
        Point::new(&vec![v; d])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i64] {
        &self.c[..self.dim as usize]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: i64) {
        debug_assert!(i < self.dim());
        self.c[i] = v;
    }

    pub fn map(&self, f: impl Fn(i64) -> i64) -> Point {
        let mut p = *self;
        for v in &mut p.c[..self.dim()] {
            *v = f(*v);
        }
        p
    }

    pub fn scale(&self, t: i64) -> Point {
        self.map(|v| v * t)
    }

    pub fn sup_norm(&self) -> i64 {
        self.coords().iter().map(|v| v.abs()).max().unwrap_or(0)
    }

    pub fn l1_norm(&self) -> i64 {
        self.coords().iter().map(|v| v.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.coords().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn sup_dist(&self, o: &Point) -> i64 {
        (*self - *o).sup_norm()
    }

    pub fn is_nn(&self, o: &Point) -> bool {
        (*self - *o).l1_norm() == 1
    }

    pub fn is_star_adjacent(&self, o: &Point) -> bool {
        (*self - *o).sup_norm() == 1
    }

    /// The `2d` nearest neighbours.
    pub fn nn_neighbors(&self) -> impl Iterator<Item = Point> + '_ {
        let d = self.dim();
        (0..2 * d).map(move |k| {
            let mut p = *self;
            p.c[k / 2] += if k % 2 == 0 { 1 } else { -1 };
            p
        })
    }

    /// The `3^d - 1` points at sup-distance one.
    pub fn star_neighbors(&self) -> impl Iterator<Item = Point> + '_ {
        let d = self.dim();
        let total = 3usize.pow(d as u32);
        (0..total).filter(move |&k| k != total / 2).map(move |mut k| {
            let mut p = *self;
            for i in 0..d {
                p.c[i] += (k % 3) as i64 - 1;
                k /= 3;
            }
            p
        })
    }
}

impl Index<usize> for Point {
    type Output = i64;
    fn index(&self, i: usize) -> &i64 {
        &self.coords()[i]
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        debug_assert_eq!(self.dim, o.dim);
        let mut p = self;
        for i in 0..self.dim() {
            p.c[i] += o.c[i];
        }
        p
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        debug_assert_eq!(self.dim, o.dim);
        let mut p = self;
        for i in 0..self.dim() {
            p.c[i] -= o.c[i];
        }
        p
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.coords().iter().map(|v| v.to_string()).collect();
        write!(f, "({})", s.join(","))
    }
}

impl From<Point> for Vec<i64> {
    fn from(p: Point) -> Vec<i64> {
        p.coords().to_vec()
    }
}

impl TryFrom<Vec<i64>> for Point {
    type Error = String;
    fn try_from(v: Vec<i64>) -> std::result::Result<Point, String> {
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(format!("point dimension {} out of range", v.len()));
        }
        Ok(Point::new(&v))
    }
}

/// Anything with a membership test.
pub trait Region {
    fn dim(&self) -> usize;
    fn contains(&self, p: &Point) -> bool;

    /// Inner boundary membership: `p` in the region with a nearest neighbour outside.
    fn on_inner_boundary(&self, p: &Point) -> bool {
        self.contains(p) && p.nn_neighbors().any(|q| !self.contains(&q))
    }
}

/// Axis-parallel box `lo..=hi` (inclusive).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lo: Point,
    pub hi: Point,
}

impl BoxSpec {
    pub fn new(lo: Point, hi: Point) -> Result<BoxSpec> {
        if lo.dim() != hi.dim() {
            return Err(Error::DimensionMismatch { expected: lo.dim(), got: hi.dim() });
        }
        if (0..lo.dim()).any(|i| lo[i] > hi[i]) {
            return Err(Error::InvalidInput(format!("empty box {lo}..={hi}")));
        }
        Ok(BoxSpec { lo, hi })
    }

    /// `B_r(center)` in the sup-norm.
    pub fn ball(center: Point, r: i64) -> BoxSpec {
        assert!(r >= 0);
        let d = center.dim();
        BoxSpec { lo: center - Point::splat(d, r), hi: center + Point::splat(d, r) }
    }

    /// `z + [a, b)^d`.
    pub fn half_open(z: Point, a: i64, b: i64) -> BoxSpec {
        assert!(b > a, "empty half-open box");
        let d = z.dim();
        BoxSpec { lo: z + Point::splat(d, a), hi: z + Point::splat(d, b - 1) }
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn extent(&self, i: usize) -> usize {
        (self.hi[i] - self.lo[i] + 1) as usize
    }

    pub fn extents(&self) -> Vec<usize> {
        (0..self.dim()).map(|i| self.extent(i)).collect()
    }

    pub fn volume(&self) -> usize {
        (0..self.dim()).map(|i| self.extent(i)).product()
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..self.dim()).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }

    pub fn contains_box(&self, o: &BoxSpec) -> bool {
        self.contains(&o.lo) && self.contains(&o.hi)
    }

    pub fn on_boundary(&self, p: &Point) -> bool {
        self.contains(p) && (0..self.dim()).any(|i| p[i] == self.lo[i] || p[i] == self.hi[i])
    }

    pub fn enlarge(&self, m: i64) -> BoxSpec {
        let d = self.dim();
        BoxSpec { lo: self.lo - Point::splat(d, m), hi: self.hi + Point::splat(d, m) }
    }

    pub fn translate(&self, z: Point) -> BoxSpec {
        BoxSpec { lo: self.lo + z, hi: self.hi + z }
    }

    pub fn intersect(&self, o: &BoxSpec) -> Option<BoxSpec> {
        let lo = Point::new(&(0..self.dim()).map(|i| self.lo[i].max(o.lo[i])).collect::<Vec<_>>());
        let hi = Point::new(&(0..self.dim()).map(|i| self.hi[i].min(o.hi[i])).collect::<Vec<_>>());
        BoxSpec::new(lo, hi).ok()
    }

    /// Row-major linear index of `p` (must be inside).
    pub fn index(&self, p: &Point) -> usize {
        let mut idx = 0usize;
        for i in 0..self.dim() {
            idx = idx * self.extent(i) + (p[i] - self.lo[i]) as usize;
        }
        idx
    }

    pub fn point_at(&self, mut idx: usize) -> Point {
        let d = self.dim();
        let mut p = self.lo;
        for i in (0..d).rev() {
            let e = self.extent(i);
            p.set(i, self.lo[i] + (idx % e) as i64);
            idx /= e;
        }
        p
    }

    pub fn iter(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.volume()).map(move |k| self.point_at(k))
    }

    pub fn boundary_points(&self) -> Vec<Point> {
        self.iter().filter(|p| self.on_boundary(p)).collect()
    }

    pub fn to_set(&self) -> PointSet {
        PointSet::from_sorted_unchecked(self.dim(), self.iter().collect())
    }

    /// Sup-distance from `p` to the box (0 inside).
    pub fn sup_dist_to(&self, p: &Point) -> i64 {
        (0..self.dim())
            .map(|i| (self.lo[i] - p[i]).max(p[i] - self.hi[i]).max(0))
            .max()
            .unwrap_or(0)
    }
}

impl Region for BoxSpec {
    fn dim(&self) -> usize {
        self.lo.dim()
    }
    fn contains(&self, p: &Point) -> bool {
        BoxSpec::contains(self, p)
    }
    fn on_inner_boundary(&self, p: &Point) -> bool {
        self.on_boundary(p)
    }
}

/// Dense row-major indexing helper over a box, with bounds-checked neighbour
/// iteration on linear indices.
#[derive(Clone, Debug)]
pub struct Grid {
    pub bx: BoxSpec,
    ext: [usize; MAX_DIM],
    stride: [usize; MAX_DIM],
    star: Vec<[i8; MAX_DIM]>,
}

impl Grid {
    pub fn new(bx: BoxSpec) -> Grid {
        let d = bx.dim();
        let mut ext = [1; MAX_DIM];
        let mut stride = [0; MAX_DIM];
        for i in 0..d {
            ext[i] = bx.extent(i);
        }
        let mut s = 1;
        for i in (0..d).rev() {
            stride[i] = s;
            s *= ext[i];
        }
        let total = 3usize.pow(d as u32);
        let star = (0..total)
            .filter(|&k| k != total / 2)
            .map(|mut k| {
                let mut o = [0i8; MAX_DIM];
                for v in o.iter_mut().take(d) {
                    *v = (k % 3) as i8 - 1;
                    k /= 3;
                }
                o
            })
            .collect();
        Grid { bx, ext, stride, star }
    }

    pub fn dim(&self) -> usize {
        self.bx.dim()
    }

    pub fn len(&self) -> usize {
        self.bx.volume()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, p: &Point) -> Option<usize> {
        if self.bx.contains(p) {
            Some(self.bx.index(p))
        } else {
            None
        }
    }

    pub fn point(&self, idx: usize) -> Point {
        self.bx.point_at(idx)
    }

    #[inline]
    pub fn decode(&self, mut idx: usize, out: &mut [usize; MAX_DIM]) {
        for i in (0..self.dim()).rev() {
            out[i] = idx % self.ext[i];
            idx /= self.ext[i];
        }
    }

    pub fn on_boundary_idx(&self, idx: usize) -> bool {
        let mut c = [0; MAX_DIM];
        self.decode(idx, &mut c);
        (0..self.dim()).any(|i| c[i] == 0 || c[i] + 1 == self.ext[i])
    }

    #[inline]
    pub fn for_each_nn(&self, idx: usize, mut f: impl FnMut(usize)) {
        let mut c = [0; MAX_DIM];
        self.decode(idx, &mut c);
        for i in 0..self.dim() {
            if c[i] + 1 < self.ext[i] {
                f(idx + self.stride[i]);
            }
            if c[i] > 0 {
                f(idx - self.stride[i]);
            }
        }
    }

    /// Calls `f(Some(j))` for in-box neighbours and `f(None)` for each neighbour outside the box.
    #[inline]
    pub fn for_each_nn_or_outside(&self, idx: usize, mut f: impl FnMut(Option<usize>)) {
        let mut c = [0; MAX_DIM];
        self.decode(idx, &mut c);
        for i in 0..self.dim() {
            f((c[i] + 1 < self.ext[i]).then(|| idx + self.stride[i]));
            f((c[i] > 0).then(|| idx - self.stride[i]));
        }
    }

    #[inline]
    pub fn for_each_star(&self, idx: usize, mut f: impl FnMut(usize)) {
        let mut c = [0; MAX_DIM];
        self.decode(idx, &mut c);
        let d = self.dim();
        'off: for o in &self.star {
            let mut j = idx as isize;
            for i in 0..d {
                let ci = c[i] as isize + o[i] as isize;
                if ci < 0 || ci >= self.ext[i] as isize {
                    continue 'off;
                }
                j += o[i] as isize * self.stride[i] as isize;
            }
            f(j as usize);
        }
    }
}

/// Finite set of lattice points kept as a sorted, deduplicated array, with an
/// optional dense bitmask over the bounding box when the set is dense enough.
#[derive(Clone, Debug)]
pub struct PointSet {
    dim: usize,
    pts: Vec<Point>,
    mask: Option<Mask>,
}

#[derive(Clone, Debug)]
struct Mask {
    bbox: BoxSpec,
    bits: Vec<u64>,
}

impl Mask {
    fn build(bbox: BoxSpec, pts: &[Point]) -> Mask {
        let mut bits = vec![0u64; bbox.volume().div_ceil(64)];
        for p in pts {
            let k = bbox.index(p);
            bits[k / 64] |= 1 << (k % 64);
        }
        Mask { bbox, bits }
    }

    fn get(&self, p: &Point) -> bool {
        if !self.bbox.contains(p) {
            return false;
        }
        let k = self.bbox.index(p);
        self.bits[k / 64] >> (k % 64) & 1 == 1
    }
}

/// Density above which a bitmask is attached.
const MASK_DENSITY: f64 = 0.05;
const MASK_MAX_VOLUME: usize = 1 << 30;

impl PartialEq for PointSet {
    fn eq(&self, o: &PointSet) -> bool {
        self.dim == o.dim && self.pts == o.pts
    }
}

impl PointSet {
    pub fn empty(dim: usize) -> PointSet {
        PointSet { dim, pts: Vec::new(), mask: None }
    }

    pub fn from_points(dim: usize, pts: impl IntoIterator<Item = Point>) -> Result<PointSet> {
        let mut v: Vec<Point> = pts.into_iter().collect();
        if let Some(p) = v.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: p.dim() });
        }
        v.sort_unstable();
        v.dedup();
        Ok(Self::from_sorted_unchecked(dim, v))
    }

    /// `pts` must already be sorted and deduplicated.
    pub fn from_sorted_unchecked(dim: usize, pts: Vec<Point>) -> PointSet {
        debug_assert!(pts.windows(2).all(|w| w[0] < w[1]));
        let mut s = PointSet { dim, pts, mask: None };
        s.refresh_mask();
        s
    }

    fn refresh_mask(&mut self) {
        self.mask = None;
        if let Some(bb) = self.bbox() {
            let vol = bb.volume();
            if vol <= MASK_MAX_VOLUME && self.pts.len() as f64 > MASK_DENSITY * vol as f64 {
                self.mask = Some(Mask::build(bb, &self.pts));
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.pts
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.pts.iter()
    }

    pub fn has_mask(&self) -> bool {
        self.mask.is_some()
    }

    pub fn contains(&self, p: &Point) -> bool {
        match &self.mask {
            Some(m) => m.get(p),
            None => self.pts.binary_search(p).is_ok(),
        }
    }

    /// Position of `p` in the sorted point array.
    pub fn position(&self, p: &Point) -> Option<usize> {
        self.pts.binary_search(p).ok()
    }

    /// True when the bitmask (if any) and the sorted array agree on the bounding box.
    pub fn mask_consistent(&self) -> bool {
        match (&self.mask, self.bbox()) {
            (Some(m), Some(bb)) => bb.iter().all(|p| m.get(&p) == self.pts.binary_search(&p).is_ok()),
            _ => true,
        }
    }

    pub fn bbox(&self) -> Option<BoxSpec> {
        let first = self.pts.first()?;
        let mut lo = *first;
        let mut hi = *first;
        for p in &self.pts {
            for i in 0..self.dim {
                lo.set(i, lo[i].min(p[i]));
                hi.set(i, hi[i].max(p[i]));
            }
        }
        Some(BoxSpec { lo, hi })
    }

    pub fn union(&self, o: &PointSet) -> PointSet {
        let mut v = self.pts.clone();
        v.extend_from_slice(&o.pts);
        v.sort_unstable();
        v.dedup();
        PointSet::from_sorted_unchecked(self.dim, v)
    }

    pub fn difference(&self, o: &PointSet) -> PointSet {
        let v = self.pts.iter().filter(|p| !o.contains(p)).copied().collect();
        PointSet::from_sorted_unchecked(self.dim, v)
    }

    pub fn intersection(&self, o: &PointSet) -> PointSet {
        let v = self.pts.iter().filter(|p| o.contains(p)).copied().collect();
        PointSet::from_sorted_unchecked(self.dim, v)
    }

    pub fn is_subset(&self, o: &PointSet) -> bool {
        self.pts.iter().all(|p| o.contains(p))
    }

    pub fn is_disjoint(&self, o: &PointSet) -> bool {
        self.pts.iter().all(|p| !o.contains(p))
    }

    pub fn translate(&self, z: Point) -> PointSet {
        PointSet::from_sorted_unchecked(self.dim, self.pts.iter().map(|p| *p + z).collect())
    }

    pub fn filter(&self, f: impl Fn(&Point) -> bool) -> PointSet {
        PointSet::from_sorted_unchecked(self.dim, self.pts.iter().filter(|p| f(p)).copied().collect())
    }

    /// Sup-norm diameter.
    pub fn diameter(&self) -> i64 {
        self.bbox().map(|b| (0..self.dim).map(|i| b.hi[i] - b.lo[i]).max().unwrap_or(0)).unwrap_or(0)
    }

    /// Serialise as `d=<dim>` followed by one point per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("d={}\n", self.dim);
        for p in &self.pts {
            let c: Vec<String> = p.coords().iter().map(|v| v.to_string()).collect();
            s.push_str(&c.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<PointSet> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
        let dim: usize = header
            .trim()
            .strip_prefix("d=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or(Error::Parse { line: 1, msg: format!("expected d=<dim>, got {header:?}") })?;
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Parse { line: 1, msg: format!("dimension {dim} out of range") });
        }
        let mut pts = Vec::new();
        for (ln, l) in lines {
            let c: std::result::Result<Vec<i64>, _> = l.split_whitespace().map(str::parse).collect();
            let c = c.map_err(|e| Error::Parse { line: ln + 1, msg: e.to_string() })?;
            if c.len() != dim {
                return Err(Error::Parse { line: ln + 1, msg: format!("expected {dim} coordinates, got {}", c.len()) });
            }
            pts.push(Point::new(&c));
        }
        PointSet::from_points(dim, pts)
    }

    /// Split into nearest-neighbour (or *-) connected components.
    pub fn components(&self, star: bool) -> Vec<PointSet> {
        let mut seen = vec![false; self.pts.len()];
        let mut out = Vec::new();
        for s in 0..self.pts.len() {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![self.pts[s]];
            let mut q = VecDeque::from([self.pts[s]]);
            while let Some(p) = q.pop_front() {
                let mut visit = |n: Point| {
                    if let Ok(k) = self.pts.binary_search(&n) {
                        if !seen[k] {
                            seen[k] = true;
                            comp.push(n);
                            q.push_back(n);
                        }
                    }
                };
                if star {
                    p.star_neighbors().for_each(&mut visit);
                } else {
                    p.nn_neighbors().for_each(&mut visit);
                }
            }
            out.push(PointSet::from_points(self.dim, comp).expect("same dim"));
        }
        out
    }

    pub fn is_connected(&self, star: bool) -> bool {
        self.len() <= 1 || self.components(star).len() == 1
    }
}

impl Region for PointSet {
    fn dim(&self) -> usize {
        self.dim
    }
    fn contains(&self, p: &Point) -> bool {
        PointSet::contains(self, p)
    }
}

/// `{x in S : some nearest neighbour of x is not in S}`.
pub fn inner_boundary(s: &PointSet) -> PointSet {
    s.filter(|p| p.nn_neighbors().any(|q| !s.contains(&q)))
}

/// `{y not in S : y has a nearest neighbour in S}`.
pub fn outer_boundary(s: &PointSet) -> PointSet {
    let v: Vec<Point> = s.iter().flat_map(|p| p.nn_neighbors().collect::<Vec<_>>()).filter(|q| !s.contains(q)).collect();
    PointSet::from_points(s.dim(), v).expect("same dim")
}

/// Flood-fill the unbounded nearest-neighbour component of the complement of
/// `blocked` inside `ambient`; `blocked` must not touch the boundary of `ambient`.
fn unbounded_complement(ambient: &BoxSpec, blocked: &dyn Fn(&Point) -> bool) -> Vec<bool> {
    let g = Grid::new(*ambient);
    let mut inf = vec![false; g.len()];
    let mut q = VecDeque::new();
    for k in 0..g.len() {
        if g.on_boundary_idx(k) {
            inf[k] = true;
            q.push_back(k);
        }
    }
    while let Some(k) = q.pop_front() {
        g.for_each_nn(k, |j| {
            if !inf[j] && !blocked(&g.point(j)) {
                inf[j] = true;
                q.push_back(j);
            }
        });
    }
    inf
}

/// Exterior boundary: points of the unbounded component of the complement of
/// `S` adjacent to `S`. `ambient` must strictly contain `S` (default: bounding
/// box enlarged by one).
pub fn exterior_boundary(s: &PointSet, ambient: Option<&BoxSpec>) -> Result<PointSet> {
    let bb = s.bbox().ok_or(Error::EmptySet("exterior_boundary"))?;
    let amb = ambient.copied().unwrap_or_else(|| bb.enlarge(1));
    if !amb.enlarge(-1).contains_box(&bb) {
        return Err(Error::InvalidInput("ambient box too small to certify the unbounded component".into()));
    }
    let inf = unbounded_complement(&amb, &|p| s.contains(p));
    let g = Grid::new(amb);
    let pts = (0..g.len())
        .filter(|&k| inf[k] && g.point(k).nn_neighbors().any(|q| s.contains(&q)))
        .map(|k| g.point(k));
    PointSet::from_points(s.dim(), pts)
}

/// `A ⪯ B`: `A` lies in finite nearest-neighbour components of the complement of `B`.
pub fn surrounded_by(a: &PointSet, b: &PointSet) -> bool {
    if a.is_empty() {
        return true;
    }
    if b.is_empty() || !a.is_disjoint(b) {
        return false;
    }
    let bb = a.union(b).bbox().expect("non-empty").enlarge(1);
    let inf = unbounded_complement(&bb, &|p| b.contains(p));
    a.iter().all(|p| !inf[bb.index(p)])
}

/// Exact sup-norm distance between two finite sets; `None` when either is empty.
pub fn set_sup_distance(a: &PointSet, b: &PointSet) -> Option<i64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    // Grow the bucket width until some pair is found in neighbouring buckets.
    let mut w: i64 = 1;
    loop {
        let mut buckets: HashMap<Point, Vec<Point>> = HashMap::new();
        for p in b.iter() {
            buckets.entry(p.map(|v| v.div_euclid(w))).or_default().push(*p);
        }
        let mut best = i64::MAX;
        for p in a.iter() {
            let key = p.map(|v| v.div_euclid(w));
            let mut visit = |k: Point| {
                if let Some(v) = buckets.get(&k) {
                    for q in v {
                        best = best.min(p.sup_dist(q));
                    }
                }
            };
            visit(key);
            key.star_neighbors().for_each(&mut visit);
        }
        // Every pair at sup-distance < w lies in neighbouring buckets.
        if best < w {
            return Some(best);
        }
        w *= 4;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Adjacency {
    Nearest,
    Star,
}

/// Finite lattice path with nearest-neighbour or *-adjacent steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticePath {
    pub points: Vec<Point>,
    pub adjacency: Adjacency,
}

impl LatticePath {
    pub fn new(points: Vec<Point>, adjacency: Adjacency) -> Result<LatticePath> {
        if points.is_empty() {
            return Err(Error::EmptySet("path"));
        }
        let d = points[0].dim();
        for (k, w) in points.windows(2).enumerate() {
            if w[1].dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: w[1].dim() });
            }
            let ok = match adjacency {
                Adjacency::Nearest => w[0].is_nn(&w[1]),
                Adjacency::Star => w[0].is_star_adjacent(&w[1]),
            };
            if !ok {
                return Err(Error::InvalidInput(format!("step {k} from {} to {} is not adjacent", w[0], w[1])));
            }
        }
        Ok(LatticePath { points, adjacency })
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn trace(&self) -> PointSet {
        PointSet::from_points(self.dim(), self.points.iter().copied()).expect("same dim")
    }

    /// Crosses `V \ U`: visits `U` and the inner boundary of `V`.
    pub fn crosses(&self, u: &dyn Region, v: &dyn Region) -> bool {
        self.points.iter().any(|p| u.contains(p)) && self.points.iter().any(|p| v.on_inner_boundary(p))
    }

    pub fn sub_path(&self, a: usize, b: usize) -> LatticePath {
        LatticePath { points: self.points[a..=b].to_vec(), adjacency: self.adjacency }
    }
}

/// Tube `T_N(L) = [-L, N+L] x [-L, L]^{d-1}` around the segment `{0..N} e_1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TubeSpec {
    pub d: usize,
    pub n: i64,
    pub l: i64,
}

impl TubeSpec {
    pub fn new(d: usize, n: i64, l: i64) -> Result<TubeSpec> {
        if !(1..=MAX_DIM).contains(&d) || n < 0 || l < 0 {
            return Err(Error::InvalidInput(format!("bad tube d={d} N={n} L={l}")));
        }
        Ok(TubeSpec { d, n, l })
    }

    pub fn region(&self) -> BoxSpec {
        let mut lo = Point::splat(self.d, -self.l);
        let mut hi = Point::splat(self.d, self.l);
        hi.set(0, self.n + self.l);
        lo.set(0, -self.l);
        BoxSpec { lo, hi }
    }

    /// The segment `T_N = {k e_1 : 0 <= k <= N}`.
    pub fn segment(&self) -> PointSet {
        segment(self.d, self.n)
    }

    /// Face `{x_1 = t} ∩ T_N(L)`.
    pub fn face(&self, t: i64) -> BoxSpec {
        let r = self.region();
        let mut lo = r.lo;
        let mut hi = r.hi;
        lo.set(0, t);
        hi.set(0, t);
        BoxSpec { lo, hi }
    }
}

/// `{k e_1 : 0 <= k <= n}`.
pub fn segment(d: usize, n: i64) -> PointSet {
    PointSet::from_sorted_unchecked(d, (0..=n).map(|k| Point::axis(d, 0, k)).collect())
}

/// Lattice `L Z^d` with the box family attached to each site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenormLattice {
    pub d: usize,
    pub l: i64,
    pub k: i64,
}

impl RenormLattice {
    pub fn new(d: usize, l: i64, k: i64) -> Result<RenormLattice> {
        if !(1..=MAX_DIM).contains(&d) || l < 1 || k < 1 {
            return Err(Error::InvalidInput(format!("bad renormalised lattice d={d} L={l} K={k}")));
        }
        Ok(RenormLattice { d, l, k })
    }

    /// `C_z = z + [0, L)^d`.
    pub fn c_box(&self, z: Point) -> BoxSpec {
        BoxSpec::half_open(z, 0, self.l)
    }

    /// `C~_z = z + [-L, 2L)^d`.
    pub fn c_tilde(&self, z: Point) -> BoxSpec {
        BoxSpec::half_open(z, -self.l, 2 * self.l)
    }

    /// `D~_z = z + [-2L, 3L)^d`.
    pub fn d_tilde(&self, z: Point) -> BoxSpec {
        BoxSpec::half_open(z, -2 * self.l, 3 * self.l)
    }

    /// `D_z = z + [-3L, 4L)^d`.
    pub fn d_box(&self, z: Point) -> BoxSpec {
        BoxSpec::half_open(z, -3 * self.l, 4 * self.l)
    }

    /// `U_z = z + [-KL + 1, L + KL - 1)^d`.
    pub fn u_box(&self, z: Point) -> BoxSpec {
        BoxSpec::half_open(z, -self.k * self.l + 1, self.l + self.k * self.l - 1)
    }

    /// Lattice site whose `C_z` contains `p`.
    pub fn anchor(&self, p: &Point) -> Point {
        p.map(|v| v.div_euclid(self.l) * self.l)
    }

    pub fn is_site(&self, z: &Point) -> bool {
        z.coords().iter().all(|v| v.rem_euclid(self.l) == 0)
    }

    /// Minimal sup-distance between distinct sites of an admissible collection.
    pub fn min_separation(&self) -> i64 {
        2 * self.k * self.l + self.l
    }
}

/// Peel `k` nested *-connected blocking layers out of `sigma`, following the
/// exterior-boundary construction: repeatedly take the *-cluster `C` of `U` in
/// `V \ Sigma`, record its exterior boundary as the next layer and absorb
/// `C ∪ layer` into `U`.
///
/// Fails when fewer than `k` layers exist (some *-path from `U` to the inner
/// boundary of `V` meets `Sigma` in fewer than `k` points).
pub fn blocking_layers(sigma: &PointSet, u: &PointSet, v: &BoxSpec, k: usize) -> Result<Vec<PointSet>> {
    let layers = peel_layers(sigma, u, v, Some(k))?;
    if layers.len() < k {
        return Err(Error::Hypothesis(format!(
            "only {} blocking layers found, {} requested",
            layers.len(),
            k
        )));
    }
    Ok(layers)
}

/// All layers that can be peeled before the cluster of `U` reaches `∂V`.
pub fn all_blocking_layers(sigma: &PointSet, u: &PointSet, v: &BoxSpec) -> Result<Vec<PointSet>> {
    peel_layers(sigma, u, v, None)
}

fn peel_layers(sigma: &PointSet, u: &PointSet, v: &BoxSpec, limit: Option<usize>) -> Result<Vec<PointSet>> {
    if u.is_empty() {
        return Err(Error::EmptySet("U"));
    }
    if !u.iter().all(|p| v.contains(p)) || !sigma.iter().all(|p| v.contains(p)) {
        return Err(Error::InvalidInput("U and Sigma must lie in V".into()));
    }
    if !sigma.is_disjoint(u) {
        return Err(Error::InvalidInput("Sigma must be disjoint from U".into()));
    }
    // Dense working grid over V with a one-site margin for the exterior fill.
    let amb = v.enlarge(1);
    let g = Grid::new(amb);
    const FREE: u8 = 0;
    const SIGMA: u8 = 1;
    const INSIDE: u8 = 2; // absorbed into U
    const OUT: u8 = 3; // outside V
    let mut state = vec![FREE; g.len()];
    for (k, st) in state.iter_mut().enumerate() {
        if !v.contains(&g.point(k)) {
            *st = OUT;
        }
    }
    for p in sigma.iter() {
        state[amb.index(p)] = SIGMA;
    }
    for p in u.iter() {
        state[amb.index(p)] = INSIDE;
    }
    let mut layers = Vec::new();
    loop {
        if limit.is_some_and(|k| layers.len() >= k) {
            break;
        }
        // *-cluster of the absorbed set in V \ Sigma.
        let mut q: VecDeque<usize> = (0..g.len()).filter(|&k| state[k] == INSIDE).collect();
        let mut in_c: Vec<bool> = state.iter().map(|&s| s == INSIDE).collect();
        while let Some(k) = q.pop_front() {
            g.for_each_star(k, |j| {
                if !in_c[j] && state[j] == FREE {
                    in_c[j] = true;
                    q.push_back(j);
                }
            });
        }
        if (0..g.len()).any(|k| in_c[k] && v.on_boundary(&g.point(k))) {
            break;
        }
        // Unbounded nn-component of the complement of C, then its contact with C.
        let mut inf = vec![false; g.len()];
        let mut q: VecDeque<usize> = (0..g.len()).filter(|&k| g.on_boundary_idx(k)).collect();
        for &k in &q {
            inf[k] = true;
        }
        while let Some(k) = q.pop_front() {
            g.for_each_nn(k, |j| {
                if !inf[j] && !in_c[j] {
                    inf[j] = true;
                    q.push_back(j);
                }
            });
        }
        let mut layer = Vec::new();
        for k in 0..g.len() {
            if inf[k] {
                let mut touches = false;
                g.for_each_nn(k, |j| touches |= in_c[j]);
                if touches {
                    if state[k] != SIGMA {
                        return Err(Error::Invariant(format!(
                            "exterior boundary point {} outside Sigma",
                            g.point(k)
                        )));
                    }
                    layer.push(g.point(k));
                }
            }
        }
        if layer.is_empty() {
            break;
        }
        for k in 0..g.len() {
            if in_c[k] {
                state[k] = INSIDE;
            }
        }
        for p in &layer {
            state[amb.index(p)] = INSIDE;
        }
        layers.push(PointSet::from_points(v.dim(), layer)?);
    }
    Ok(layers)
}

/// Check the output of [`blocking_layers`]: disjoint, inside `Sigma`,
/// *-connected and nested `U ⪯ O_1 ⪯ O_2 ⪯ ...`.
pub fn verify_layers(layers: &[PointSet], sigma: &PointSet, u: &PointSet) -> Result<()> {
    for (i, o) in layers.iter().enumerate() {
        if !o.is_subset(sigma) {
            return Err(Error::Invariant(format!("layer {i} not inside Sigma")));
        }
        if !o.is_connected(true) {
            return Err(Error::Invariant(format!("layer {i} not *-connected")));
        }
        for (j, o2) in layers.iter().enumerate().skip(i + 1) {
            if !o.is_disjoint(o2) {
                return Err(Error::Invariant(format!("layers {i} and {j} intersect")));
            }
        }
        let inner = if i == 0 { u } else { &layers[i - 1] };
        if !surrounded_by(inner, o) {
            return Err(Error::Invariant(format!("layer {i} does not surround its predecessor")));
        }
    }
    Ok(())
}

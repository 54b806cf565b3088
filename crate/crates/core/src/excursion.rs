//! Excursion sets `{phi >= h}`: cluster labelling and the connection events.
//!
//! All events use nearest-neighbour connectivity inside an explicit ambient
//! box. Boxes `B_N` are centred at the origin.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldSample;
use crate::lattice::{Adjacency, BoxSpec, Grid, Point, MAX_DIM};
use crate::stats;

/// Union-find cluster labels of `{phi >= h}` inside a region.
#[derive(Clone, Debug)]
pub struct ClusterLabeling {
    pub region: BoxSpec,
    pub h: f64,
    pub mode: Adjacency,
    /// 0 below level, otherwise `1..=n_clusters`, row-major over `region`.
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
    lo: Vec<[i64; MAX_DIM]>,
    hi: Vec<[i64; MAX_DIM]>,
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> UnionFind {
        UnionFind { parent: (0..n as u32).collect() }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

impl ClusterLabeling {
    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn label_at(&self, p: &Point) -> u32 {
        if self.region.contains(p) {
            self.labels[self.region.index(p)]
        } else {
            0
        }
    }

    /// Sup-norm diameter of cluster `label`.
    pub fn diameter(&self, label: u32) -> i64 {
        let k = label as usize - 1;
        (0..self.region.dim()).map(|i| self.hi[k][i] - self.lo[k][i]).max().unwrap_or(0)
    }

    pub fn size(&self, label: u32) -> usize {
        self.sizes[label as usize - 1]
    }

    pub fn cluster_points(&self, label: u32) -> Vec<Point> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == label).map(|(i, _)| self.region.point_at(i)).collect()
    }

    /// Labels present in `sub`.
    pub fn labels_in(&self, sub: &BoxSpec) -> Vec<u32> {
        let mut v: Vec<u32> = match sub.intersect(&self.region) {
            Some(s) => s.iter().map(|p| self.labels[self.region.index(&p)]).filter(|&l| l > 0).collect(),
            None => Vec::new(),
        };
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Labels present on the inner boundary of the region.
    pub fn labels_on_boundary(&self) -> Vec<u32> {
        let g = Grid::new(self.region);
        let mut v: Vec<u32> = (0..g.len()).filter(|&i| g.on_boundary_idx(i)).map(|i| self.labels[i]).filter(|&l| l > 0).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Label `{phi >= h}` on the whole sample box.
pub fn label_clusters(f: &FieldSample, h: f64, mode: Adjacency) -> ClusterLabeling {
    label_region(f, h, mode, &f.bx).expect("own box")
}

/// Label `{phi >= h} ∩ region`; `region` must lie inside the sample box.
pub fn label_region(f: &FieldSample, h: f64, mode: Adjacency, region: &BoxSpec) -> Result<ClusterLabeling> {
    if !f.bx.contains_box(region) {
        return Err(Error::InvalidInput(format!("region {}..{} escapes the sample box", region.lo, region.hi)));
    }
    let g = Grid::new(*region);
    let open: Vec<bool> = if *region == f.bx {
        f.values.iter().map(|&v| v >= h).collect()
    } else {
        region.iter().map(|p| f.values[f.bx.index(&p)] >= h).collect()
    };
    let mut uf = UnionFind::new(g.len());
    for i in 0..g.len() {
        if !open[i] {
            continue;
        }
        let mut link = |j: usize| {
            if j < i && open[j] {
                uf.union(i as u32, j as u32);
            }
        };
        match mode {
            Adjacency::Nearest => g.for_each_nn(i, &mut link),
            Adjacency::Star => g.for_each_star(i, &mut link),
        }
    }
    let d = region.dim();
    let mut root_label = vec![0u32; g.len()];
    let mut labels = vec![0u32; g.len()];
    let mut sizes = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut c = [0usize; MAX_DIM];
    for i in 0..g.len() {
        if !open[i] {
            continue;
        }
        let r = uf.find(i as u32) as usize;
        if root_label[r] == 0 {
            sizes.push(0);
            lo.push([i64::MAX; MAX_DIM]);
            hi.push([i64::MIN; MAX_DIM]);
            root_label[r] = sizes.len() as u32;
        }
        let l = root_label[r];
        labels[i] = l;
        let k = l as usize - 1;
        sizes[k] += 1;
        g.decode(i, &mut c);
        for a in 0..d {
            let v = region.lo[a] + c[a] as i64;
            lo[k][a] = lo[k][a].min(v);
            hi[k][a] = hi[k][a].max(v);
        }
    }
    Ok(ClusterLabeling { region: *region, h, mode, labels, sizes, lo, hi })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    OneArm,
    TruncatedOneArm,
    LocUniq,
    TwoArms,
    Existence,
    Uniqueness,
    TubeCrossing,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::OneArm => "one_arm",
            EventKind::TruncatedOneArm => "truncated_one_arm",
            EventKind::LocUniq => "loc_uniq",
            EventKind::TwoArms => "two_arms",
            EventKind::Existence => "existence",
            EventKind::Uniqueness => "uniqueness",
            EventKind::TubeCrossing => "tube_crossing",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Witness {
    /// Open nearest-neighbour path certifying a connection.
    Path(Vec<Point>),
    /// One representative point per relevant cluster.
    Clusters(Vec<Point>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub event: EventKind,
    pub h: f64,
    pub n: i64,
    pub n_out: Option<i64>,
    pub l: Option<i64>,
    pub ambient: BoxSpec,
    pub outcome: bool,
    pub witness: Option<Witness>,
}

fn b(d: usize, n: i64) -> BoxSpec {
    BoxSpec::ball(Point::zero(d), n)
}

fn require_inside(f: &FieldSample, bx: &BoxSpec) -> Result<()> {
    if !f.bx.contains_box(bx) {
        return Err(Error::InvalidInput(format!("box {}..{} is not inside the sample box {}..{}", bx.lo, bx.hi, f.bx.lo, f.bx.hi)));
    }
    Ok(())
}

/// Breadth-first search in `{phi >= h} ∩ region` from `sources`, stopping at
/// the first point satisfying `target`. Returns the path to it, or the set of
/// visited indices when no target is reached.
fn bfs(
    f: &FieldSample,
    h: f64,
    region: &BoxSpec,
    sources: &[Point],
    target: impl Fn(&Point) -> bool,
) -> std::result::Result<Vec<Point>, Vec<usize>> {
    let g = Grid::new(*region);
    let mut parent = vec![u32::MAX; g.len()];
    let mut q = VecDeque::new();
    let open = |i: usize| f.values[f.bx.index(&g.point(i))] >= h;
    for s in sources {
        if let Some(i) = g.index(s) {
            if parent[i] == u32::MAX && open(i) {
                parent[i] = i as u32;
                q.push_back(i);
            }
        }
    }
    let mut visited = Vec::new();
    while let Some(i) = q.pop_front() {
        visited.push(i);
        let p = g.point(i);
        if target(&p) {
            let mut path = vec![p];
            let mut k = i;
            while parent[k] as usize != k {
                k = parent[k] as usize;
                path.push(g.point(k));
            }
            path.reverse();
            return Ok(path);
        }
        g.for_each_nn(i, |j| {
            if parent[j] == u32::MAX && open(j) {
                parent[j] = i as u32;
                q.push_back(j);
            }
        });
    }
    Err(visited)
}

/// `0 <-> dB_N` in `{phi >= h}`.
pub fn one_arm(f: &FieldSample, h: f64, n: i64) -> Result<EventReport> {
    let d = f.dim();
    let bn = b(d, n);
    require_inside(f, &bn)?;
    let res = bfs(f, h, &bn, &[Point::zero(d)], |p| p.sup_norm() == n);
    let (outcome, witness) = match res {
        Ok(path) => (true, Some(Witness::Path(path))),
        Err(_) => (false, None),
    };
    Ok(EventReport { event: EventKind::OneArm, h, n, n_out: None, l: None, ambient: bn, outcome, witness })
}

/// `0 <-> dB_N` while the cluster of 0 inside `B_{N_out}` avoids `dB_{N_out}`.
pub fn truncated_one_arm(f: &FieldSample, h: f64, n: i64, n_out: i64) -> Result<EventReport> {
    if n_out <= n {
        return Err(Error::InvalidInput(format!("N_out={n_out} must exceed N={n}")));
    }
    let d = f.dim();
    let bo = b(d, n_out);
    require_inside(f, &bo)?;
    let reach_out = bfs(f, h, &bo, &[Point::zero(d)], |p| p.sup_norm() == n_out);
    let (outcome, witness) = match reach_out {
        Ok(_) => (false, None),
        Err(_) => match bfs(f, h, &bo, &[Point::zero(d)], |p| p.sup_norm() == n) {
            Ok(path) => (true, Some(Witness::Path(path))),
            Err(_) => (false, None),
        },
    };
    Ok(EventReport { event: EventKind::TruncatedOneArm, h, n, n_out: Some(n_out), l: None, ambient: bo, outcome, witness })
}

/// Clusters of `{phi >= h} ∩ B_2N` meeting both `B_N` and `dB_2N`, one
/// representative (inside `B_N`) per cluster.
pub fn crossing_clusters(f: &FieldSample, h: f64, n: i64) -> Result<Vec<Point>> {
    let d = f.dim();
    let b2 = b(d, 2 * n);
    require_inside(f, &b2)?;
    let lab = label_region(f, h, Adjacency::Nearest, &b2)?;
    let inner = lab.labels_in(&b(d, n));
    let outer = lab.labels_on_boundary();
    let mut reps = Vec::new();
    for l in inner {
        if outer.binary_search(&l).is_ok() {
            let p = b(d, n).iter().find(|p| lab.label_at(p) == l).expect("label present");
            reps.push(p);
        }
    }
    Ok(reps)
}

pub fn loc_uniq(f: &FieldSample, h: f64, n: i64) -> Result<EventReport> {
    let reps = crossing_clusters(f, h, n)?;
    let outcome = reps.len() == 1;
    Ok(EventReport {
        event: EventKind::LocUniq,
        h,
        n,
        n_out: None,
        l: None,
        ambient: b(f.dim(), 2 * n),
        outcome,
        witness: outcome.then_some(Witness::Clusters(reps)),
    })
}

pub fn two_arms(f: &FieldSample, h: f64, n: i64) -> Result<EventReport> {
    let reps = crossing_clusters(f, h, n)?;
    let outcome = reps.len() >= 2;
    Ok(EventReport {
        event: EventKind::TwoArms,
        h,
        n,
        n_out: None,
        l: None,
        ambient: b(f.dim(), 2 * n),
        outcome,
        witness: outcome.then_some(Witness::Clusters(reps)),
    })
}

/// (i) some cluster of `{phi >= h} ∩ B_N` has diameter `>= N/5`;
/// (ii) all clusters of `{phi >= h} ∩ B_N` with diameter `>= N/10` are
/// connected to each other in `{phi >= h} ∩ B_2N`.
pub fn exist_unique_diagnostics(f: &FieldSample, h: f64, n: i64) -> Result<(EventReport, EventReport)> {
    let d = f.dim();
    let bn = b(d, n);
    let b2 = b(d, 2 * n);
    require_inside(f, &b2)?;
    let inner = label_region(f, h, Adjacency::Nearest, &bn)?;
    let outer = label_region(f, h, Adjacency::Nearest, &b2)?;
    let nf = n as f64;
    let big: Vec<u32> = (1..=inner.n_clusters() as u32).filter(|&l| inner.diameter(l) as f64 >= nf / 5.0).collect();
    let medium: Vec<u32> = (1..=inner.n_clusters() as u32).filter(|&l| inner.diameter(l) as f64 >= nf / 10.0).collect();
    let rep = |l: u32| bn.iter().find(|p| inner.label_at(p) == l).expect("label present");
    let exist = !big.is_empty();
    let reps: Vec<Point> = medium.iter().map(|&l| rep(l)).collect();
    let mut outer_labels: Vec<u32> = reps.iter().map(|p| outer.label_at(p)).collect();
    outer_labels.dedup();
    let uniq = outer_labels.len() <= 1;
    Ok((
        EventReport {
            event: EventKind::Existence,
            h,
            n,
            n_out: None,
            l: None,
            ambient: bn,
            outcome: exist,
            witness: exist.then(|| Witness::Clusters(vec![rep(big[0])])),
        },
        EventReport { event: EventKind::Uniqueness, h, n, n_out: None, l: None, ambient: b2, outcome: uniq, witness: Some(Witness::Clusters(reps)) },
    ))
}

/// `F_N^- <-> F_N^+` inside `{phi >= h} ∩ T_N(L)`, faces at `x_1 = 0` and `x_1 = N`.
pub fn tube_crossing(f: &FieldSample, h: f64, n: i64, l: i64) -> Result<EventReport> {
    let d = f.dim();
    let tube = crate::lattice::TubeSpec::new(d, n, l)?;
    let region = tube.region();
    require_inside(f, &region)?;
    let face = tube.face(0);
    let sources: Vec<Point> = face.iter().collect();
    let res = bfs(f, h, &region, &sources, |p| p[0] == n && p.coords()[1..].iter().all(|v| v.abs() <= l));
    let (outcome, witness) = match res {
        Ok(path) => (true, Some(Witness::Path(path))),
        Err(_) => (false, None),
    };
    Ok(EventReport { event: EventKind::TubeCrossing, h, n, n_out: None, l: Some(l), ambient: region, outcome, witness })
}

impl EventReport {
    /// Re-check the witness against the field.
    pub fn verify(&self, f: &FieldSample) -> Result<()> {
        let fail = |m: &str| Err(Error::Invariant(format!("{} witness: {m}", self.event.name())));
        let open = |p: &Point| f.bx.contains(p) && f.values[f.bx.index(p)] >= self.h;
        match (&self.witness, self.outcome) {
            (None, true) => fail("missing for a true outcome"),
            (None, false) => Ok(()),
            (Some(Witness::Path(path)), _) => {
                if path.is_empty() || !path.iter().all(|p| open(p) && self.ambient.contains(p)) {
                    return fail("path leaves the excursion set or the ambient box");
                }
                if !path.windows(2).all(|w| w[0].is_nn(&w[1])) {
                    return fail("path is not nearest-neighbour connected");
                }
                let (s, t) = (path[0], path[path.len() - 1]);
                let ok = match self.event {
                    EventKind::OneArm | EventKind::TruncatedOneArm => s.sup_norm() == 0 && t.sup_norm() == self.n,
                    EventKind::TubeCrossing => s[0] == 0 && t[0] == self.n,
                    _ => false,
                };
                if !ok {
                    return fail("endpoints do not match the event geometry");
                }
                if self.event == EventKind::TruncatedOneArm {
                    let n_out = self.n_out.expect("set");
                    if bfs(f, self.h, &self.ambient, &[s], |p| p.sup_norm() == n_out).is_ok() {
                        return fail("cluster reaches the outer box");
                    }
                }
                Ok(())
            }
            (Some(Witness::Clusters(reps)), _) => {
                if !reps.iter().all(|p| open(p)) {
                    return fail("representative below level");
                }
                let reach = |p: &Point, n: i64| bfs(f, self.h, &self.ambient, &[*p], |q| q.sup_norm() == n).is_ok();
                let connected = |a: &Point, c: &Point| bfs(f, self.h, &self.ambient, &[*a], |q| q == c).is_ok();
                match self.event {
                    EventKind::LocUniq | EventKind::TwoArms => {
                        if !reps.iter().all(|p| p.sup_norm() <= self.n && reach(p, 2 * self.n)) {
                            return fail("representative does not cross the annulus");
                        }
                        for i in 0..reps.len() {
                            for j in i + 1..reps.len() {
                                if connected(&reps[i], &reps[j]) {
                                    return fail("crossing clusters are connected");
                                }
                            }
                        }
                        Ok(())
                    }
                    EventKind::Existence => Ok(()),
                    EventKind::Uniqueness => {
                        if self.outcome && reps.len() > 1 && !reps[1..].iter().all(|p| connected(&reps[0], p)) {
                            return fail("clusters not connected in B_2N");
                        }
                        Ok(())
                    }
                    _ => fail("unexpected witness kind"),
                }
            }
        }
    }
}

/// Monte Carlo truncated two-point function estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoPointEstimate {
    pub mean: f64,
    pub hits: u64,
    pub n: u64,
    pub ci: (f64, f64),
}

/// Frequency of `x <-> y` with the cluster of `x` confined to `B_{N_out}(x)`.
pub fn truncated_two_point(samples: &[FieldSample], h: f64, x: &Point, y: &Point, n_out: i64) -> Result<TwoPointEstimate> {
    let region = BoxSpec::ball(*x, n_out);
    let mut hits = 0u64;
    for f in samples {
        require_inside(f, &region)?;
        if !region.contains(y) {
            continue;
        }
        let escapes = bfs(f, h, &region, &[*x], |p| region.on_boundary(p)).is_ok();
        if escapes {
            continue;
        }
        if bfs(f, h, &region, &[*x], |p| p == y).is_ok() {
            hits += 1;
        }
    }
    let n = samples.len() as u64;
    Ok(TwoPointEstimate { mean: hits as f64 / n.max(1) as f64, hits, n, ci: stats::wilson(hits, n, 1.959963984540054) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Law;

    fn constant(n: i64, v: f64) -> FieldSample {
        let bx = b(3, n);
        FieldSample { bx, values: vec![v; bx.volume()], law: Law::Dirichlet, seed: 0, stream: 0, midpoints: None }
    }

    fn with_open(n: i64, open: impl Fn(&Point) -> bool) -> FieldSample {
        let bx = b(3, n);
        let values = bx.iter().map(|p| if open(&p) { 1.0 } else { -1.0 }).collect();
        FieldSample { bx, values, law: Law::Dirichlet, seed: 0, stream: 0, midpoints: None }
    }

    #[test]
    fn extreme_levels() {
        let f = constant(4, 0.0);
        assert_eq!(label_clusters(&f, f64::NEG_INFINITY, Adjacency::Nearest).n_clusters(), 1);
        assert_eq!(label_clusters(&f, f64::INFINITY, Adjacency::Nearest).n_clusters(), 0);
    }

    #[test]
    fn constant_field_events() {
        let f = constant(8, 0.5);
        let r = one_arm(&f, 0.5, 3).unwrap();
        assert!(r.outcome);
        r.verify(&f).unwrap();
        assert!(!one_arm(&f, 0.6, 3).unwrap().outcome);
        assert!(!truncated_one_arm(&f, 0.5, 2, 4).unwrap().outcome);
        assert!(loc_uniq(&f, 0.5, 4).unwrap().outcome);
        assert!(!two_arms(&f, 0.5, 4).unwrap().outcome);
        let (e, u) = exist_unique_diagnostics(&f, 0.5, 4).unwrap();
        assert!(e.outcome && u.outcome);
        let (e, _) = exist_unique_diagnostics(&f, 1.5, 4).unwrap();
        assert!(!e.outcome);
        let t = tube_crossing(&f, 0.5, 6, 1).unwrap();
        assert!(t.outcome);
        t.verify(&f).unwrap();
    }

    #[test]
    fn segment_cluster_is_truncated_arm() {
        let f = with_open(10, |p| p[1] == 0 && p[2] == 0 && (0..=4).contains(&p[0]));
        for n_out in [5, 7, 10] {
            let r = truncated_one_arm(&f, 0.0, 4, n_out).unwrap();
            assert!(r.outcome);
            r.verify(&f).unwrap();
        }
    }

    #[test]
    fn tubes_in_annulus() {
        let one = with_open(8, |p| p[1] == 0 && p[2] == 0 && p[0] >= 0);
        assert!(!two_arms(&one, 0.0, 4).unwrap().outcome);
        assert!(loc_uniq(&one, 0.0, 4).unwrap().outcome);
        let two = with_open(8, |p| p[2] == 0 && ((p[1] == 0 && p[0] >= 0) || (p[1] == 3 && p[0] <= 0)));
        let r = two_arms(&two, 0.0, 4).unwrap();
        assert!(r.outcome);
        r.verify(&two).unwrap();
        assert!(!loc_uniq(&two, 0.0, 4).unwrap().outcome);
    }

    #[test]
    fn slab_cut_blocks_tube() {
        let f = with_open(8, |p| p[0] != 3);
        assert!(!tube_crossing(&f, 0.0, 6, 1).unwrap().outcome);
    }

    #[test]
    fn two_point_trivial_cases() {
        let f = constant(6, 0.0);
        let x = Point::zero(3);
        let low = truncated_two_point(std::slice::from_ref(&f), -1.0, &x, &x, 3).unwrap();
        assert_eq!(low.hits, 0);
        let high = truncated_two_point(std::slice::from_ref(&f), 1.0, &x, &x, 3).unwrap();
        assert_eq!(high.hits, 0);
    }
}

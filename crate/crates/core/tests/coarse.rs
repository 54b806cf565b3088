use std::collections::HashSet;

use gffperc::coarse::badness::*;
use gffperc::coarse::d3::*;
use gffperc::coarse::d4::*;
use gffperc::coarse::paths::*;
use gffperc::coarse::*;
use gffperc::field::DirichletSampler;
use gffperc::lattice::{Adjacency, BoxSpec, Grid, LatticePath, Point, PointSet, RenormLattice};
use gffperc::rng::stream;
use gffperc::GreenOracle;

fn star_connected(s: &PointSet) -> bool {
    let Some(first) = s.iter().next() else { return true };
    let members: HashSet<Point> = s.iter().copied().collect();
    let mut seen = HashSet::from([*first]);
    let mut stack = vec![*first];
    while let Some(p) = stack.pop() {
        let g = Grid::new(BoxSpec::ball(p, 1));
        for i in 0..g.len() {
            let q = g.point(i);
            if members.contains(&q) && seen.insert(q) {
                stack.push(q);
            }
        }
    }
    seen.len() == members.len()
}

#[test]
fn shell_collections_pass_every_check_on_random_paths() {
    let mut r = stream(11, "coarse-test", 0);
    for kind in LambdaKind::all(0.2) {
        let p = CgParams::new(3, 4, 10, 1200, kind, 0.25, true).unwrap();
        let mut keys = HashSet::new();
        let mut bound = 0.0;
        for _ in 0..60 {
            let path = random_crossing_path(&p.domain(), PathStyle::default(), &mut r).unwrap();
            let c = coarse_grain_d3(&path, &p).unwrap();
            let v = verify_collection(&c, &path);
            assert!(v.passes(), "{}: {:?}", kind.name(), v.failures());
            keys.insert(c.key());
            bound = c.log_family_bound;
        }
        assert!((keys.len() as f64).ln() <= bound);
    }
}

#[test]
fn reversed_paths_give_the_same_collection() {
    let mut r = stream(12, "coarse-test", 0);
    let p = CgParams::new(3, 4, 10, 1200, LambdaKind::Annulus, 0.25, true).unwrap();
    let path = random_crossing_path(&p.domain(), PathStyle::default(), &mut r).unwrap();
    let mut rev = path.points.clone();
    rev.reverse();
    let back = LatticePath::new(rev, path.adjacency).unwrap();
    assert_eq!(coarse_grain_d3(&path, &p).unwrap().points, coarse_grain_d3(&back, &p).unwrap().points);
}

#[test]
fn paths_missing_the_domain_are_rejected() {
    let p = CgParams::new(3, 4, 10, 1200, LambdaKind::Ball, 0.25, true).unwrap();
    let short = LatticePath::new((0..100).map(|t| Point::axis(3, 0, t)).collect(), Adjacency::Nearest).unwrap();
    assert!(coarse_grain_d3(&short, &p).is_err());
}

#[test]
fn porous_bound_is_recorded_and_below_the_line() {
    let o = GreenOracle::new(3).unwrap();
    let p = CgParams::new(3, 4, 4, 480, LambdaKind::Ball, 0.25, true).unwrap();
    let ctx = PorousContext::new(&p, &o).unwrap();
    let mut r = stream(13, "coarse-test", 0);
    let path = random_crossing_path(&p.domain(), PathStyle::default(), &mut r).unwrap();
    let c = coarse_grain_d3(&path, &p).unwrap();
    let rep = ctx.report(&c).unwrap();
    assert!(rep.exhaustive && rep.subsets > 1);
    assert!(rep.sigma_lower > 0.0 && rep.sigma_lower <= ctx.line_capacity * 2.0);
    assert!(rep.porous_ratio > 0.0 && rep.porous_ratio < 1.0);
}

#[test]
fn shape_collections_in_four_dimensions() {
    let mut r = stream(14, "coarse-test", 0);
    for kind in LambdaKind::all(0.2) {
        let p = CgParams::new(4, 4, 1, 8720, kind, 0.25, true).unwrap();
        for _ in 0..3 {
            let path = random_crossing_path(&p.domain(), PathStyle::default(), &mut r).unwrap();
            let out = coarse_grain_d4_detailed(&path, &p).unwrap();
            assert!(out.leaves_cross);
            assert!(out.separations.iter().all(|s| s.ok()));
            let v = verify_collection(&out.collection, &path);
            assert!(v.passes(), "{}: {:?}", kind.name(), v.failures());
        }
    }
}

#[test]
fn shape_trees_are_nested_star_connected_crossings() {
    // the recursion is dimension-free; d = 3 keeps the shapes small enough to materialise
    for (pts, tree) in kappa_instances(3, 3, 1, 3, 5).unwrap() {
        let mut stack = vec![(&tree, None::<PointSet>)];
        while let Some((node, parent)) = stack.pop() {
            let s = node.materialize(&pts).unwrap();
            assert!(star_connected(&s));
            let (c, ct) = (c_box(node.anchor, node.level), c_tilde(node.anchor, node.level));
            assert!(s.iter().any(|p| c.contains(p)));
            assert!(s.iter().any(|p| ct.on_boundary(p)));
            if let Some(par) = &parent {
                assert!(s.iter().all(|p| par.contains(p)));
            }
            assert!(node.slice_crosses(&pts));
            for ch in &node.children {
                stack.push((ch, Some(s.clone())));
            }
        }
        assert!(separations(&tree).iter().all(|s| s.ok()));
        assert_eq!(tree.leaves().len(), 4);
    }
}

#[test]
fn kappa_recursion_in_four_dimensions() {
    let o = GreenOracle::new(4).unwrap();
    let rep = kappa_check(4, 5, 6, 3, 21, &o).unwrap();
    assert_eq!(rep.levels.len(), 2);
    // one leaf: kappa is the smallest single-box capacity
    assert!((rep.levels[0].kappa - rep.base).abs() < 1e-9 * rep.base);
    assert!(rep.levels[1].kappa >= rep.levels[0].kappa);
    assert!(rep.c_two_leaf.is_finite() && rep.c_recursion.is_finite());
}

#[test]
fn singleton_tail_at_zero_is_at_least_half() {
    let lat = RenormLattice::new(3, 2, 4).unwrap();
    let s = DirichletSampler::new(BoxSpec::ball(Point::zero(3), 20)).unwrap();
    let pts = [Point::zero(3)];
    let joint: Vec<f64> = (0..400).map(|i| joint_harmonic_sup(&s.sample(31, i), &pts, &lat).unwrap()).collect();
    let t = &harmonic_collection_tail(&joint, &[0.0], 1.0, 0.0)[0];
    let se = (0.25 / 400.0f64).sqrt();
    assert!(t.p_hat >= 0.5 - 3.0 * se, "{}", t.p_hat);
}

#[test]
fn far_boxes_are_nearly_independent() {
    let lat = RenormLattice::new(3, 2, 4).unwrap();
    let bx = BoxSpec::new(Point::new(&[-24, -24, -24]), Point::new(&[104, 24, 24])).unwrap();
    let s = DirichletSampler::new(bx).unwrap();
    let (a, b) = (Point::zero(3), Point::axis(3, 0, 80));
    let n = 800u64;
    let (mut h1, mut h2, mut h12) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let f = s.sample(32, i);
        let x = joint_harmonic_sup(&f, &[a], &lat).unwrap() >= 0.0;
        let y = joint_harmonic_sup(&f, &[b], &lat).unwrap() >= 0.0;
        h1 += x as u8 as f64;
        h2 += y as u8 as f64;
        h12 += (x && y) as u8 as f64;
    }
    let (p1, p2, p12) = (h1 / n as f64, h2 / n as f64, h12 / n as f64);
    let se = (p12 * (1.0 - p12) / n as f64).sqrt();
    assert!((p12 - p1 * p2).abs() < 4.0 * se, "{p12} vs {p1} * {p2}");
}

#[test]
fn badness_reports_are_reproducible() {
    let p = CgParams::new(3, 4, 1, 40, LambdaKind::Ball, 0.25, true).unwrap();
    let s = DirichletSampler::new(BoxSpec::ball(Point::zero(3), 44)).unwrap();
    let t = Thresholds::new(0.0, -0.5, 0.25).unwrap();
    let mut seen = 0;
    for i in 0..20 {
        let f = s.sample(33, i);
        if let Some(a) = ef_inclusion(&f, &p, t).unwrap() {
            let b = ef_inclusion(&s.sample(33, i), &p, t).unwrap().unwrap();
            assert_eq!(a.report.to_csv(), b.report.to_csv());
            assert!(a.every_site_bad && a.inclusion_holds());
            seen += 1;
        }
    }
    assert!(seen > 0);
}

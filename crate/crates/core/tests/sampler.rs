use gffperc::field::{
    extend_midpoints, extend_midpoints_with, harmonic_decompose, midpoint_variance, BulkSampler, DirichletSampler,
};
use gffperc::lattice::{BoxSpec, Point, RenormLattice};
use gffperc::potential::KilledGreen;
use gffperc::stats;
use gffperc::GreenOracle;
use nalgebra::DMatrix;

fn ball(r: i64) -> BoxSpec {
    BoxSpec::ball(Point::zero(3), r)
}

/// Max |empirical cov - g_U| / SE over all pairs.
fn worst_z(samples: &[Vec<f64>], g: &KilledGreen, bx: &BoxSpec) -> f64 {
    let n = bx.volume();
    let pts: Vec<Point> = bx.iter().collect();
    let cols: Vec<Vec<f64>> = (0..n).map(|i| samples.iter().map(|s| s[i]).collect()).collect();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            let c = stats::covariance(&cols[i], &cols[j]);
            let want = g.get(&pts[i], &pts[j]);
            worst = worst.max((c.mean - want).abs() / c.se);
        }
    }
    worst
}

#[test]
fn spectral_covariance_matches_killed_green() {
    for r in [2, 3] {
        let bx = ball(r);
        let s = DirichletSampler::new(bx).unwrap();
        let samples: Vec<Vec<f64>> = (0..10_000).map(|k| s.sample_values(11, k)).collect();
        let g = KilledGreen::new(&bx.to_set()).unwrap();
        let z = worst_z(&samples, &g, &bx);
        assert!(z < 5.0, "B_{r}: worst z = {z}");
        // centre variance within 3 SE
        let c = bx.index(&Point::zero(3));
        let v = stats::variance_estimate(&samples.iter().map(|s| s[c]).collect::<Vec<_>>());
        assert!(v.within(g.get(&Point::zero(3), &Point::zero(3)), 3.0), "{v:?}");
    }
}

#[test]
fn local_field_has_killed_law_and_independence() {
    let lat = RenormLattice::new(3, 1, 4).unwrap();
    let z0 = Point::zero(3);
    let z1 = Point::axis(3, 0, lat.min_separation());
    let window = BoxSpec::new(Point::new(&[-5, -5, -5]), Point::new(&[z1[0] + 5, 5, 5])).unwrap();
    let s = DirichletSampler::new(window).unwrap();
    let u0 = lat.u_box(z0);
    let probes: Vec<Point> = vec![Point::zero(3), Point::new(&[1, 0, 0]), Point::new(&[-2, 1, 0]), Point::new(&[3, 3, 3]), Point::new(&[0, -3, 2])];
    let reps = 10_000;
    let mut psi0 = vec![Vec::with_capacity(reps); probes.len()];
    let mut psi1 = vec![Vec::with_capacity(reps); probes.len()];
    let mut xi0 = vec![Vec::with_capacity(reps); probes.len()];
    let mut xi1 = vec![Vec::with_capacity(reps); probes.len()];
    for k in 0..reps {
        let f = s.sample(5, k as u64);
        let a = harmonic_decompose(&f, z0, &lat).unwrap();
        let b = harmonic_decompose(&f, z1, &lat).unwrap();
        for (i, p) in probes.iter().enumerate() {
            psi0[i].push(a.psi_at(p));
            xi0[i].push(a.xi_at(p).unwrap());
            let q = *p + z1;
            psi1[i].push(b.psi_at(&q));
            xi1[i].push(b.xi_at(&q).unwrap());
        }
    }
    let g = KilledGreen::new(&u0.to_set()).unwrap();
    for i in 0..probes.len() {
        for j in i..probes.len() {
            let c = stats::covariance(&psi0[i], &psi0[j]);
            assert!(c.within(g.get(&probes[i], &probes[j]), 5.0), "psi law ({i},{j}): {c:?}");
        }
    }
    // cross-correlations vanish: psi^z0 vs psi^z1, psi^z0 vs xi^z0 and xi^z1
    let mut worst: f64 = 0.0;
    for i in 0..probes.len() {
        for j in 0..probes.len() {
            for other in [&psi1[j], &xi0[j], &xi1[j]] {
                let r = stats::correlation(&psi0[i], other);
                worst = worst.max(r.mean.abs() / r.se);
            }
        }
    }
    // 75 correlated pairs: a 4 SE envelope keeps the family-wise error small
    assert!(worst < 4.0, "worst cross-correlation z = {worst}");
}

#[test]
fn midpoint_residual_is_iid_half() {
    let bx = BoxSpec::new(Point::new(&[0, 0, 0]), Point::new(&[49, 49, 49])).unwrap();
    let f = DirichletSampler::new(bx).unwrap().sample(17, 0);
    let m = extend_midpoints(&f, 17);
    assert_eq!(m.sigma2, 1.5);
    let ph = m.psi_hat(&f);
    let vals: Vec<f64> = ph.iter().flatten().copied().collect();
    assert!(vals.len() >= 100_000);
    let v = stats::variance_estimate(&vals);
    assert!(v.within(0.5, 3.0), "{v:?}");
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for p in bx.iter() {
        let q = p + Point::axis(3, 0, 1);
        if let (Some(x), Some(y)) = (ph[bx.index(&p)], bx.contains(&q).then(|| ph[bx.index(&q)]).flatten()) {
            a.push(x);
            b.push(y);
        }
    }
    let r = stats::correlation(&a, &b);
    assert!(r.within(0.0, 3.0), "{r:?}");
    // vertex values untouched
    assert!(f.values.iter().zip(&f.values).all(|(x, y)| x == y));
}

#[test]
fn midpoint_variance_is_unique_decorrelating_value() {
    // Cov(psi^_x, psi^_y) = 1/4 ((I-P) G (I-P))(x,y) + sigma^2 shared(x,y) / (2d)^2
    let bx = ball(3);
    let set = bx.to_set();
    let g = KilledGreen::new(&set).unwrap();
    let n = set.len();
    let d = 3;
    let mut a = DMatrix::<f64>::identity(n, n);
    for (i, p) in set.iter().enumerate() {
        for q in p.nn_neighbors() {
            if let Some(j) = set.position(&q) {
                a[(i, j)] -= 1.0 / 6.0;
            }
        }
    }
    let core = &a * g.matrix() * &a;
    let x = set.position(&Point::zero(3)).unwrap();
    let y = set.position(&Point::axis(3, 0, 1)).unwrap();
    let cov = |s2: f64, i: usize, j: usize| {
        let shared = if i == j { 2.0 * d as f64 } else { 1.0 };
        0.25 * core[(i, j)] + s2 * shared / (4.0 * (d * d) as f64)
    };
    let s2 = midpoint_variance(d);
    assert!((cov(s2, x, x) - 0.5).abs() < 1e-12);
    assert!(cov(s2, x, y).abs() < 1e-12);
    for other in [s2 - 0.25, s2 + 0.25] {
        assert!(cov(other, x, y).abs() > 1e-3);
    }
    // and the sampler pipeline agrees with the formula empirically for a wrong sigma
    let f = DirichletSampler::new(BoxSpec::new(Point::zero(3), Point::splat(3, 39)).unwrap()).unwrap().sample(3, 1);
    let m = extend_midpoints_with(&f, 3, 0.5);
    let vals: Vec<f64> = m.psi_hat(&f).into_iter().flatten().collect();
    let v = stats::variance_estimate(&vals);
    assert!(v.within(0.25 + 0.5 / 6.0, 4.0), "{v:?}");
}

#[test]
fn bulk_bias_shrinks_with_enlargement() {
    let g0 = GreenOracle::new(3).unwrap().value(&Point::zero(3)).unwrap();
    let mut fitted = Vec::new();
    for n in [4, 8] {
        let b2 = BulkSampler::new(ball(n), 2, g0).unwrap();
        let b4 = BulkSampler::new(ball(n), 4, g0).unwrap();
        assert!(b4.bias_bound() < b2.bias_bound());
        for (r, s) in [(2, &b2), (4, &b4)] {
            fitted.push(s.bias_bound() * (r * n) as f64);
        }
        // restriction is pointwise equal to the parent
        let f = b2.sample(1, 0);
        let p = b2.sample_parent(1, 0);
        for q in ball(n).iter() {
            assert_eq!(f.get(&q), p.get(&q));
        }
    }
    // bias <= C / (R N) with the fitted C (recorded: C <= 1.2)
    let c = fitted.iter().copied().fold(0.0, f64::max);
    assert!(c <= 1.2, "{fitted:?}");
}

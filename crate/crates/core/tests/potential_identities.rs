use gffperc::lattice::{inner_boundary, BoxSpec, Point, PointSet};
use gffperc::potential::{
    capacity, capacity_bounds, equilibrium_measure, hitting_matrix, hitting_probability, variational_energy, Kernel, KilledGreen,
};
use gffperc::GreenOracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `g(0)` in d=3 from return probabilities: `p_2n = C(2n,n)/4^n *
/// sum_k C(n,k)^2 C(2k,k) / 9^n` summed exactly to `M`, tail from a fitted
/// expansion `2 (3/(4 pi n))^{3/2} (1 + a/n + b/n^2 + c/n^3)`.
fn green_origin_from_returns(m: usize) -> f64 {
    let mut p = vec![1.0f64];
    let mut central = 1.0f64;
    for n in 1..=m {
        central *= (2 * n - 1) as f64 / (2 * n) as f64;
        let mut logs = Vec::with_capacity(n + 1);
        let mut lt = -(n as f64) * 9f64.ln();
        logs.push(lt);
        for k in 0..n {
            let r = ((n - k) as f64 / (k + 1) as f64).powi(2) * ((2 * k + 1) * (2 * k + 2)) as f64 / ((k + 1) * (k + 1)) as f64;
            lt += r.ln();
            logs.push(lt);
        }
        let mx = logs.iter().copied().fold(f64::MIN, f64::max);
        let s: f64 = logs.iter().map(|l| (l - mx).exp()).sum();
        p.push(central * (mx.exp() * s));
    }
    let lead = |n: f64| 2.0 * (3.0 / (4.0 * std::f64::consts::PI * n)).powf(1.5);
    // fit 1 + a/n + b/n^2 + c/n^3 through three exact points
    let pts: Vec<usize> = vec![m / 4, m / 2, m];
    let mut a = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for (r, &n) in pts.iter().enumerate() {
        let nf = n as f64;
        a[r] = [1.0 / nf, 1.0 / (nf * nf), 1.0 / (nf * nf * nf)];
        rhs[r] = p[n] / lead(nf) - 1.0;
    }
    let coef = solve3(a, rhs);
    let q = (m + 1) as f64;
    let k = 2.0 * (3.0 / (4.0 * std::f64::consts::PI)).powf(1.5);
    let tail = k * (hurwitz(1.5, q) + coef[0] * hurwitz(2.5, q) + coef[1] * hurwitz(3.5, q) + coef[2] * hurwitz(4.5, q));
    p.iter().sum::<f64>() + tail
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        out[c] = det(m) / d;
    }
    out
}

/// Hurwitz zeta `sum_{j>=0} (q+j)^{-s}` by Euler-Maclaurin (q large).
fn hurwitz(s: f64, q: f64) -> f64 {
    let bern = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0];
    let mut v = q.powf(1.0 - s) / (s - 1.0) + 0.5 * q.powf(-s);
    let mut fact = 1.0;
    let mut rising = s;
    for (k, b) in bern.iter().enumerate() {
        let k2 = 2 * (k + 1);
        fact *= ((k2 - 1) * k2) as f64;
        v += b / fact * rising * q.powf(-s - k2 as f64 + 1.0);
        rising *= (s + k2 as f64 - 1.0) * (s + k2 as f64);
    }
    v
}

#[test]
fn green_origin_matches_return_probability_oracle() {
    let oracle = green_origin_from_returns(2000);
    let o = GreenOracle::new(3).unwrap();
    let g0 = o.value(&Point::zero(3)).unwrap();
    assert!((g0 - oracle).abs() < 1e-6, "quadrature {g0} vs returns {oracle}");
    let k = PointSet::from_points(3, [Point::zero(3)]).unwrap();
    let cap = capacity(&k, Kernel::Free(&o), true).unwrap().value;
    assert!((cap * oracle - 1.0).abs() < 1e-5);
}

fn random_instance(rng: &mut ChaCha8Rng) -> (PointSet, PointSet, PointSet) {
    // U: a box with random holes away from K, K ⊂ K' ⊂ U
    let r = rng.random_range(2..=3);
    let bx = BoxSpec::ball(Point::zero(3), r);
    let u = bx.to_set().filter(|p| p.sup_norm() <= 1 || rng_hash(p, r) % 7 != 0);
    let pts: Vec<Point> = u.iter().copied().collect();
    let kp_size = rng.random_range(2..=8);
    let mut kp = Vec::new();
    while kp.len() < kp_size {
        let p = pts[rng.random_range(0..pts.len())];
        if !kp.contains(&p) {
            kp.push(p);
        }
    }
    let k_size = rng.random_range(1..kp_size);
    let k = PointSet::from_points(3, kp[..k_size].iter().copied()).unwrap();
    let kp = PointSet::from_points(3, kp).unwrap();
    (k, kp, u)
}

fn rng_hash(p: &Point, salt: i64) -> u64 {
    let mut h = salt as u64 ^ 0x9e3779b97f4a7c15;
    for &c in p.coords() {
        h = (h ^ c as u64).wrapping_mul(0x100000001b3);
    }
    h >> 7
}

#[test]
fn exact_identities_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let (k, kp, u) = random_instance(&mut rng);
        let g = KilledGreen::new(&u).unwrap();
        let kern = Kernel::Killed(&g);
        let e = equilibrium_measure(&k, kern).unwrap();
        let ep = equilibrium_measure(&kp, kern).unwrap();

        // last exit: P_x[H_K < T_U] = sum_y g_U(x,y) e(y)
        let h = hitting_probability(&k, &u).unwrap();
        for (x, hx) in u.iter().zip(&h) {
            let s: f64 = e.support.iter().zip(&e.weights).map(|(y, w)| g.get(x, y) * w).sum();
            assert!((s - hx).abs() < 1e-8);
        }

        // sweeping: e_K(y) = sum_x e_K'(x) P_x[H_K < T_U, X_{H_K} = y]
        let hm = hitting_matrix(&k, &u).unwrap();
        for (j, y) in k.iter().enumerate() {
            let s: f64 = u.iter().enumerate().map(|(r, x)| ep.weight(x) * hm[(r, j)]).sum();
            assert!((s - e.weight(y)).abs() < 1e-8);
        }
        // summed sweeping
        let hit: f64 = u.iter().zip(&h).map(|(x, hx)| ep.weight(x) / ep.capacity * hx).sum();
        assert!((e.capacity - ep.capacity * hit).abs() < 1e-8);

        // variational optimum
        let en = variational_energy(&e.normalized(), kern).unwrap();
        assert!((1.0 / en - e.capacity).abs() < 1e-8);

        // sandwich
        let (lo, hi) = capacity_bounds(&k, kern).unwrap();
        assert!(lo <= e.capacity + 1e-12 && e.capacity <= hi + 1e-12);

        // support in the inner boundary
        let bd = inner_boundary(&k);
        assert!(e.support.iter().all(|p| bd.contains(p) || k.len() == 1));
    }
}

#[test]
fn uniform_measure_energy_bounds_tube_capacity() {
    let o = GreenOracle::new(3).unwrap();
    let t = gffperc::lattice::segment(3, 8);
    let nu: Vec<(Point, f64)> = t.iter().map(|p| (*p, 1.0 / t.len() as f64)).collect();
    let e = variational_energy(&nu, Kernel::Free(&o)).unwrap();
    let cap = capacity(&t, Kernel::Free(&o), false).unwrap().value;
    assert!(1.0 / e <= cap);
    let bad: Vec<(Point, f64)> = t.iter().map(|p| (*p, 1.0)).collect();
    assert!(variational_energy(&bad, Kernel::Free(&o)).is_err());
}

#[test]
fn ball_capacity_linear_in_radius() {
    let o = GreenOracle::new(3).unwrap();
    let mut ratios = Vec::new();
    for n in 1..=8 {
        let b = BoxSpec::ball(Point::zero(3), n).to_set();
        let c = capacity(&b, Kernel::Free(&o), false).unwrap().value;
        ratios.push(c / n as f64);
    }
    let lo = ratios.iter().copied().fold(f64::MAX, f64::min);
    let hi = ratios.iter().copied().fold(f64::MIN, f64::max);
    // recorded constants: c = 2.5, C = 4.0 (sup-norm balls)
    assert!(lo >= 2.5 && hi <= 4.0, "{ratios:?}");
}

fn small_set() -> impl Strategy<Value = Vec<(i64, i64, i64)>> {
    prop::collection::vec((-3i64..=3, -3i64..=3, -3i64..=3), 1..10)
}

fn to_set(v: &[(i64, i64, i64)]) -> PointSet {
    PointSet::from_points(3, v.iter().map(|&(a, b, c)| Point::new(&[a, b, c]))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn capacity_increasing_in_k(a in small_set(), extra in small_set()) {
        let o = GreenOracle::new(3).unwrap();
        let k = to_set(&a);
        let kp = k.union(&to_set(&extra));
        let c = capacity(&k, Kernel::Free(&o), false).unwrap().value;
        let cp = capacity(&kp, Kernel::Free(&o), false).unwrap().value;
        prop_assert!(c <= cp + 1e-10);
    }

    #[test]
    fn capacity_decreasing_in_u(a in prop::collection::vec((-1i64..=1, -1i64..=1, -1i64..=1), 1..6), r in 2i64..=3) {
        let k = to_set(&a);
        let u_small = BoxSpec::ball(Point::zero(3), 1).to_set().union(&k);
        let u_big = BoxSpec::ball(Point::zero(3), r).to_set();
        let gs = KilledGreen::new(&u_small).unwrap();
        let gb = KilledGreen::new(&u_big).unwrap();
        let cs = capacity(&k, Kernel::Killed(&gs), false).unwrap().value;
        let cb = capacity(&k, Kernel::Killed(&gb), false).unwrap().value;
        prop_assert!(cs >= cb - 1e-10);
    }

    #[test]
    fn green_symmetries(x in -20i64..20, y in -20i64..20, z in -20i64..20) {
        let o = GreenOracle::new(3).unwrap();
        let g = o.value(&Point::new(&[x, y, z])).unwrap();
        prop_assert!(g > 0.0);
        prop_assert_eq!(g, o.value(&Point::new(&[-x, y, -z])).unwrap());
        prop_assert_eq!(g, o.value(&Point::new(&[z, x, y])).unwrap());
    }
}

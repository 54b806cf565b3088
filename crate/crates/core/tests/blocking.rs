use std::collections::VecDeque;

use gffperc::lattice::{all_blocking_layers, verify_layers, BoxSpec, Grid, Point, PointSet};
use proptest::prelude::*;

/// Fewest Sigma points on a *-path from `u` to the inner boundary of `v`
/// (0-1 breadth-first search).
fn min_sigma_count(sigma: &PointSet, u: &PointSet, v: &BoxSpec) -> usize {
    let g = Grid::new(*v);
    let cost = |i: usize| sigma.contains(&g.point(i)) as usize;
    let mut dist = vec![usize::MAX; g.len()];
    let mut dq = VecDeque::new();
    for p in u.iter() {
        let i = g.index(p).unwrap();
        dist[i] = 0;
        dq.push_front(i);
    }
    while let Some(i) = dq.pop_front() {
        let di = dist[i];
        g.for_each_star(i, |j| {
            let c = cost(j);
            if di + c < dist[j] {
                dist[j] = di + c;
                if c == 0 {
                    dq.push_front(j);
                } else {
                    dq.push_back(j);
                }
            }
        });
    }
    (0..g.len()).filter(|&i| v.on_boundary(&g.point(i))).map(|i| dist[i]).min().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn peeled_layers_match_the_path_minimum(bits in proptest::collection::vec(0u8..100, 11 * 11 * 11), density in 20u8..80) {
        let v = BoxSpec::ball(Point::zero(3), 5);
        let u = PointSet::from_points(3, [Point::zero(3)]).unwrap();
        let pts: Vec<Point> = v.iter().zip(&bits).filter(|(p, b)| **b < density && p.sup_norm() > 0).map(|(p, _)| p).collect();
        let sigma = PointSet::from_points(3, pts).unwrap();
        let layers = all_blocking_layers(&sigma, &u, &v).unwrap();
        verify_layers(&layers, &sigma, &u).unwrap();
        prop_assert_eq!(layers.len(), min_sigma_count(&sigma, &u, &v));
    }
}

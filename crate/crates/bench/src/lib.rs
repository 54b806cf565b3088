//! Shared fixtures for the kernel benchmarks.

use gffperc::lattice::{BoxSpec, Point, PointSet};

pub fn ball(d: usize, r: i64) -> BoxSpec {
    BoxSpec::ball(Point::zero(d), r)
}

/// The segment {0, ..., n-1} e_1 in Z^d.
pub fn segment(d: usize, n: i64) -> PointSet {
    PointSet::from_points(d, (0..n).map(|t| Point::axis(d, 0, t))).expect("segment")
}

//! Random crossing paths of `Lambda_N`, used to exercise the coarse-graining
//! schemes on geometries other than straight lines.

use rand::Rng as _;

use super::Lambda;
use crate::error::{Error, Result};
use crate::lattice::{Adjacency, BoxSpec, LatticePath, Point};
use crate::rng::Rng;

/// Shape of the generated walk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathStyle {
    /// Probability of keeping the current heading.
    pub persistence: f64,
    /// Probability that a new heading points away from the centre of `V`.
    pub outward: f64,
    /// Probability of a diagonal (*-) step.
    pub star: f64,
}

impl Default for PathStyle {
    fn default() -> Self {
        PathStyle { persistence: 0.85, outward: 0.7, star: 0.1 }
    }
}

/// Step budget in units of the side of `V` before a walk is restarted.
const STEP_BUDGET: i64 = 400;
const MAX_RESTARTS: usize = 100;

/// Walk from a random point of the inner boundary of `U` until it first hits
/// the inner boundary of `V`. The walk never leaves `V`.
pub fn random_crossing_path(dom: &Lambda, style: PathStyle, rng: &mut Rng) -> Result<LatticePath> {
    random_box_crossing(&dom.inner(), &dom.outer(), style, rng)
}

/// Same walk for an arbitrary pair of boxes `U ⊂ V`.
pub fn random_box_crossing(u: &BoxSpec, v: &BoxSpec, style: PathStyle, rng: &mut Rng) -> Result<LatticePath> {
    let d = v.dim();
    let scale = (0..d).map(|i| v.extent(i)).max().unwrap_or(1) as i64;
    let centre: Vec<f64> = (0..d).map(|i| 0.5 * (v.lo[i] + v.hi[i]) as f64).collect();
    for _ in 0..MAX_RESTARTS {
        let mut x = random_face_point(u, rng);
        let mut pts = vec![x];
        let mut heading = Point::axis(d, rng.random_range(0..d), if rng.random_bool(0.5) { 1 } else { -1 });
        let mut used_star = false;
        let budget = STEP_BUDGET * scale.max(8);
        for _ in 0..budget {
            if v.on_boundary(&x) && pts.len() > 1 {
                let adj = if used_star { Adjacency::Star } else { Adjacency::Nearest };
                return LatticePath::new(pts, adj);
            }
            let step = if rng.random_bool(style.star) {
                used_star = true;
                loop {
                    let s = Point::new(&(0..d).map(|_| rng.random_range(-1..=1)).collect::<Vec<_>>());
                    if s.sup_norm() == 1 {
                        break s;
                    }
                }
            } else {
                if !rng.random_bool(style.persistence) {
                    let i = rng.random_range(0..d);
                    let out = if x[i] as f64 >= centre[i] { 1 } else { -1 };
                    let sgn = if rng.random_bool(style.outward) { out } else if rng.random_bool(0.5) { 1 } else { -1 };
                    heading = Point::axis(d, i, sgn);
                }
                heading
            };
            let y = x + step;
            if !v.contains(&y) {
                heading = Point::axis(d, rng.random_range(0..d), if rng.random_bool(0.5) { 1 } else { -1 });
                continue;
            }
            x = y;
            pts.push(x);
        }
    }
    Err(Error::Invariant(format!("no crossing from {}..{} to the boundary of {}..{} within the step budget", u.lo, u.hi, v.lo, v.hi)))
}

/// A point of the inner boundary of `b`: uniform in the box, then one
/// coordinate moved to a face.
fn random_face_point(b: &BoxSpec, rng: &mut Rng) -> Point {
    let d = b.dim();
    let mut x = Point::new(&(0..d).map(|i| rng.random_range(b.lo[i]..=b.hi[i])).collect::<Vec<_>>());
    let i = rng.random_range(0..d);
    x.set(i, if rng.random_bool(0.5) { b.lo[i] } else { b.hi[i] });
    x
}

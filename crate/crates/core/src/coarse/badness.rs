//! psi-bad / xi-bad classification of collection sites and the tail of the
//! joint harmonic-average event.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::d3::coarse_grain_d3;
use super::d4::coarse_grain_d4;
use super::{AdmissibleCollection, CgParams, LambdaKind};
use crate::error::{Error, Result};
use crate::excursion::{one_arm, Witness};
use crate::field::{harmonic_decompose, harmonic_sup, DecompositionRecord, FieldSample};
use crate::green::GreenOracle;
use crate::lattice::{Adjacency, Grid, LatticePath, Point, PointSet, RenormLattice};
use crate::potential::capacity_free;
use crate::stats;

/// Thresholds of the classification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Thresholds {
    pub h: f64,
    pub h_prime: f64,
    pub eps: f64,
}

impl Thresholds {
    pub fn new(h: f64, h_prime: f64, eps: f64) -> Result<Thresholds> {
        if !(h > h_prime && eps > 0.0 && eps < h - h_prime) {
            return Err(Error::InvalidInput(format!("need h > h' and 0 < eps < h - h', got h={h}, h'={h_prime}, eps={eps}")));
        }
        Ok(Thresholds { h, h_prime, eps })
    }

    /// Level of the local-field crossing.
    pub fn psi_level(&self) -> f64 {
        self.h_prime + self.eps / 4.0
    }

    /// Level of the harmonic-average exceedance.
    pub fn xi_level(&self) -> f64 {
        self.h - self.h_prime - self.eps / 4.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SiteFlags {
    pub z: Point,
    pub psi_bad: bool,
    pub xi_bad: bool,
    pub xi_sup: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BadnessReport {
    pub collection: String,
    pub field: String,
    pub thresholds: Thresholds,
    pub rho: f64,
    pub relaxed: bool,
    pub sites: Vec<SiteFlags>,
}

impl BadnessReport {
    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn psi_count(&self) -> usize {
        self.sites.iter().filter(|s| s.psi_bad).count()
    }

    pub fn xi_count(&self) -> usize {
        self.sites.iter().filter(|s| s.xi_bad).count()
    }

    /// `ceil(rho n)`.
    pub fn rho_n(&self) -> usize {
        (self.rho * self.n() as f64).ceil() as usize
    }

    /// At least `ceil(rho n)` psi-bad sites.
    pub fn e_holds(&self) -> bool {
        self.psi_count() >= self.rho_n()
    }

    /// At least `n - ceil(rho n)` xi-bad sites.
    pub fn f_holds(&self) -> bool {
        self.xi_count() >= self.n() - self.rho_n().min(self.n())
    }

    pub fn every_site_bad(&self) -> bool {
        self.sites.iter().all(|s| s.psi_bad || s.xi_bad)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("z,psi_bad,xi_bad,xi_sup,h,h_prime,eps,relaxed,collection,field\n");
        for f in &self.sites {
            let z: Vec<String> = f.z.coords().iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                z.join(" "),
                f.psi_bad,
                f.xi_bad,
                f.xi_sup,
                self.thresholds.h,
                self.thresholds.h_prime,
                self.thresholds.eps,
                self.relaxed,
                self.collection,
                self.field
            );
        }
        s
    }
}

/// Nearest-neighbour crossing of `C~_z` from `C_z` in `{psi >= level}`.
pub fn psi_crossing(rec: &DecompositionRecord, lat: &RenormLattice, level: f64) -> bool {
    let (c, ct) = (lat.c_box(rec.z), lat.c_tilde(rec.z));
    let g = Grid::new(ct);
    let open = |i: usize| rec.psi_at(&g.point(i)) >= level;
    let mut seen = vec![false; g.len()];
    let mut q = VecDeque::new();
    for p in c.iter() {
        let i = g.index(&p).expect("C inside C~");
        if open(i) {
            seen[i] = true;
            q.push_back(i);
        }
    }
    while let Some(i) = q.pop_front() {
        if g.on_boundary_idx(i) {
            return true;
        }
        g.for_each_nn(i, |j| {
            if !seen[j] && open(j) {
                seen[j] = true;
                q.push_back(j);
            }
        });
    }
    false
}

/// Classify every site of `c` on the sample `f`.
pub fn classify_badness(f: &FieldSample, c: &AdmissibleCollection, t: Thresholds) -> Result<BadnessReport> {
    let lat = c.params.lattice();
    for z in &c.points {
        let need = lat.u_box(*z).enlarge(1);
        if !f.bx.contains_box(&need) && !f.law.zero_outside() {
            return Err(Error::InvalidInput(format!("U_z of {z} and its boundary are not inside the sample box")));
        }
    }
    let sites = c
        .points
        .par_iter()
        .map(|z| {
            let rec = harmonic_decompose(f, *z, &lat)?;
            let xi_sup = harmonic_sup(&rec, &lat.d_box(*z), false)?;
            Ok(SiteFlags { z: *z, psi_bad: psi_crossing(&rec, &lat, t.psi_level()), xi_bad: xi_sup >= t.xi_level(), xi_sup })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BadnessReport { collection: c.digest()[..16].to_string(), field: f.id(), thresholds: t, rho: c.params.rho, relaxed: c.params.relaxed, sites })
}

/// Outcome of the E/F check on one sample.
#[derive(Clone, Debug, Serialize)]
pub struct EfOutcome {
    pub report: BadnessReport,
    pub e: bool,
    pub f: bool,
    pub every_site_bad: bool,
}

impl EfOutcome {
    pub fn inclusion_holds(&self) -> bool {
        self.e || self.f
    }
}

/// On a sample where `0 <-> dB_N` in `{phi >= h}`, coarse-grain the witness
/// path and evaluate `E ∪ F`; `None` when the one-arm event fails.
pub fn ef_inclusion(f: &FieldSample, p: &CgParams, t: Thresholds) -> Result<Option<EfOutcome>> {
    if p.lambda != LambdaKind::Ball {
        return Err(Error::InvalidInput("the one-arm event is a crossing of the ball".into()));
    }
    let ev = one_arm(f, t.h, p.n)?;
    let Some(Witness::Path(pts)) = ev.witness.filter(|_| ev.outcome) else {
        return Ok(None);
    };
    let path = LatticePath::new(pts, Adjacency::Nearest)?;
    let c = if p.d == 3 { coarse_grain_d3(&path, p)? } else { coarse_grain_d4(&path, p)? };
    let report = classify_badness(f, &c, t)?;
    Ok(Some(EfOutcome { e: report.e_holds(), f: report.f_holds(), every_site_bad: report.every_site_bad(), report }))
}

/// Tail of `∩_z {sup_{D_z} xi^z >= a}` against the Gaussian bound.
#[derive(Clone, Debug, Serialize)]
pub struct TailEstimate {
    pub a: f64,
    pub samples: usize,
    pub hits: usize,
    pub p_hat: f64,
    /// Upper end of the 95% CI; the rule of three when there are no hits.
    pub p_upper: f64,
    pub one_sided: bool,
    pub capacity: f64,
    pub slack: f64,
    /// Smallest `alpha` with `log p_upper <= -(a - slack)^2 cap / (2 alpha)`.
    pub alpha_hat: f64,
}

/// Per-sample minimum over the collection of `sup_{D_z} xi^z`; the joint
/// event at level `a` is `min >= a`.
pub fn joint_harmonic_sup(f: &FieldSample, points: &[Point], lat: &RenormLattice) -> Result<f64> {
    let mut m = f64::INFINITY;
    for z in points {
        let rec = harmonic_decompose(f, *z, lat)?;
        m = m.min(harmonic_sup(&rec, &lat.d_box(*z), false)?);
    }
    Ok(m)
}

/// `cap(Sigma)` for `Sigma` the union of the `C_z`.
pub fn sigma_capacity(points: &[Point], lat: &RenormLattice, oracle: &GreenOracle) -> Result<f64> {
    let mut set = PointSet::empty(lat.d);
    for z in points {
        set = set.union(&lat.c_box(*z).to_set());
    }
    Ok(capacity_free(&set, oracle)?.value)
}

/// Tail estimates at each level from precomputed per-sample joint sups.
pub fn harmonic_collection_tail(joint: &[f64], levels: &[f64], capacity: f64, slack: f64) -> Vec<TailEstimate> {
    let n = joint.len();
    levels
        .iter()
        .map(|&a| {
            let hits = joint.iter().filter(|&&v| v >= a).count();
            let (p_upper, one_sided) = if hits == 0 { (3.0 / n as f64, true) } else { (stats::wilson(hits as u64, n as u64, 1.96).1, false) };
            let excess = (a - slack).max(0.0);
            let alpha_hat = if p_upper >= 1.0 { f64::INFINITY } else { excess * excess * capacity / (-2.0 * p_upper.ln()) };
            TailEstimate { a, samples: n, hits, p_hat: hits as f64 / n as f64, p_upper, one_sided, capacity, slack, alpha_hat }
        })
        .collect()
}

//! Cameron–Martin tilts of the Dirichlet field and importance sampling.
//!
//! Shifting `P_U` by `f = delta * P[H_K < T_U]` has density
//! `exp(delta <e_{K,U}, phi> - delta^2 cap_U(K) / 2)` with respect to `P_U`,
//! so events that are rare under `P_U` can be estimated from tilted samples
//! reweighted by the inverse density.

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{DirichletSampler, FieldSample, Law};
use crate::lattice::{BoxSpec, Point, PointSet};
use crate::potential::{describe_set, hitting_function, EquilibriumMeasure};
use crate::rng;
use crate::stats;

/// Harmonic residual accepted for the shift.
pub const HARMONIC_TOL: f64 = 1e-10;
/// Below this effective sample size the estimate is unreliable.
pub const ESS_UNRELIABLE: f64 = 10.0;
pub const ESS_WARN: f64 = 100.0;
/// Excess kurtosis of the weighted indicators above which the CI is
/// bootstrapped instead of normal.
pub const KURTOSIS_BOOTSTRAP: f64 = 10.0;
pub const BOOTSTRAP_REPS: usize = 2000;

#[derive(Clone, Debug)]
pub struct TiltSpec {
    pub k: PointSet,
    pub u: BoxSpec,
    pub delta: f64,
    /// `f` row-major over `u`.
    pub shift: Vec<f64>,
    pub eq: EquilibriumMeasure,
    pub capacity: f64,
    /// `delta^2 cap_U(K) / 2`, also the relative entropy of the tilt.
    pub log_normalizer: f64,
    pub harmonic_residual: f64,
}

/// Build the tilt and check its invariants.
pub fn make_tilt(k: &PointSet, u: BoxSpec, delta: f64) -> Result<TiltSpec> {
    if !delta.is_finite() {
        return Err(Error::InvalidInput(format!("tilt height {delta}")));
    }
    if k.dim() != u.dim() {
        return Err(Error::DimensionMismatch { expected: u.dim(), got: k.dim() });
    }
    let uset = u.to_set();
    let hf = hitting_function(k, &uset)?;
    let residual = hf.harmonic_residual();
    if residual > HARMONIC_TOL {
        return Err(Error::NoConvergence { iterations: 0, residual });
    }
    let mut shift = Vec::with_capacity(u.volume());
    for p in u.iter() {
        let h = hf.get(&p);
        if !(-1e-9..=1.0 + 1e-9).contains(&h) {
            return Err(Error::Invariant(format!("hitting probability {h} at {p}")));
        }
        shift.push(delta * h.clamp(0.0, 1.0));
    }
    for p in k.iter() {
        if shift[u.index(p)] != delta {
            return Err(Error::Invariant(format!("shift differs from delta at {p}")));
        }
    }
    let eq = hf.equilibrium(k, describe_set(&uset))?;
    let capacity = eq.capacity;
    Ok(TiltSpec {
        k: k.clone(),
        u,
        delta,
        shift,
        eq,
        capacity,
        log_normalizer: 0.5 * delta * delta * capacity,
        harmonic_residual: residual,
    })
}

impl TiltSpec {
    pub fn shift_at(&self, p: &Point) -> f64 {
        if self.u.contains(p) {
            self.shift[self.u.index(p)]
        } else {
            0.0
        }
    }

    /// Relative entropy `H(P~ | P) = delta^2 cap / 2`.
    pub fn entropy(&self) -> f64 {
        self.log_normalizer
    }

    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.k.to_text().as_bytes());
        let digest = hex::encode(&h.finalize()[..6]);
        format!("tilt:K{}-{digest}:U{}..{}:delta{}", self.k.len(), self.u.lo, self.u.hi, self.delta)
    }

    /// `<e_{K,U}, phi>`.
    pub fn pairing(&self, f: &FieldSample) -> f64 {
        self.eq.support.iter().zip(&self.eq.weights).map(|(p, w)| w * f.get(p).unwrap_or(0.0)).sum()
    }

    /// `log dP~/dP` at `phi`.
    pub fn log_density(&self, f: &FieldSample) -> f64 {
        self.delta * self.pairing(f) - self.log_normalizer
    }

    /// `log dP/dP~` at a tilted sample.
    pub fn log_weight(&self, f: &FieldSample) -> f64 {
        -self.log_density(f)
    }

    pub fn sampler(&self) -> Result<DirichletSampler> {
        DirichletSampler::new(self.u)
    }

    /// Tilted sample from a prepared sampler on `U`.
    pub fn sample_with(&self, s: &DirichletSampler, seed: u64, stream: u64) -> FieldSample {
        let mut f = s.sample(seed, stream);
        if self.delta != 0.0 {
            for (v, a) in f.values.iter_mut().zip(&self.shift) {
                *v += a;
            }
            f.law = Law::Tilted { delta: self.delta };
        }
        f
    }
}

pub fn sample_tilted(spec: &TiltSpec, seed: u64, stream: u64) -> Result<FieldSample> {
    Ok(spec.sample_with(&spec.sampler()?, seed, stream))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Normal,
    Bootstrap,
}

#[derive(Clone, Debug, Serialize)]
pub struct ImportanceEstimate {
    pub event: String,
    /// Mean of `1_A * weight`, clamped to `[0, 1]`.
    pub p_hat: f64,
    /// Unclamped mean.
    pub raw_mean: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub ci_method: CiMethod,
    pub ess: f64,
    pub n: usize,
    pub hits: usize,
    pub tilt: String,
    pub unreliable: bool,
    pub warning: Option<String>,
    /// Mean of the log-density over all tilted replicas with its SE.
    pub log_density: stats::Estimate,
}

impl ImportanceEstimate {
    /// Variance of a single weighted replica.
    pub fn replica_variance(&self) -> f64 {
        self.se * self.se * self.n as f64
    }
}

/// Importance-sampling estimate of `P_U[A]` from `n` tilted replicas.
pub fn importance_estimate<F>(event: &str, detector: F, spec: &TiltSpec, n: usize, seed: u64) -> Result<ImportanceEstimate>
where
    F: Fn(&FieldSample) -> Result<bool> + Sync,
{
    if n < 2 {
        return Err(Error::InvalidInput("need at least two replicas".into()));
    }
    let sampler = spec.sampler()?;
    let rows: Vec<(f64, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let f = spec.sample_with(&sampler, seed, k);
            let ld = spec.log_density(&f);
            let hit = detector(&f)?;
            Ok((if hit { (-ld).exp() } else { 0.0 }, ld))
        })
        .collect::<Result<_>>()?;
    let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let lds: Vec<f64> = rows.iter().map(|r| r.1).collect();
    summarize(event, &y, &lds, spec.id(), seed)
}

fn summarize(event: &str, y: &[f64], lds: &[f64], tilt: String, seed: u64) -> Result<ImportanceEstimate> {
    let n = y.len();
    let est = stats::estimate(y);
    let hits = y.iter().filter(|v| **v > 0.0).count();
    let s1: f64 = y.iter().sum();
    let s2: f64 = y.iter().map(|v| v * v).sum();
    let ess = if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 };
    let z = stats::normal_quantile(0.975);
    let kurt = if hits > 3 { stats::excess_kurtosis(y) } else { 0.0 };
    let (raw_ci, ci_method) = if kurt > KURTOSIS_BOOTSTRAP {
        let mut r = rng::stream(seed, rng::purpose::BOOTSTRAP, 0);
        (stats::bootstrap_ci(y, stats::mean, BOOTSTRAP_REPS, 0.95, &mut r), CiMethod::Bootstrap)
    } else {
        (est.ci(z), CiMethod::Normal)
    };
    let ci = (raw_ci.0.max(0.0), raw_ci.1.clamp(0.0, 1.0));
    let unreliable = ess < ESS_UNRELIABLE;
    let warning = if ess < ESS_WARN { Some(format!("effective sample size {ess:.1} below {ESS_WARN}")) } else { None };
    Ok(ImportanceEstimate {
        event: event.to_string(),
        p_hat: est.mean.clamp(0.0, 1.0),
        raw_mean: est.mean,
        se: est.se,
        ci,
        ci_method,
        ess,
        n,
        hits,
        tilt,
        unreliable,
        warning,
        log_density: stats::estimate(lds),
    })
}

/// Plain Monte Carlo frequency under `P_U` (no tilt) with a Wilson interval.
pub fn naive_estimate<F>(event: &str, detector: F, u: BoxSpec, n: usize, seed: u64) -> Result<ImportanceEstimate>
where
    F: Fn(&FieldSample) -> Result<bool> + Sync,
{
    let sampler = DirichletSampler::new(u)?;
    let hits: Vec<bool> = (0..n as u64).into_par_iter().map(|k| detector(&sampler.sample(seed, k))).collect::<Result<_>>()?;
    let k = hits.iter().filter(|h| **h).count();
    let y: Vec<f64> = hits.iter().map(|&h| h as u8 as f64).collect();
    let est = stats::estimate(&y);
    let ci = stats::wilson(k as u64, n as u64, stats::normal_quantile(0.975));
    Ok(ImportanceEstimate {
        event: event.to_string(),
        p_hat: est.mean,
        raw_mean: est.mean,
        se: est.se,
        ci,
        ci_method: CiMethod::Normal,
        ess: n as f64,
        n,
        hits: k,
        tilt: "none".into(),
        unreliable: false,
        warning: None,
        log_density: stats::Estimate { mean: 0.0, se: 0.0, n },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyBoundRecord {
    pub p_tilted: f64,
    pub entropy: f64,
    pub bound: f64,
    /// Set when `p_tilted = 0` and the bound is vacuous.
    pub degenerate: bool,
}

/// `P[A] >= p e^{-(H + 1/e) / p}`.
pub fn entropic_lower_bound(p_tilted: f64, entropy: f64) -> Result<EntropyBoundRecord> {
    if !(0.0..=1.0).contains(&p_tilted) || entropy < 0.0 || !entropy.is_finite() {
        return Err(Error::InvalidInput(format!("entropic bound needs p in [0,1], H >= 0 (got {p_tilted}, {entropy})")));
    }
    if p_tilted == 0.0 {
        return Ok(EntropyBoundRecord { p_tilted, entropy, bound: 0.0, degenerate: true });
    }
    let bound = p_tilted * (-(entropy + (-1.0f64).exp()) / p_tilted).exp();
    Ok(EntropyBoundRecord { p_tilted, entropy, bound, degenerate: false })
}

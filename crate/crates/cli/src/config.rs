//! Flat TOML run configuration. Unknown keys are rejected; every suite
//! validates its own preconditions before any compute starts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gffperc::coarse::{CgParams, LambdaKind};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    CapacitySweep,
    FieldSample,
    OneArmScan,
    TiltEstimate,
    CoarseGrainDemo,
    HstarEstimate,
    EfInclusion,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::CapacitySweep,
        Experiment::FieldSample,
        Experiment::OneArmScan,
        Experiment::TiltEstimate,
        Experiment::CoarseGrainDemo,
        Experiment::HstarEstimate,
        Experiment::EfInclusion,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::CapacitySweep => "capacity-sweep",
            Experiment::FieldSample => "field-sample",
            Experiment::OneArmScan => "one-arm-scan",
            Experiment::TiltEstimate => "tilt-estimate",
            Experiment::CoarseGrainDemo => "coarse-grain-demo",
            Experiment::HstarEstimate => "hstar-estimate",
            Experiment::EfInclusion => "ef-inclusion",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown experiment '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Dirichlet,
    Bulk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Naive,
    Tilted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiltEvent {
    Tube,
    OneArm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    All,
    Ball,
    Annulus,
    BoxAnnulus,
    Punctured,
}

/// One run. Missing keys take the experiment's defaults (see [`RunConfig::resolve`]).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub d: Option<usize>,
    /// Single size `N`.
    pub n: Option<i64>,
    /// Size list for sweeps and scans.
    pub sizes: Option<Vec<i64>>,
    pub l: Option<i64>,
    pub k: Option<i64>,
    /// Enlargement factor of the bulk sampler.
    pub r: Option<i64>,
    pub n_out: Option<i64>,
    pub levels: Option<Vec<f64>>,
    pub delta: Option<f64>,
    pub replicas: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sampler: Option<SamplerKind>,
    /// Dirichlet margin around the region an event needs.
    pub margin: Option<i64>,
    pub estimator: Option<EstimatorKind>,
    pub event: Option<TiltEvent>,
    pub h_prime: Option<f64>,
    pub eps: Option<f64>,
    pub rho: Option<f64>,
    pub domain: Option<DomainKind>,
    pub punctured_eps: Option<f64>,
    pub relaxed_k: Option<bool>,
    /// Paths per domain in the coarse-graining demo.
    pub paths: Option<usize>,
    /// Paths per domain that also get the capacity-retention bound.
    pub porous_paths: Option<usize>,
    /// Reference critical level for the one-arm fit.
    pub hstar: Option<f64>,
    /// Upper limit on samples drawn while waiting for `replicas` one-arm events.
    pub max_samples: Option<usize>,
    /// Replicas per task.
    pub chunk: Option<usize>,
}

#[derive(Debug)]
pub struct ValidationErrors(pub Vec<String>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        RunConfig::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fill every unset key with the default for `exp`. A config naming a
    /// different experiment is an error.
    pub fn resolve(mut self, exp: Experiment) -> Result<RunConfig, ValidationErrors> {
        if let Some(e) = self.experiment {
            if e != exp {
                return Err(ValidationErrors(vec![format!("config is for '{e}', not '{exp}'")]));
            }
        }
        self.experiment = Some(exp);
        let def = RunConfig::defaults(exp);
        macro_rules! fill {
            ($($f:ident),*) => { $( if self.$f.is_none() { self.$f = def.$f.clone(); } )* };
        }
        fill!(d, n, sizes, l, k, r, n_out, levels, delta, replicas, seed, out, sampler, margin, estimator, event, h_prime, eps, rho, domain, punctured_eps, relaxed_k, paths, porous_paths, hstar, max_samples, chunk);
        Ok(self)
    }

    pub fn defaults(exp: Experiment) -> RunConfig {
        let base = RunConfig { seed: Some(1), out: Some(PathBuf::from("runs")), relaxed_k: Some(false), chunk: Some(50), ..Default::default() };
        match exp {
            Experiment::CapacitySweep => RunConfig { d: Some(3), sizes: Some((8..=14).map(|e| 1i64 << e).collect()), ..base },
            Experiment::FieldSample => RunConfig {
                d: Some(3),
                n: Some(16),
                r: Some(2),
                sampler: Some(SamplerKind::Dirichlet),
                replicas: Some(4),
                chunk: Some(1),
                ..base
            },
            Experiment::OneArmScan => RunConfig {
                d: Some(3),
                sizes: Some(vec![4, 6, 8, 12]),
                levels: Some(vec![2.5]),
                replicas: Some(2000),
                margin: Some(8),
                estimator: Some(EstimatorKind::Naive),
                delta: Some(1.0),
                hstar: Some(1.5),
                chunk: Some(500),
                ..base
            },
            Experiment::TiltEstimate => RunConfig {
                d: Some(3),
                n: Some(16),
                l: Some(2),
                levels: Some(vec![1.0]),
                delta: Some(0.5),
                replicas: Some(2000),
                event: Some(TiltEvent::Tube),
                estimator: Some(EstimatorKind::Tilted),
                ..base
            },
            Experiment::CoarseGrainDemo => RunConfig {
                d: Some(3),
                n: Some(1200),
                k: Some(4),
                l: Some(10),
                rho: Some(0.25),
                domain: Some(DomainKind::All),
                punctured_eps: Some(0.2),
                paths: Some(100),
                porous_paths: Some(5),
                relaxed_k: Some(true),
                chunk: Some(25),
                ..base
            },
            Experiment::HstarEstimate => RunConfig {
                d: Some(3),
                sizes: Some(vec![8, 12, 16]),
                levels: Some((0..=10).map(|i| (5 + 2 * i) as f64 / 10.0).collect()),
                replicas: Some(200),
                margin: Some(4),
                chunk: Some(50),
                ..base
            },
            Experiment::EfInclusion => RunConfig {
                d: Some(3),
                n: Some(64),
                k: Some(4),
                l: Some(1),
                r: Some(2),
                rho: Some(0.25),
                levels: Some(vec![0.0]),
                h_prime: Some(-0.5),
                eps: Some(0.25),
                sampler: Some(SamplerKind::Bulk),
                replicas: Some(500),
                max_samples: Some(5000),
                relaxed_k: Some(true),
                chunk: Some(8),
                ..base
            },
        }
    }

    /// Itemised precondition check of a resolved config.
    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut errs = Vec::new();
        let exp = self.experiment.expect("resolved");
        let d = self.d.unwrap_or(0);
        if !(2..=gffperc::lattice::MAX_DIM).contains(&d) {
            errs.push(format!("d = {d} outside 2..={}", gffperc::lattice::MAX_DIM));
        }
        let need_replicas = !matches!(exp, Experiment::CapacitySweep | Experiment::CoarseGrainDemo);
        if need_replicas && self.replicas.unwrap_or(0) == 0 {
            errs.push("replica count must be positive".into());
        }
        if self.chunk.unwrap_or(0) == 0 {
            errs.push("chunk must be positive".into());
        }
        let sizes = self.sizes.clone().unwrap_or_default();
        let levels = self.levels.clone().unwrap_or_default();
        if levels.iter().any(|h| !h.is_finite()) {
            errs.push("levels must be finite".into());
        }
        match exp {
            Experiment::CapacitySweep => {
                if sizes.is_empty() {
                    errs.push("sizes must be non-empty".into());
                }
                if d < 3 {
                    errs.push("capacity needs a transient lattice, d >= 3".into());
                }
                if sizes.iter().any(|&n| n < 2) {
                    errs.push("every size must be >= 2".into());
                }
            }
            Experiment::FieldSample => {
                if self.n.unwrap_or(0) < 1 {
                    errs.push("n must be >= 1".into());
                }
                if self.sampler == Some(SamplerKind::Bulk) && self.r.unwrap_or(0) < 2 {
                    errs.push("bulk sampler needs r >= 2".into());
                }
            }
            Experiment::OneArmScan => {
                if d != 3 {
                    errs.push("one-arm scan is for d = 3".into());
                }
                if sizes.len() < 2 {
                    errs.push("one-arm scan needs at least two sizes for the fit".into());
                }
                if levels.is_empty() {
                    errs.push("levels must be non-empty".into());
                }
                if let Some(no) = self.n_out {
                    if sizes.iter().any(|&n| no <= n) {
                        errs.push(format!("n_out = {no} must exceed every size"));
                    }
                }
                if self.margin.unwrap_or(-1) < 0 {
                    errs.push("margin must be >= 0".into());
                }
                if !self.hstar.is_some_and(f64::is_finite) {
                    errs.push("hstar (reference critical level) is required".into());
                }
            }
            Experiment::TiltEstimate => {
                if self.n.unwrap_or(0) < 1 || self.l.unwrap_or(0) < 1 {
                    errs.push("n and l must be >= 1".into());
                }
                if levels.is_empty() {
                    errs.push("levels must be non-empty".into());
                }
                if !self.delta.is_some_and(|x| x.is_finite() && x >= 0.0) {
                    errs.push("delta must be finite and >= 0".into());
                }
                if self.replicas.unwrap_or(0) == 1 {
                    errs.push("need at least two replicas".into());
                }
            }
            Experiment::CoarseGrainDemo => {
                if self.paths.unwrap_or(0) == 0 {
                    errs.push("paths must be positive".into());
                }
                for kind in self.domains() {
                    if let Err(e) = self.cg_params(kind) {
                        errs.push(format!("{}: {e}", kind.name()));
                    }
                }
            }
            Experiment::HstarEstimate => {
                if !(d == 3 || d == 4) {
                    errs.push("h* estimation is for d = 3 or 4".into());
                }
                if sizes.len() < 3 {
                    errs.push("need at least 3 sizes".into());
                }
                if levels.len() < 2 {
                    errs.push("need at least 2 levels".into());
                }
                if !levels.windows(2).all(|w| w[0] < w[1]) || !sizes.windows(2).all(|w| w[0] < w[1]) {
                    errs.push("levels and sizes must be strictly increasing".into());
                }
            }
            Experiment::EfInclusion => {
                if levels.len() != 1 {
                    errs.push("ef-inclusion takes exactly one level h".into());
                }
                if let (Some(h), Some(hp), Some(e)) = (levels.first(), self.h_prime, self.eps) {
                    if let Err(err) = gffperc::coarse::badness::Thresholds::new(*h, hp, e) {
                        errs.push(err.to_string());
                    }
                }
                if self.sampler == Some(SamplerKind::Bulk) && self.r.unwrap_or(0) < 2 {
                    errs.push("bulk sampler needs r >= 2".into());
                }
                if let Err(e) = self.cg_params(LambdaKind::Ball) {
                    errs.push(e.to_string());
                }
                if self.max_samples.unwrap_or(0) < self.replicas.unwrap_or(0) {
                    errs.push("max_samples must be at least replicas".into());
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors(errs))
        }
    }

    pub fn domains(&self) -> Vec<LambdaKind> {
        let eps = self.punctured_eps.unwrap_or(0.2);
        match self.domain.unwrap_or(DomainKind::All) {
            DomainKind::All => LambdaKind::all(eps).to_vec(),
            DomainKind::Ball => vec![LambdaKind::Ball],
            DomainKind::Annulus => vec![LambdaKind::Annulus],
            DomainKind::BoxAnnulus => vec![LambdaKind::BoxAnnulus],
            DomainKind::Punctured => vec![LambdaKind::Punctured { eps }],
        }
    }

    pub fn cg_params(&self, kind: LambdaKind) -> gffperc::Result<CgParams> {
        CgParams::new(
            self.d.unwrap_or(0),
            self.k.unwrap_or(0),
            self.l.unwrap_or(0),
            self.n.unwrap_or(0),
            kind,
            self.rho.unwrap_or(f64::NAN),
            self.relaxed_k.unwrap_or(false),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_toml("d = 3\nrepilcas = 10\n").unwrap_err();
        assert!(e.contains("repilcas"), "{e}");
    }

    #[test]
    fn defaults_validate() {
        for exp in Experiment::ALL {
            let c = RunConfig::default().resolve(exp).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{exp}: {e}"));
        }
    }

    #[test]
    fn empty_replica_count_is_an_error() {
        let c = RunConfig::from_toml("replicas = 0\n").unwrap().resolve(Experiment::TiltEstimate).unwrap();
        let e = c.validate().unwrap_err();
        assert!(e.0.iter().any(|m| m.contains("replica")));
    }

    #[test]
    fn errors_are_itemised() {
        let c = RunConfig::from_toml("d = 4\nsizes = [8]\nlevels = [1.0]\n").unwrap().resolve(Experiment::OneArmScan).unwrap();
        assert!(c.validate().unwrap_err().0.len() >= 2);
    }

    #[test]
    fn mismatched_experiment_is_an_error() {
        let c = RunConfig::from_toml("experiment = \"ef-inclusion\"\n").unwrap();
        assert!(c.resolve(Experiment::CapacitySweep).is_err());
    }
}

//! The experiment suites. Each one turns a resolved config into tasks,
//! runs them on the worker pool and writes CSV outputs into the run directory.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::path::Path;

use anyhow::{bail, Result};
use gffperc::coarse::badness::{ef_inclusion, Thresholds};
use gffperc::coarse::d3::{coarse_grain_d3, PorousContext};
use gffperc::coarse::d4::coarse_grain_d4_detailed;
use gffperc::coarse::paths::{random_crossing_path, PathStyle};
use gffperc::coarse::{verify_collection, LambdaKind};
use gffperc::excursion::{crossing_clusters, one_arm, truncated_one_arm, tube_crossing};
use gffperc::field::{BulkSampler, DirichletSampler, FieldSample};
use gffperc::lattice::segment;
use gffperc::potential::line_capacity_fast;
use gffperc::rng::{purpose, stream};
use gffperc::tilt::{importance_estimate, make_tilt, naive_estimate, ImportanceEstimate};
use gffperc::{stats, BoxSpec, GreenOracle, Point, TubeSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EstimatorKind, Experiment, RunConfig, SamplerKind, TiltEvent};
use crate::manifest::{csv_bytes, write_output, CheckRecord, OutputRecord, TaskRecord, TaskStatus};

/// Mutable state of one run: the directory and everything destined for the manifest.
pub struct RunContext<'a> {
    pub dir: &'a Path,
    pub tasks: Vec<TaskRecord>,
    pub outputs: Vec<OutputRecord>,
    pub checks: Vec<CheckRecord>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub id: String,
    pub seed: u64,
    pub replicas: (u64, u64),
}

impl<'a> RunContext<'a> {
    pub fn new(dir: &'a Path) -> RunContext<'a> {
        RunContext { dir, tasks: vec![], outputs: vec![], checks: vec![], notes: vec![] }
    }

    /// Run tasks in parallel; failed tasks are recorded and yield `None`.
    pub fn run_tasks<T, F>(&mut self, specs: Vec<TaskSpec>, f: F) -> Vec<Option<T>>
    where
        T: Send,
        F: Fn(usize, &TaskSpec) -> gffperc::Result<T> + Sync,
    {
        let results: Vec<gffperc::Result<T>> = specs.par_iter().enumerate().map(|(i, s)| f(i, s)).collect();
        results
            .into_iter()
            .zip(specs)
            .map(|(r, s)| {
                let (status, error, out) = match r {
                    Ok(v) => (TaskStatus::Complete, None, Some(v)),
                    Err(e) => (TaskStatus::Failed, Some(e.to_string()), None),
                };
                self.tasks.push(TaskRecord { id: s.id, seed: s.seed, replicas: s.replicas, status, error });
                out
            })
            .collect()
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let rec = write_output(self.dir, name, &csv_bytes(rows)?, Some(rows.len()))?;
        self.outputs.push(rec);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        let rec = write_output(self.dir, name, text.as_bytes(), None)?;
        self.outputs.push(rec);
        Ok(())
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(CheckRecord { name: name.into(), passed, detail: detail.into() });
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }
}

pub fn run_suite(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    match cfg.experiment.expect("resolved") {
        Experiment::CapacitySweep => capacity_sweep(cfg, ctx),
        Experiment::FieldSample => field_sample(cfg, ctx),
        Experiment::OneArmScan => one_arm_scan(cfg, ctx),
        Experiment::TiltEstimate => tilt_estimate(cfg, ctx),
        Experiment::CoarseGrainDemo => coarse_grain_demo(cfg, ctx),
        Experiment::HstarEstimate => hstar_estimate(cfg, ctx),
        Experiment::EfInclusion => ef_inclusion_suite(cfg, ctx),
    }
}

fn chunks(n: usize, chunk: usize) -> Vec<(u64, u64)> {
    (0..n).step_by(chunk.max(1)).map(|a| (a as u64, (a + chunk).min(n) as u64)).collect()
}

// ---------------------------------------------------------------- capacity

#[derive(Serialize)]
pub struct CapacityRow {
    pub d: usize,
    pub n: i64,
    pub capacity: f64,
    /// `cap log N / N` in `d = 3`, `cap / N` otherwise.
    pub normalized: f64,
    /// `pi/3` in `d = 3`; empty otherwise.
    pub reference: Option<f64>,
    /// `(N+1)^2 / sum_{x,y in T_N} g(x - y)`, the uniform-measure lower bound.
    pub uniform_lower: f64,
    pub method: String,
    pub seed: u64,
}

pub fn capacity_row(d: usize, n: i64, oracle: &GreenOracle, seed: u64) -> gffperc::Result<CapacityRow> {
    let rep = line_capacity_fast(n, d, oracle)?;
    let mut energy = 0.0;
    for j in -n..=n {
        energy += (n + 1 - j.abs()) as f64 * oracle.value(&Point::axis(d, 0, j))?;
    }
    let nf = n as f64;
    let (normalized, reference) = if d == 3 { (rep.value * nf.ln() / nf, Some(PI / 3.0)) } else { (rep.value / nf, None) };
    Ok(CapacityRow {
        d,
        n,
        capacity: rep.value,
        normalized,
        reference,
        uniform_lower: (nf + 1.0) * (nf + 1.0) / energy,
        method: rep.method.to_string(),
        seed,
    })
}

fn capacity_sweep(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let d = cfg.d.unwrap();
    let seed = cfg.seed.unwrap();
    let oracle = GreenOracle::new(d)?;
    let sizes = cfg.sizes.clone().unwrap();
    let specs = sizes.iter().map(|&n| TaskSpec { id: format!("N={n}"), seed, replicas: (0, 0) }).collect();
    let rows: Vec<CapacityRow> = ctx.run_tasks(specs, |i, _| capacity_row(d, sizes[i], &oracle, seed)).into_iter().flatten().collect();
    let lower_ok = rows.iter().all(|r| r.capacity >= r.uniform_lower * (1.0 - 1e-9));
    ctx.check("variational_lower_bound", lower_ok, "cap(T_N) >= uniform-measure bound for every N");
    if d == 3 && rows.len() >= 2 {
        let gaps: Vec<f64> = rows.iter().map(|r| (r.normalized - PI / 3.0).abs()).collect();
        let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
        ctx.note(format!("|cap log N / N - pi/3| strictly decreasing over the sweep: {monotone}"));
    }
    ctx.csv("capacity.csv", &rows)
}

// ---------------------------------------------------------------- fields

#[derive(Serialize)]
struct FieldRow {
    replica: u64,
    seed: u64,
    stream: u64,
    law: String,
    lo: String,
    hi: String,
    mean: f64,
    variance: f64,
    file: String,
    sha256: String,
}

enum AnySampler {
    Dirichlet(DirichletSampler),
    Bulk(BulkSampler),
}

impl AnySampler {
    fn sample(&self, seed: u64, stream: u64) -> FieldSample {
        match self {
            AnySampler::Dirichlet(s) => s.sample(seed, stream),
            AnySampler::Bulk(s) => s.sample(seed, stream),
        }
    }

    fn describe(&self) -> String {
        match self {
            AnySampler::Dirichlet(s) => format!("dirichlet {}..{}", s.box_spec().lo, s.box_spec().hi),
            AnySampler::Bulk(s) => format!("bulk parent {}..{} bias <= {:.3e}", s.parent().lo, s.parent().hi, s.bias_bound()),
        }
    }
}

fn make_sampler(kind: SamplerKind, window: BoxSpec, r: i64) -> gffperc::Result<AnySampler> {
    Ok(match kind {
        SamplerKind::Dirichlet => AnySampler::Dirichlet(DirichletSampler::new(window)?),
        SamplerKind::Bulk => {
            let g0 = GreenOracle::new(window.dim())?.value(&Point::zero(window.dim()))?;
            AnySampler::Bulk(BulkSampler::new(window, r, g0)?)
        }
    })
}

fn field_sample(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let (d, n, seed) = (cfg.d.unwrap(), cfg.n.unwrap(), cfg.seed.unwrap());
    let window = BoxSpec::ball(Point::zero(d), n);
    let sampler = make_sampler(cfg.sampler.unwrap(), window, cfg.r.unwrap())?;
    ctx.note(format!("sampler: {}", sampler.describe()));
    let specs = chunks(cfg.replicas.unwrap(), cfg.chunk.unwrap())
        .into_iter()
        .map(|r| TaskSpec { id: format!("replicas {}..{}", r.0, r.1), seed, replicas: r })
        .collect();
    let dir = ctx.dir.to_path_buf();
    let out = ctx.run_tasks(specs, |_, s| {
        let mut rows = Vec::new();
        for i in s.replicas.0..s.replicas.1 {
            let f = sampler.sample(seed, i);
            let mut bytes = Vec::new();
            f.write_to(&mut bytes)?;
            let name = format!("field-{i:05}.bin");
            let rec = write_output(&dir, &name, &bytes, None).map_err(|e| gffperc::Error::Invariant(e.to_string()))?;
            let est = stats::estimate(&f.values);
            rows.push((
                FieldRow {
                    replica: i,
                    seed,
                    stream: i,
                    law: format!("{:?}", f.law).split([' ', '{']).next().unwrap_or("").to_lowercase(),
                    lo: f.bx.lo.to_string(),
                    hi: f.bx.hi.to_string(),
                    mean: est.mean,
                    variance: stats::variance(&f.values),
                    file: name,
                    sha256: rec.sha256.clone(),
                },
                rec,
            ));
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    for (row, rec) in out.into_iter().flatten().flatten() {
        ctx.outputs.push(rec);
        rows.push(row);
    }
    if let Some(first) = rows.first() {
        let bytes = std::fs::read(ctx.dir.join(&first.file))?;
        let back = FieldSample::read_from(&mut bytes.as_slice())?;
        let ok = back.values == sampler.sample(seed, first.stream).values;
        ctx.check("container_round_trip", ok, format!("{} re-read equals a fresh draw", first.file));
    }
    ctx.csv("fields.csv", &rows)
}

// ---------------------------------------------------------------- one-arm scan

#[derive(Clone, Serialize)]
pub struct ScanRow {
    pub h: f64,
    pub n: i64,
    pub n_out: Option<i64>,
    pub event: String,
    pub estimator: String,
    pub replicas: usize,
    pub hits: usize,
    pub p_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ess: f64,
    pub margin: i64,
    pub delta: Option<f64>,
    pub seed: u64,
    /// No positive counts: excluded from the fit.
    pub flagged: bool,
}

#[derive(Clone, Serialize)]
pub struct FitRow {
    pub h: f64,
    pub side: String,
    pub cells: usize,
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    pub intercept: Option<f64>,
    /// `(pi/6)(h - hstar)^2`, for reference only.
    pub reference: f64,
    pub hstar: f64,
}

fn estimate_row(h: f64, n: i64, n_out: Option<i64>, est: &ImportanceEstimate, cfg: &RunConfig, event: &str) -> ScanRow {
    let tilted = cfg.estimator == Some(EstimatorKind::Tilted);
    ScanRow {
        h,
        n,
        n_out,
        event: event.into(),
        estimator: if tilted { "tilted" } else { "naive" }.into(),
        replicas: est.n,
        hits: est.hits,
        p_hat: est.p_hat,
        se: est.se,
        ci_lo: est.ci.0,
        ci_hi: est.ci.1,
        ess: est.ess,
        margin: cfg.margin.unwrap(),
        delta: tilted.then(|| cfg.delta.unwrap()),
        seed: cfg.seed.unwrap(),
        flagged: est.hits == 0,
    }
}

/// One scan cell.
pub fn scan_cell(cfg: &RunConfig, h: f64, n: i64) -> gffperc::Result<ScanRow> {
    let d = cfg.d.unwrap();
    let hstar = cfg.hstar.unwrap();
    let truncated = cfg.n_out.filter(|_| h < hstar);
    let reach = truncated.unwrap_or(n);
    let u = BoxSpec::ball(Point::zero(d), reach + cfg.margin.unwrap());
    let seed = cfg.seed.unwrap();
    let reps = cfg.replicas.unwrap();
    let (name, det): (&str, Box<dyn Fn(&FieldSample) -> gffperc::Result<bool> + Sync>) = match truncated {
        Some(no) => ("truncated_one_arm", Box::new(move |f| Ok(truncated_one_arm(f, h, n, no)?.outcome))),
        None => ("one_arm", Box::new(move |f| Ok(one_arm(f, h, n)?.outcome))),
    };
    let est = match cfg.estimator.unwrap() {
        EstimatorKind::Naive => naive_estimate(name, &det, u, reps, seed)?,
        EstimatorKind::Tilted => {
            let t = make_tilt(&segment(d, n), u, cfg.delta.unwrap())?;
            importance_estimate(name, &det, &t, reps, seed)?
        }
    };
    Ok(estimate_row(h, n, truncated, &est, cfg, name))
}

/// Fit `-log p` against `N / log N` per level over unflagged cells.
pub fn fit_scan(rows: &[ScanRow], hstar: f64) -> Vec<FitRow> {
    let mut by_h: BTreeMap<u64, Vec<&ScanRow>> = BTreeMap::new();
    for r in rows {
        by_h.entry(r.h.to_bits()).or_default().push(r);
    }
    by_h.values()
        .map(|cells| {
            let h = cells[0].h;
            let used: Vec<&&ScanRow> = cells.iter().filter(|r| !r.flagged && r.p_hat > 0.0).collect();
            let side = if h > hstar { "above" } else { "below" }.to_string();
            let reference = PI / 6.0 * (h - hstar).powi(2);
            if used.len() < 2 {
                return FitRow { h, side, cells: used.len(), slope: None, slope_se: None, intercept: None, reference, hstar };
            }
            let x: Vec<f64> = used.iter().map(|r| r.n as f64 / (r.n as f64).ln()).collect();
            let y: Vec<f64> = used.iter().map(|r| -r.p_hat.ln()).collect();
            // delta method: var(log p) = (se / p)^2
            let w: Vec<f64> = used.iter().map(|r| (r.p_hat / r.se.max(1e-300)).powi(2)).collect();
            let (a, b, _, se_b) = stats::linear_fit(&x, &y, if used.len() > 2 { None } else { Some(&w) });
            FitRow { h, side, cells: used.len(), slope: Some(b), slope_se: Some(se_b), intercept: Some(a), reference, hstar }
        })
        .collect()
}

fn one_arm_scan(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let seed = cfg.seed.unwrap();
    let hstar = cfg.hstar.unwrap();
    let cells: Vec<(f64, i64)> =
        cfg.levels.clone().unwrap().iter().flat_map(|&h| cfg.sizes.clone().unwrap().into_iter().map(move |n| (h, n))).collect();
    let specs = cells.iter().map(|(h, n)| TaskSpec { id: format!("h={h} N={n}"), seed, replicas: (0, cfg.replicas.unwrap() as u64) }).collect();
    let rows: Vec<ScanRow> = ctx
        .run_tasks(specs, |i, _| scan_cell(cfg, cells[i].0, cells[i].1))
        .into_iter()
        .flatten()
        .collect();
    for r in rows.iter().filter(|r| r.flagged) {
        ctx.note(format!("cell h={} N={} has no positive counts; excluded from the fit", r.h, r.n));
    }
    let fits = fit_scan(&rows, hstar);
    ctx.note(format!("fit: -log p_hat = a + b N/log N per level; reference (pi/6)(h - hstar)^2 with hstar = {hstar} is not asserted"));
    ctx.csv("scan.csv", &rows)?;
    ctx.csv("fit.csv", &fits)
}

// ---------------------------------------------------------------- tilt

#[derive(Serialize)]
pub struct TiltRow {
    pub event: String,
    pub h: f64,
    pub delta: f64,
    #[serde(rename = "N")]
    pub n_size: i64,
    #[serde(rename = "L")]
    pub l: i64,
    pub n: usize,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ess: f64,
    pub seed: u64,
}

fn tilt_estimate(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let (d, n, l, seed, reps) = (cfg.d.unwrap(), cfg.n.unwrap(), cfg.l.unwrap(), cfg.seed.unwrap(), cfg.replicas.unwrap());
    let event = cfg.event.unwrap();
    let tilted = cfg.estimator.unwrap() == EstimatorKind::Tilted;
    let delta = if tilted { cfg.delta.unwrap() } else { 0.0 };
    let u = match event {
        TiltEvent::Tube => TubeSpec::new(d, n, l)?.region().enlarge(2 * l),
        TiltEvent::OneArm => BoxSpec::ball(Point::zero(d), n + l),
    };
    let spec = make_tilt(&segment(d, n), u, delta)?;
    ctx.note(format!("tilt {}: entropy {:.6}, cap_U(K) {:.6}", spec.id(), spec.entropy(), spec.capacity));
    let levels = cfg.levels.clone().unwrap();
    let specs = levels.iter().map(|h| TaskSpec { id: format!("h={h}"), seed, replicas: (0, reps as u64) }).collect();
    let name = match event {
        TiltEvent::Tube => "tube_crossing",
        TiltEvent::OneArm => "one_arm",
    };
    let rows: Vec<TiltRow> = ctx
        .run_tasks(specs, |i, _| {
            let h = levels[i];
            let det = |f: &FieldSample| -> gffperc::Result<bool> {
                Ok(match event {
                    TiltEvent::Tube => tube_crossing(f, h, n, l)?.outcome,
                    TiltEvent::OneArm => one_arm(f, h, n)?.outcome,
                })
            };
            let est = if tilted { importance_estimate(name, det, &spec, reps, seed)? } else { naive_estimate(name, det, u, reps, seed)? };
            Ok(TiltRow { event: name.into(), h, delta, n_size: n, l, n: est.n, p_hat: est.p_hat, ci_lo: est.ci.0, ci_hi: est.ci.1, ess: est.ess, seed })
        })
        .into_iter()
        .flatten()
        .collect();
    ctx.csv("tilt.csv", &rows)
}

// ---------------------------------------------------------------- coarse-graining

#[derive(Serialize)]
pub struct CoarseRow {
    pub domain: String,
    pub d: usize,
    #[serde(rename = "N")]
    pub n_size: i64,
    #[serde(rename = "K")]
    pub k: i64,
    #[serde(rename = "L")]
    pub l: i64,
    pub path: u64,
    pub path_id: String,
    pub steps: usize,
    pub n: usize,
    pub min_separation: Option<i64>,
    pub separation_ok: bool,
    pub inclusion_ok: bool,
    pub cardinality_ok: bool,
    /// Lower cardinality window; informational.
    pub cardinality_lower_ok: bool,
    pub crossing_ok: bool,
    pub tau_ok: Option<bool>,
    pub passes: bool,
    pub log_family_bound: f64,
    pub sigma_ratio: Option<f64>,
    pub porous_ratio: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub relaxed: bool,
    pub seed: u64,
}

fn coarse_grain_demo(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let seed = cfg.seed.unwrap();
    let npaths = cfg.paths.unwrap();
    let oracle = if cfg.d == Some(3) { Some(GreenOracle::new(3)?) } else { None };
    let mut all_rows = Vec::new();
    let mut jsonl = String::new();
    for (vi, kind) in cfg.domains().into_iter().enumerate() {
        let p = cfg.cg_params(kind)?;
        let porous = match &oracle {
            Some(o) if cfg.porous_paths.unwrap() > 0 => Some(PorousContext::new(&p, o)?),
            _ => None,
        };
        let specs = chunks(npaths, cfg.chunk.unwrap())
            .into_iter()
            .map(|r| TaskSpec { id: format!("{} paths {}..{}", kind.name(), r.0, r.1), seed, replicas: r })
            .collect();
        let out = ctx.run_tasks(specs, |_, s| {
            let mut rows = Vec::new();
            for j in s.replicas.0..s.replicas.1 {
                let mut rng = stream(seed, purpose::PATH, (vi as u64) << 40 | j);
                let path = random_crossing_path(&p.domain(), PathStyle::default(), &mut rng)?;
                let (c, extra_ok) = if p.d == 3 {
                    (coarse_grain_d3(&path, &p)?, true)
                } else {
                    let o = coarse_grain_d4_detailed(&path, &p)?;
                    let ok = o.leaves_cross && o.separations.iter().all(|s| s.ok());
                    (o.collection, ok)
                };
                let v = verify_collection(&c, &path);
                let por = match &porous {
                    Some(ctxp) if (j as usize) < cfg.porous_paths.unwrap() => Some(ctxp.report(&c)?),
                    _ => None,
                };
                let mut js = c.to_json();
                js["verification"] = serde_json::to_value(&v).expect("serializable");
                rows.push((
                    CoarseRow {
                        domain: kind.name(),
                        d: p.d,
                        n_size: p.n,
                        k: p.k,
                        l: p.l,
                        path: j,
                        path_id: c.path_id.clone(),
                        steps: path.len(),
                        n: c.n(),
                        min_separation: v.min_separation,
                        separation_ok: v.separation_ok,
                        inclusion_ok: v.inclusion_ok,
                        cardinality_ok: v.cardinality_upper_ok,
                        cardinality_lower_ok: v.cardinality_lower_ok,
                        crossing_ok: v.crossing_ok,
                        tau_ok: v.tau_lipschitz_ok,
                        passes: v.passes() && extra_ok,
                        log_family_bound: c.log_family_bound,
                        sigma_ratio: por.as_ref().map(|r| r.sigma_ratio),
                        porous_ratio: por.as_ref().map(|r| r.porous_ratio),
                        lambda_hat: por.as_ref().map(|r| r.lambda_hat),
                        relaxed: p.relaxed,
                        seed,
                    },
                    c.key(),
                    js.to_string(),
                ));
            }
            Ok(rows)
        });
        let rows: Vec<_> = out.into_iter().flatten().flatten().collect();
        let passed = rows.iter().filter(|r| r.0.passes).count();
        ctx.check(&format!("admissible_{}", kind.name()), passed == rows.len(), format!("{passed}/{} collections pass", rows.len()));
        let distinct: HashSet<&String> = rows.iter().map(|r| &r.1).collect();
        let bound = rows.first().map(|r| r.0.log_family_bound).unwrap_or(0.0);
        ctx.check(
            &format!("entropy_{}", kind.name()),
            (distinct.len() as f64).ln() <= bound,
            format!("{} distinct collections, log bound {bound:.1}", distinct.len()),
        );
        let ratios: Vec<f64> = rows.iter().filter_map(|r| r.0.sigma_ratio).collect();
        if !ratios.is_empty() {
            let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            ctx.note(format!("{}: min cap(Sigma)/cap(T_N) lower bound {min:.4} over {} collections; (1 - rho) = {}", kind.name(), ratios.len(), 1.0 - p.rho));
        }
        for (row, _, js) in rows {
            jsonl.push_str(&js);
            jsonl.push('\n');
            all_rows.push(row);
        }
    }
    if cfg.relaxed_k.unwrap() {
        ctx.note("relaxed K: constants are desk-scale fits, not the asymptotic ones");
    }
    ctx.csv("collections.csv", &all_rows)?;
    let rec = write_output(ctx.dir, "collections.jsonl", jsonl.as_bytes(), Some(all_rows.len()))?;
    ctx.outputs.push(rec);
    Ok(())
}

// ---------------------------------------------------------------- h*

#[derive(Clone, Serialize)]
pub struct CurveRow {
    pub event: String,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: i64,
    pub h: f64,
    pub hits: usize,
    pub replicas: usize,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub margin: i64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PairBracket {
    pub n1: i64,
    pub n2: i64,
    pub lo: f64,
    pub hi: f64,
    /// Linear interpolation of the sign change of `p_{n1} - p_{n2}`.
    pub crossing: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct HstarEstimate {
    pub method: String,
    pub pairs: Vec<PairBracket>,
    pub bracket: (f64, f64),
    pub estimate: Option<f64>,
    pub warnings: Vec<String>,
}

/// Finite-size intersection heuristic on annulus-crossing curves: below the
/// critical level the larger annulus is crossed more often, above it less.
pub fn bracket_from_curves(rows: &[CurveRow], sizes: &[i64], levels: &[f64]) -> HstarEstimate {
    let get = |n: i64, h: f64| rows.iter().find(|r| r.event == "annulus_crossing" && r.n == n && r.h == h);
    let mut pairs = Vec::new();
    for w in sizes.windows(2) {
        let (n1, n2) = (w[0], w[1]);
        let mut diffs = Vec::new();
        for &h in levels {
            if let (Some(a), Some(b)) = (get(n1, h), get(n2, h)) {
                let var = |r: &CurveRow| r.p_hat * (1.0 - r.p_hat) / r.replicas as f64;
                diffs.push((h, a.p_hat - b.p_hat, 2.0 * (var(a) + var(b)).sqrt()));
            }
        }
        let mut warnings = Vec::new();
        let neg: Vec<f64> = diffs.iter().filter(|t| t.1 < -t.2).map(|t| t.0).collect();
        let pos: Vec<f64> = diffs.iter().filter(|t| t.1 > t.2).map(|t| t.0).collect();
        let mut lo = neg.iter().cloned().fold(f64::NAN, f64::max);
        let mut hi = pos.iter().cloned().fold(f64::NAN, f64::min);
        if lo.is_nan() {
            warnings.push("no level where the larger annulus is significantly more often crossed".into());
            lo = levels[0];
        }
        if hi.is_nan() {
            warnings.push("no level where the larger annulus is significantly less often crossed".into());
            hi = *levels.last().unwrap();
        }
        if lo >= hi {
            warnings.push(format!("non-monotone difference beyond CI ({lo} >= {hi}); bracket widened"));
            (lo, hi) = (hi, lo);
        }
        let crossing = diffs.windows(2).find(|w| w[0].1 <= 0.0 && w[1].1 > 0.0).map(|w| {
            let t = -w[0].1 / (w[1].1 - w[0].1);
            w[0].0 + t * (w[1].0 - w[0].0)
        });
        pairs.push(PairBracket { n1, n2, lo, hi, crossing, warnings });
    }
    let lo = pairs.iter().map(|p| p.lo).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.hi).fold(f64::NEG_INFINITY, f64::max);
    let xs: Vec<f64> = pairs.iter().filter_map(|p| p.crossing).collect();
    let warnings = pairs.iter().flat_map(|p| p.warnings.iter().map(move |w| format!("N={}/{}: {w}", p.n1, p.n2))).collect();
    HstarEstimate {
        method: "annulus-crossing intersection: per consecutive size pair, [largest h with p_N1 < p_N2 beyond 2 sigma, smallest h with p_N1 > p_N2 beyond 2 sigma]; union over pairs".into(),
        pairs,
        bracket: (lo, hi),
        estimate: (!xs.is_empty()).then(|| stats::mean(&xs)),
        warnings,
    }
}

/// Hit counts per level for one-arm and annulus crossing on `reps` fields.
pub fn hstar_hits(d: usize, n: i64, margin: i64, levels: &[f64], seed: u64, range: (u64, u64)) -> gffperc::Result<(Vec<usize>, Vec<usize>)> {
    let s = DirichletSampler::new(BoxSpec::ball(Point::zero(d), 2 * n + margin))?;
    let (mut arm, mut ann) = (vec![0; levels.len()], vec![0; levels.len()]);
    for i in range.0..range.1 {
        let f = s.sample(seed, i);
        for (k, &h) in levels.iter().enumerate() {
            arm[k] += one_arm(&f, h, n)?.outcome as usize;
            ann[k] += !crossing_clusters(&f, h, n)?.is_empty() as usize;
        }
    }
    Ok((arm, ann))
}

fn hstar_estimate(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let (d, seed, reps, margin) = (cfg.d.unwrap(), cfg.seed.unwrap(), cfg.replicas.unwrap(), cfg.margin.unwrap_or(4));
    let sizes = cfg.sizes.clone().unwrap();
    let levels = cfg.levels.clone().unwrap();
    let mut specs = Vec::new();
    for &n in &sizes {
        for r in chunks(reps, cfg.chunk.unwrap()) {
            specs.push((n, TaskSpec { id: format!("N={n} replicas {}..{}", r.0, r.1), seed, replicas: r }));
        }
    }
    let ids: Vec<(i64, TaskSpec)> = specs.clone();
    let out = ctx.run_tasks(specs.into_iter().map(|t| t.1).collect(), |i, s| hstar_hits(d, ids[i].0, margin, &levels, seed, s.replicas));
    let complete = out.iter().all(Option::is_some);
    let z = stats::normal_quantile(0.975);
    let mut rows = Vec::new();
    for (ev, pick) in [("one_arm", 0usize), ("annulus_crossing", 1)] {
        for &n in &sizes {
            let mut hits = vec![0usize; levels.len()];
            let mut count = 0usize;
            for ((nn, s), o) in ids.iter().zip(&out) {
                if *nn == n {
                    if let Some(o) = o {
                        let v = if pick == 0 { &o.0 } else { &o.1 };
                        for (a, b) in hits.iter_mut().zip(v) {
                            *a += b;
                        }
                        count += (s.replicas.1 - s.replicas.0) as usize;
                    }
                }
            }
            for (k, &h) in levels.iter().enumerate() {
                let (lo, hi) = stats::wilson(hits[k] as u64, count as u64, z);
                rows.push(CurveRow {
                    event: ev.into(),
                    d,
                    n,
                    h,
                    hits: hits[k],
                    replicas: count,
                    p_hat: if count > 0 { hits[k] as f64 / count as f64 } else { f64::NAN },
                    ci_lo: lo,
                    ci_hi: hi,
                    margin,
                    seed,
                });
            }
        }
    }
    let est = bracket_from_curves(&rows, &sizes, &levels);
    for w in &est.warnings {
        ctx.note(format!("warning: {w}"));
    }
    ctx.note(format!("h* bracket {:?} by {}", est.bracket, est.method));
    if !complete {
        ctx.note("some tasks failed; curves use the completed replicas only");
    }
    ctx.csv("curves.csv", &rows)?;
    ctx.json("hstar.json", &est)
}

// ---------------------------------------------------------------- E/F inclusion

#[derive(Serialize)]
pub struct EfRow {
    pub sample: u64,
    pub seed: u64,
    pub one_arm: bool,
    pub n_sites: Option<usize>,
    pub psi_bad: Option<usize>,
    pub xi_bad: Option<usize>,
    pub e: Option<bool>,
    pub f: Option<bool>,
    pub inclusion: Option<bool>,
    pub every_site_bad: Option<bool>,
    pub h: f64,
    pub h_prime: f64,
    pub eps: f64,
    pub relaxed: bool,
}

pub fn ef_row(f: &FieldSample, cfg: &RunConfig, i: u64) -> gffperc::Result<EfRow> {
    let h = cfg.levels.as_ref().unwrap()[0];
    let t = Thresholds::new(h, cfg.h_prime.unwrap(), cfg.eps.unwrap())?;
    let p = cfg.cg_params(LambdaKind::Ball)?;
    let out = ef_inclusion(f, &p, t)?;
    Ok(EfRow {
        sample: i,
        seed: cfg.seed.unwrap(),
        one_arm: out.is_some(),
        n_sites: out.as_ref().map(|o| o.report.n()),
        psi_bad: out.as_ref().map(|o| o.report.psi_count()),
        xi_bad: out.as_ref().map(|o| o.report.xi_count()),
        e: out.as_ref().map(|o| o.e),
        f: out.as_ref().map(|o| o.f),
        inclusion: out.as_ref().map(|o| o.inclusion_holds()),
        every_site_bad: out.as_ref().map(|o| o.every_site_bad),
        h,
        h_prime: t.h_prime,
        eps: t.eps,
        relaxed: p.relaxed,
    })
}

fn ef_inclusion_suite(cfg: &RunConfig, ctx: &mut RunContext) -> Result<()> {
    let (d, n, seed) = (cfg.d.unwrap(), cfg.n.unwrap(), cfg.seed.unwrap());
    let window = match cfg.sampler.unwrap() {
        SamplerKind::Bulk => BoxSpec::ball(Point::zero(d), n),
        SamplerKind::Dirichlet => BoxSpec::ball(Point::zero(d), n + cfg.margin.unwrap_or(0)),
    };
    let sampler = make_sampler(cfg.sampler.unwrap(), window, cfg.r.unwrap())?;
    ctx.note(format!("sampler: {}", sampler.describe()));
    let (target, max) = (cfg.replicas.unwrap(), cfg.max_samples.unwrap());
    let chunk = cfg.chunk.unwrap() as u64;
    let mut rows: Vec<EfRow> = Vec::new();
    let mut next = 0u64;
    let mut failed = false;
    while rows.iter().filter(|r| r.one_arm).count() < target && (next as usize) < max && !failed {
        let hi = (next + chunk).min(max as u64);
        let batch: Vec<TaskSpec> = (next..hi).map(|i| TaskSpec { id: format!("sample {i}"), seed, replicas: (i, i + 1) }).collect();
        let out = ctx.run_tasks(batch, |_, s| ef_row(&sampler.sample(seed, s.replicas.0), cfg, s.replicas.0));
        failed = out.iter().any(Option::is_none);
        rows.extend(out.into_iter().flatten());
        next = hi;
    }
    // keep samples up to the target-th one-arm event
    let mut seen = 0;
    let cut = rows.iter().position(|r| {
        seen += r.one_arm as usize;
        seen == target
    });
    if let Some(c) = cut {
        rows.truncate(c + 1);
    }
    let arms: Vec<&EfRow> = rows.iter().filter(|r| r.one_arm).collect();
    let held = arms.iter().filter(|r| r.inclusion == Some(true)).count();
    ctx.check("inclusion", held == arms.len(), format!("E or F held on {held}/{} one-arm samples", arms.len()));
    ctx.check("dichotomy", arms.iter().all(|r| r.every_site_bad == Some(true)), "every site psi-bad or xi-bad on one-arm samples");
    ctx.check("target_reached", arms.len() >= target, format!("{} of {target} one-arm samples within {} draws", arms.len(), rows.len()));
    ctx.csv("ef.csv", &rows)
}

/// Plain-text summary for the terminal.
pub fn summarize(ctx: &RunContext) -> String {
    let failed = ctx.tasks.iter().filter(|t| t.status == TaskStatus::Failed).count();
    let mut s = format!("{} tasks, {failed} failed\n", ctx.tasks.len());
    for c in &ctx.checks {
        s += &format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for n in &ctx.notes {
        s += &format!("note: {n}\n");
    }
    s
}

pub fn ensure_known(exp: &str) -> Result<Experiment> {
    match exp.parse() {
        Ok(e) => Ok(e),
        Err(e) => bail!(e),
    }
}

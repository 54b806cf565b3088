//! Experiment runner for `gffperc`: configuration, run directories,
//! manifests and the experiment suites.

pub mod config;
pub mod manifest;
pub mod suites;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub use config::{Experiment, RunConfig, ValidationErrors};
pub use manifest::{RunManifest, SCHEMA};

/// Result of [`run`]: the run directory and its manifest.
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub summary: String,
}

/// Execute a resolved, validated config with `workers` threads.
pub fn run(cfg: &RunConfig, workers: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    let exp = cfg.experiment.expect("resolved config");
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let dir = manifest::create_run_dir(&out, exp.name())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().context("worker pool")?;
    let started = manifest::now_unix();
    let mut ctx = suites::RunContext::new(&dir);
    let res = pool.install(|| suites::run_suite(cfg, &mut ctx));
    if let Err(e) = &res {
        ctx.note(format!("suite aborted: {e:#}"));
    }
    let complete = res.is_ok()
        && ctx.tasks.iter().all(|t| t.status == manifest::TaskStatus::Complete)
        && ctx.checks.iter().all(|c| c.passed);
    let summary = suites::summarize(&ctx);
    let m = RunManifest {
        schema: SCHEMA.into(),
        experiment: exp.name().into(),
        config: cfg.clone(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        workers: workers.max(1),
        started_unix: started,
        finished_unix: manifest::now_unix(),
        tasks: ctx.tasks,
        outputs: ctx.outputs,
        checks: ctx.checks,
        notes: ctx.notes,
        complete,
    };
    manifest::write_manifest(&dir, &m)?;
    Ok(RunOutcome { dir, manifest: m, summary })
}

/// Re-run the config stored in a manifest into a fresh directory below `out`
/// and compare output digests. Returns the new outcome and the names of the
/// outputs whose digests differ.
pub fn rerun(manifest_path: &Path, out: Option<PathBuf>, workers: Option<usize>) -> Result<(RunOutcome, Vec<String>)> {
    let old = RunManifest::load(manifest_path)?;
    let mut cfg = old.config.clone();
    if out.is_some() {
        cfg.out = out;
    }
    let new = run(&cfg, workers.unwrap_or(old.workers))?;
    let mut differ = Vec::new();
    for o in &old.outputs {
        if new.manifest.digest_of(&o.file) != Some(o.sha256.as_str()) {
            differ.push(o.file.clone());
        }
    }
    for o in &new.manifest.outputs {
        if old.digest_of(&o.file).is_none() {
            differ.push(o.file.clone());
        }
    }
    Ok((new, differ))
}

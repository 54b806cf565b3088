use std::path::Path;
use std::process::Command;

use gffperc_cli::manifest::{latest, RunManifest};
use gffperc_cli::{rerun, run, Experiment, RunConfig};

fn config(exp: Experiment, toml: &str, out: &Path) -> RunConfig {
    let mut c = RunConfig::from_toml(toml).unwrap().resolve(exp).unwrap();
    c.out = Some(out.to_path_buf());
    c
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gffperc"))
}

#[test]
fn capacity_sweep_approaches_pi_over_three() {
    let t = tempfile::tempdir().unwrap();
    let c = config(Experiment::CapacitySweep, "sizes = [256, 1024, 4096]\n", t.path());
    let o = run(&c, 1).unwrap();
    assert!(o.manifest.complete);
    let mut r = csv::Reader::from_path(o.dir.join("capacity.csv")).unwrap();
    let norm: Vec<f64> = r.records().map(|x| x.unwrap()[3].parse().unwrap()).collect();
    let gap: Vec<f64> = norm.iter().map(|v| (v - std::f64::consts::PI / 3.0).abs()).collect();
    assert!(gap[1] < gap[0] && gap[2] < gap[1], "{norm:?}");
}

#[test]
fn rerun_reproduces_every_output() {
    let t = tempfile::tempdir().unwrap();
    let c = config(Experiment::CoarseGrainDemo, "paths = 6\nporous_paths = 1\nchunk = 2\n", t.path());
    let a = run(&c, 2).unwrap();
    let (b, differ) = rerun(&a.dir.join("manifest.json"), None, Some(1)).unwrap();
    assert!(differ.is_empty(), "{differ:?}");
    assert_ne!(a.dir, b.dir);
    assert_eq!(latest(t.path()).unwrap(), b.dir);
    let m = RunManifest::load(&b.dir.join("manifest.json")).unwrap();
    assert_eq!(m.config, a.manifest.config);
}

#[test]
fn field_samples_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let c = config(Experiment::FieldSample, "n = 6\nreplicas = 2\n", t.path());
    let o = run(&c, 1).unwrap();
    assert!(o.manifest.complete);
    assert_eq!(o.manifest.outputs.iter().filter(|f| f.file.ends_with(".bin")).count(), 2);
}

#[test]
fn validation_errors_are_itemised_and_exit_two() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.toml");
    std::fs::write(&cfg, "replicas = 0\nsizes = [8]\n").unwrap();
    let out = bin().args(["hstar-estimate", "--config"]).arg(&cfg).arg("--out").arg(t.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("replica count") && err.contains("at least 3 sizes"), "{err}");
    std::fs::write(&cfg, "sizez = [8]\n").unwrap();
    let out = bin().args(["capacity-sweep", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sizez"));
}

#[test]
fn binary_runs_and_flags_override_config() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.toml");
    std::fs::write(&cfg, "n = 40\nreplicas = 3\nsampler = \"dirichlet\"\nmargin = 2\nrelaxed_k = false\n").unwrap();
    // K = 4 needs relaxed mode
    let out = bin().args(["ef-inclusion", "--config"]).arg(&cfg).arg("--out").arg(t.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["ef-inclusion", "--relaxed-k", "--seed", "9", "--workers", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(t.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = RunManifest::load(&latest(t.path()).unwrap().join("manifest.json")).unwrap();
    assert_eq!(m.config.seed, Some(9));
    assert!(m.checks.iter().all(|c| c.passed));
    let rows = std::fs::read_to_string(latest(t.path()).unwrap().join("ef.csv")).unwrap();
    for l in rows.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f[1], "9");
        // witness inclusion holds whenever the one-arm event occurs
        assert!(f[2] == "false" || f[8] == "true", "{l}");
    }
}

#[test]
fn scan_fit_has_positive_slope_above_the_critical_level() {
    let t = tempfile::tempdir().unwrap();
    let c = config(Experiment::OneArmScan, "sizes = [4, 8, 12]\nlevels = [1.6]\nreplicas = 3000\nmargin = 4\n", t.path());
    let o = run(&c, 1).unwrap();
    let fit = std::fs::read_to_string(o.dir.join("fit.csv")).unwrap();
    let row: Vec<String> = fit.lines().nth(1).unwrap().split(',').map(String::from).collect();
    assert_eq!(row[1], "above");
    assert!(row[3].parse::<f64>().unwrap() > 0.0, "{fit}");
    let scan = std::fs::read_to_string(o.dir.join("scan.csv")).unwrap();
    let p: Vec<f64> = scan.lines().skip(1).map(|l| l.split(',').nth(7).unwrap().parse().unwrap()).collect();
    assert!(p.windows(2).all(|w| w[1] <= w[0]), "{p:?}");
}

//! Run directories and manifests.
//!
//! Each run gets a fresh `<out>/<experiment>-NNNN` directory; existing
//! directories are never reused. `<out>/LATEST` names the most recent one.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const SCHEMA: &str = "gffperc-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LATEST_FILE: &str = "LATEST";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub seed: u64,
    /// First and one-past-last replica (or stream) index.
    pub replicas: (u64, u64),
    pub status: TaskStatus,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    pub rows: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub experiment: String,
    pub config: RunConfig,
    pub code_version: String,
    pub workers: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub tasks: Vec<TaskRecord>,
    pub outputs: Vec<OutputRecord>,
    pub checks: Vec<CheckRecord>,
    pub notes: Vec<String>,
    /// All tasks complete and every check passed.
    pub complete: bool,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.schema != SCHEMA {
            bail!("unsupported manifest schema '{}' (expected '{SCHEMA}')", m.schema);
        }
        Ok(m)
    }

    pub fn digest_of(&self, file: &str) -> Option<&str> {
        self.outputs.iter().find(|o| o.file == file).map(|o| o.sha256.as_str())
    }
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A fresh run directory below `out`.
pub fn create_run_dir(out: &Path, experiment: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for i in 1..100_000 {
        let dir = out.join(format!("{experiment}-{i:04}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    bail!("no free run directory below {}", out.display())
}

/// Write `bytes` to a new file in `dir`, returning its record.
pub fn write_output(dir: &Path, name: &str, bytes: &[u8], rows: Option<usize>) -> Result<OutputRecord> {
    let path = dir.join(name);
    let mut f = fs::OpenOptions::new().write(true).create_new(true).open(&path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes)?;
    Ok(OutputRecord { file: name.to_string(), sha256: sha256_hex(bytes), rows })
}

/// Serialize rows to CSV (header from the row type).
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?)
}

pub fn write_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m)?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    let out = dir.parent().unwrap_or(Path::new("."));
    let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    fs::write(out.join(LATEST_FILE), format!("{name}\n"))?;
    Ok(())
}

/// The directory named by `<out>/LATEST`.
pub fn latest(out: &Path) -> Result<PathBuf> {
    let name = fs::read_to_string(out.join(LATEST_FILE)).with_context(|| format!("no {LATEST_FILE} in {}", out.display()))?;
    Ok(out.join(name.trim()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_are_never_reused() {
        let t = tempfile::tempdir().unwrap();
        let a = create_run_dir(t.path(), "x").unwrap();
        let b = create_run_dir(t.path(), "x").unwrap();
        assert_ne!(a, b);
        write_output(&a, "f.csv", b"1\n", Some(1)).unwrap();
        assert!(write_output(&a, "f.csv", b"2\n", Some(1)).is_err());
    }

    #[test]
    fn csv_header_from_fields() {
        #[derive(Serialize)]
        struct Row {
            a: i64,
            b: f64,
        }
        let b = csv_bytes(&[Row { a: 1, b: 0.5 }]).unwrap();
        assert_eq!(String::from_utf8(b).unwrap(), "a,b\n1,0.5\n");
    }
}

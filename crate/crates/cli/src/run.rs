//! Run directories and their manifests.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Environment variable naming the default output root.
pub const RUNS_DIR_ENV: &str = "DIT_RUNS_DIR";

const DEFAULT_ROOT: &str = "runs";

/// What a run did, written as `manifest.json` in its directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub started_at: String,
    pub wall_clock_s: f64,
    /// Resolved configuration; usable as `--config` to repeat the run.
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    /// Artifact paths relative to the run directory.
    pub artifacts: Vec<String>,
    /// Declared artifacts that were not written.
    pub missing: Vec<String>,
    /// `ok` or the error that ended the run.
    pub status: String,
}

/// An in-progress run.
pub struct Run {
    pub dir: PathBuf,
    subcommand: String,
    started_at: DateTime<Utc>,
    clock: Instant,
    config: Value,
    seeds: BTreeMap<String, u64>,
    artifacts: Vec<String>,
}

impl Run {
    /// Creates `out` or `<root>/<timestamp>-<subcommand>`.
    pub fn start(subcommand: &str, out: Option<&Path>) -> Result<Self> {
        let started_at = Utc::now();
        let dir = match out {
            Some(dir) => dir.to_path_buf(),
            None => {
                let root = env::var_os(RUNS_DIR_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| DEFAULT_ROOT.into());
                let stamp = started_at.format("%Y%m%dT%H%M%S%.3fZ");
                unique(root.join(format!("{stamp}-{subcommand}")))
            }
        };
        fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create run directory {}", dir.display()))?;
        Ok(Run {
            dir,
            subcommand: subcommand.into(),
            started_at,
            clock: Instant::now(),
            config: Value::Null,
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn set_config(&mut self, config: Value) {
        self.config = config;
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.into(), value);
    }

    /// Declares an artifact and returns its path.
    pub fn artifact(&mut self, relative: &str) -> PathBuf {
        if !self.artifacts.iter().any(|a| a == relative) {
            self.artifacts.push(relative.into());
        }
        self.dir.join(relative)
    }

    /// Writes the manifest. Declared artifacts that do not exist turn an
    /// otherwise successful run into a failure.
    pub fn finish(self, outcome: Result<()>) -> Result<RunManifest> {
        let (written, missing): (Vec<String>, Vec<String>) = self
            .artifacts
            .into_iter()
            .partition(|a| self.dir.join(a).exists());
        let status = match &outcome {
            Ok(()) if missing.is_empty() => "ok".to_string(),
            Ok(()) => format!("missing artifacts: {}", missing.join(", ")),
            Err(e) => format!("{e:#}"),
        };
        let manifest = RunManifest {
            subcommand: self.subcommand,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_at: self.started_at.to_rfc3339(),
            wall_clock_s: self.clock.elapsed().as_secs_f64(),
            config: self.config,
            seeds: self.seeds,
            artifacts: written,
            missing,
            status,
        };
        let path = self.dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        outcome?;
        if !manifest.missing.is_empty() {
            anyhow::bail!(
                "run finished without artifacts: {}",
                manifest.missing.join(", ")
            );
        }
        Ok(manifest)
    }
}

/// `path`, or `path-2`, `path-3`, ... if it already exists.
fn unique(path: PathBuf) -> PathBuf {
    if !path.exists() {
        return path;
    }
    (2..)
        .map(|i| PathBuf::from(format!("{}-{i}", path.display())))
        .find(|p| !p.exists())
        .expect("unbounded")
}

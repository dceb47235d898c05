//! Scenario runner: validated config in, atomically written CSV/JSON
//! artifacts and a manifest out.

mod config;
mod report;
mod scenarios;

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;

pub use config::{
    ExperimentConfig, ModelSpec, Preset, Scenario, Sequence, Tolerances, CONFIG_SCHEMA_VERSION,
};
pub use report::emit_report;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// One output file, named relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub file: String,
}

/// A configured tolerance applied to one computed number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value ≤ threshold`.
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, pass: value <= threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    /// Seconds since the Unix epoch at the start of the run.
    pub timestamp: u64,
    pub seed: u64,
    pub scenario: Scenario,
    pub config: ExperimentConfig,
    pub outputs: Vec<Artifact>,
    pub checks: Vec<Check>,
    /// Short human-readable findings, in display order.
    pub headline: Vec<String>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// What a scenario hands back before anything touches the disk.
pub(crate) struct ScenarioOutput {
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub headline: Vec<String>,
}

/// Validates `config`, runs its scenario, writes every artifact and the
/// manifest into `out_dir`, and returns the manifest.
///
/// Artifacts depend only on the config (seed included); the manifest also
/// records the timestamp and wall time.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let start = Instant::now();
    let out = scenarios::dispatch(config)?;
    let mut outputs = Vec::with_capacity(out.files.len());
    for (file, body) in &out.files {
        atomic_write(&out_dir.join(file), body.as_bytes())?;
        outputs.push(Artifact {
            name: file.rsplit_once('.').map_or(file.as_str(), |(stem, _)| stem).to_string(),
            file: file.clone(),
        });
    }
    let manifest = RunManifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp,
        seed: config.seed,
        scenario: config.scenario,
        config: config.clone(),
        outputs,
        checks: out.checks,
        headline: out.headline,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    atomic_write(
        &out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}

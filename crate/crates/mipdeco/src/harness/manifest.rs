//! Per-run manifests.
//!
//! Every CLI run drops a `manifest.json` next to its outputs holding the
//! fully resolved configuration, the seeds that entered the run, tool
//! version, timestamps and wall time. Feeding the embedded configuration back
//! into the same build reproduces the outputs bit for bit.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};

use super::config::RunConfig;

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    /// Package name and version of the producing build.
    pub tool: String,
    pub version: String,
    /// The subcommand (plus its arguments) that produced the outputs.
    pub command: String,
    /// Seconds since the Unix epoch at completion time.
    pub finished_unix: u64,
    pub wall_seconds: f64,
    /// Fully resolved configuration after all overrides.
    pub config: RunConfig,
    /// Every instance seed that entered the run.
    pub seeds: Vec<u64>,
    /// File names written next to this manifest.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: RunConfig, seeds: Vec<u64>, wall_seconds: f64) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            finished_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_seconds,
            config,
            seeds,
            outputs: Vec::new(),
        }
    }

    /// Serializes to `dir/manifest.json` and returns the path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Persistence(e.to_string()))?;
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

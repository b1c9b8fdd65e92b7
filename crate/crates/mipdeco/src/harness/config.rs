//! TOML run configuration.
//!
//! Every knob has a default, so an empty file (or no file) is a valid
//! configuration. Unknown keys are rejected with the offending key named, at
//! the top level and inside every section.
//!
//! ```toml
//! [instance]
//! kind = "poisson"          # or "convection_diffusion"
//! h = 0.0625
//! n_time = 10
//! grid = 3                  # 3×3 candidate sources
//! budget = 2
//! seed = 0
//!
//! [ipm]                     # subsolver profile; see `IpmSettings` for the
//! kkt_tol = 1e-6            # full list. Reduced backends tighten the GMRES
//!                           # cap automatically (`for_reduced_backend`).
//!
//! [ipa]
//! epsilon0 = 1e6
//! sigma = 0.5
//! eps_feas = 0.1
//! p_max = 50
//! theta = 1
//! strategy = "per_timestep" # or "global"
//! rng_seed = 0
//!
//! [experiment]
//! instances = 5
//! base_seed = 0
//! sigma_tol = 1e-5
//! h_list = [0.0625, 0.03125]
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipa::IpaSettings;
use crate::ipm::IpmSettings;

use super::instance::InstanceSpec;

/// Batch-experiment knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of seeded instances per comparison batch.
    pub instances: usize,
    /// Instance k of a batch uses seed `base_seed + k`.
    pub base_seed: u64,
    /// Hankel-tail tolerance picking the reduced order where one is needed.
    pub sigma_tol: f64,
    /// Mesh steps of the order-vs-mesh table.
    pub h_list: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            instances: 5,
            base_seed: 0,
            sigma_tol: 1e-5,
            h_list: vec![1.0 / 16.0, 1.0 / 32.0],
        }
    }
}

/// Where run artifacts land.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
        }
    }
}

/// Complete resolved configuration of one CLI run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub instance: InstanceSpec,
    pub ipm: IpmSettings,
    pub ipa: IpaSettings,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

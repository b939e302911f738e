//! Run configuration: a JSON-loadable parameter tree shared by every
//! subcommand, schema-validated (unknown keys rejected) and hashed into a
//! collision-free run id.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::policynet::ArchProfile;
use crate::{Error, Result};

/// Environment variable naming the default data root.
pub const HOME_ENV: &str = "ADT_REACH_HOME";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Architecture profile: "desk" or "paper".
    pub arch: String,
    /// Root for datasets, checkpoints and reports; defaults to
    /// `$ADT_REACH_HOME` or `./data`.
    pub data_root: Option<PathBuf>,
    /// Worker cap for parallel evaluation.
    pub jobs: Option<usize>,

    // generation
    pub kind: Option<String>,
    pub domain: Option<String>,
    pub n: Option<usize>,
    pub trajectories: Option<usize>,
    pub labeled: bool,

    // training
    pub epochs: Option<usize>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub labeled_count: Option<usize>,
    pub unlabeled_count: Option<usize>,
    pub pi: bool,
    pub setpoint: f64,
    pub fixed_gamma: f64,
    pub beta: f64,
    pub augment: bool,

    // evaluation
    pub scenario: Option<String>,
    pub grid: Option<String>,
    pub trials: Option<usize>,
    pub sim_budgets: Vec<usize>,
    pub real_budgets: Vec<usize>,
    pub unlabeled_budgets: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            arch: "desk".to_string(),
            data_root: None,
            jobs: None,
            kind: None,
            domain: None,
            n: None,
            trajectories: None,
            labeled: true,
            epochs: None,
            steps: None,
            lr: None,
            batch: None,
            labeled_count: None,
            unlabeled_count: None,
            pi: true,
            setpoint: crate::transfer::DEFAULT_SETPOINT,
            fixed_gamma: 1.0,
            beta: 0.9,
            augment: true,
            scenario: None,
            grid: None,
            trials: None,
            sim_budgets: vec![],
            real_budgets: vec![],
            unlabeled_budgets: vec![],
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Format {
            path: path.display().to_string(),
            details: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!(
            "{}: {e}",
            path.display()
        )))
    }

    /// Fill the data root from the environment if unset.
    pub fn resolve(mut self) -> Self {
        if self.data_root.is_none() {
            self.data_root = Some(
                std::env::var_os(HOME_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("data")),
            );
        }
        self
    }

    pub fn data_root(&self) -> PathBuf {
        self.data_root.clone().unwrap_or_else(|| PathBuf::from("data"))
    }

    /// Content hash of the resolved configuration; used to key report and
    /// cache directories.
    pub fn run_id(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn arch_profile(&self) -> Result<ArchProfile> {
        match self.arch.as_str() {
            "desk" => Ok(ArchProfile::desk()),
            "paper" => Ok(ArchProfile::paper()),
            other => Err(Error::Config(format!(
                "unknown architecture profile `{other}` (expected desk or paper)"
            ))),
        }
    }
}

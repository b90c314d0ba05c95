use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::reservoir::RcHyperparams;

pub const MANIFEST_FILE: &str = "manifest.toml";

/// A file produced by a stage, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

/// Everything needed to regenerate a run: the full configuration (which carries
/// every seed), the hyperparameters actually used, and hashes of every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ExperimentConfig,
    /// Per-stage base seeds, duplicated from the configuration for quick reference.
    pub seeds: BTreeMap<String, u64>,
    pub hyperparameters: Option<RcHyperparams>,
    pub stages_completed: Vec<String>,
    pub failure: Option<StageFailure>,
    /// Keyed by artifact name; paths are relative to the run directory.
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        let seeds = BTreeMap::from([
            ("cae".to_string(), config.cae.train.seed),
            ("reservoir".to_string(), config.reservoir.seed),
            ("bayesopt".to_string(), config.reservoir.bayesopt.seed),
            ("flow".to_string(), config.flow.train.seed),
            ("evaluate".to_string(), config.evaluate.seed),
        ]);
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds,
            hyperparameters: None,
            stages_completed: Vec::new(),
            failure: None,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn mark_completed(&mut self, stage: &str) {
        if !self.stages_completed.iter().any(|s| s == stage) {
            self.stages_completed.push(stage.to_string());
        }
        if self.failure.as_ref().is_some_and(|f| f.stage == stage) {
            self.failure = None;
        }
    }

    pub fn is_completed(&self, stage: &str) -> bool {
        self.stages_completed.iter().any(|s| s == stage)
    }

    pub fn record_artifact(&mut self, name: &str, rel_path: &str, bytes: &[u8]) {
        self.artifacts
            .insert(name.to_string(), ArtifactRecord { path: rel_path.to_string(), sha256: sha256_hex(bytes) });
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format(format!("manifest does not serialise: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format(format!("invalid manifest: {e}")))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST_FILE), self.to_toml()?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)
    }

    /// Recompute every recorded hash; returns the names whose files differ or are missing.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|(_, a)| std::fs::read(dir.join(&a.path)).map(|b| sha256_hex(&b) != a.sha256).unwrap_or(true))
            .map(|(n, _)| n.clone())
            .collect()
    }
}

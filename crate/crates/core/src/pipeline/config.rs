use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bayesopt::BoConfig;
use crate::burgers::{test_reynolds, train_reynolds, GridSpec};
use crate::cae::{CaeArchitecture, TrainConfig};
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::reservoir::{RcHyperparams, RcOptions};

/// Where the reservoir hyperparameters come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperMode {
    /// The published optimum, evaluated in the relaxed box.
    Table2,
    /// Gaussian-process search over the configured box.
    #[default]
    Bayesopt,
    /// `reservoir.manual`.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub grid: GridSpec,
    pub train_reynolds: Vec<f64>,
    pub test_reynolds: Vec<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { grid: GridSpec::default(), train_reynolds: train_reynolds(), test_reynolds: test_reynolds() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CaeConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Layer stacks; the reference architecture when absent.
    pub architecture: Option<CaeArchitecture>,
}

impl CaeConfig {
    pub fn architecture(&self) -> CaeArchitecture {
        self.architecture.clone().unwrap_or_else(CaeArchitecture::reference)
    }
}

/// Score of a hyperparameter point on the held-out trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationObjective {
    /// Teacher-forced one-step latent MSE after the washout.
    OneStep,
    /// Noise-free closed-loop latent MSE after the evaluation warm-up. One-step scores
    /// favour near-zero ridge penalties whose rollouts drift or diverge.
    #[default]
    ClosedLoop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReservoirConfig {
    pub mode: HyperMode,
    pub objective: ValidationObjective,
    pub manual: Option<RcHyperparams>,
    /// `options.relaxed_bounds` admits ρ below the standard floor, for both the search
    /// box and training; it is forced on in `table2` mode.
    pub options: RcOptions,
    pub seed: u64,
    /// Fraction of training trajectories held out when scoring a hyperparameter point.
    pub validation_fraction: f64,
    pub bayesopt: BoConfig,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        Self {
            mode: HyperMode::Bayesopt,
            objective: ValidationObjective::ClosedLoop,
            manual: None,
            options: RcOptions::default(),
            seed: 17,
            validation_fraction: 0.1,
            bayesopt: BoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NfConfig {
    pub enabled: bool,
    pub train: FlowConfig,
}

impl Default for NfConfig {
    fn default() -> Self {
        Self { enabled: true, train: FlowConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub warmup: usize,
    /// Noise-seeded rollouts averaged per field.
    pub samples: usize,
    pub seed: u64,
    /// Reynolds numbers of the single-field experiments; each must be in the test set.
    pub experiment_reynolds: Vec<f64>,
    /// Time at which shock location and steepness are compared.
    pub shock_time: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { warmup: super::WARMUP, samples: 8, seed: 29, experiment_reynolds: vec![1050.0, 2250.0], shock_time: 2.0 }
    }
}

/// Every knob of a run. Missing sections and keys take their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub cae: CaeConfig,
    pub reservoir: ReservoirConfig,
    pub flow: NfConfig,
    pub evaluate: EvaluateConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn relaxed(&self) -> bool {
        self.reservoir.options.relaxed_bounds || self.reservoir.mode == HyperMode::Table2
    }

    /// Reservoir options with the effective box choice applied.
    pub fn rc_options(&self) -> RcOptions {
        RcOptions { relaxed_bounds: self.relaxed(), ..self.reservoir.options }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.grid.validate()?;
        if self.data.train_reynolds.is_empty() || self.data.test_reynolds.is_empty() {
            return Err(Error::config("train and test Reynolds lists must be non-empty"));
        }
        if self.data.train_reynolds.iter().chain(&self.data.test_reynolds).any(|r| !(*r > 0.0)) {
            return Err(Error::config("Reynolds numbers must be positive"));
        }
        self.cae.train.validate()?;
        let arch = self.cae.architecture();
        arch.validate()?;
        if arch.input_len != self.data.grid.space_points {
            return Err(Error::config(format!(
                "autoencoder input length {} differs from the grid's {} points",
                arch.input_len, self.data.grid.space_points
            )));
        }
        if self.flow.enabled {
            self.flow.train.validate()?;
        }
        if self.reservoir.mode == HyperMode::Manual {
            let h = self.reservoir.manual.ok_or_else(|| Error::config("manual mode needs [reservoir.manual]"))?;
            h.validate(self.relaxed())?;
        }
        let v = self.reservoir.validation_fraction;
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::config("reservoir validation fraction must lie strictly between 0 and 1"));
        }
        let e = &self.evaluate;
        if e.warmup == 0 || e.warmup >= self.data.grid.time_points {
            return Err(Error::config("warm-up must leave at least one predicted step"));
        }
        if e.samples == 0 {
            return Err(Error::config("at least one rollout sample is required"));
        }
        if self.data.grid.time_index(e.shock_time).is_none() {
            return Err(Error::config(format!("shock time {} is not a grid time", e.shock_time)));
        }
        if let Some(r) = e.experiment_reynolds.iter().find(|r| !self.data.test_reynolds.contains(r)) {
            return Err(Error::config(format!("experiment Reynolds number {r} is not in the test set")));
        }
        Ok(())
    }
}

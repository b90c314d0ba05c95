use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::arch::CaeArchitecture;
use super::model::{CaeModel, Stack};
use crate::burgers::ParametricDataset;
use crate::diff::{AdamConfig, AdamState, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            learning_rate: 1e-3,
            validation_fraction: 0.10,
            patience: 50,
            max_epochs: 2000,
            seed: 11,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("validation fraction must lie strictly between 0 and 1"));
        }
        if !(self.learning_rate > 0.0) || self.max_epochs == 0 {
            return Err(Error::config("learning rate and epoch budget must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    /// Snapshot indices held out for early stopping.
    pub validation_indices: Vec<usize>,
}

/// Train on every snapshot of `dataset` as an independent sample.
pub fn train_cae(
    dataset: &ParametricDataset,
    arch: CaeArchitecture,
    config: &TrainConfig,
    progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<(CaeModel, TrainReport)> {
    let snapshots: Vec<&[f64]> = dataset.fields().iter().flat_map(|f| f.snapshots()).collect();
    train_cae_on(&snapshots, arch, config, progress)
}

/// Minimise mean-squared reconstruction error with Adam, stopping early on a random
/// held-out subset and returning the best-validation parameters.
pub fn train_cae_on(
    snapshots: &[&[f64]],
    arch: CaeArchitecture,
    config: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<(CaeModel, TrainReport)> {
    config.validate()?;
    if snapshots.len() < 2 {
        return Err(Error::config("need at least two snapshots to train"));
    }
    let mut model = CaeModel::init(arch, derive_seed(config.seed, 1))?;
    let k = model.input_len();
    if let Some(s) = snapshots.iter().find(|s| s.len() != k) {
        return Err(Error::usage(format!("snapshot length {} does not match encoder input {k}", s.len())));
    }

    let mut rng = seeded(derive_seed(config.seed, 2));
    let mut order: Vec<usize> = (0..snapshots.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((snapshots.len() as f64 * config.validation_fraction).round() as usize).clamp(1, snapshots.len() - 1);
    let mut validation: Vec<usize> = order[..n_val].to_vec();
    validation.sort_unstable();
    let mut training: Vec<usize> = order[n_val..].to_vec();
    training.sort_unstable();

    let mut adam = AdamState::new(AdamConfig::with_learning_rate(config.learning_rate), model.params.tensors());
    let shapes: Vec<Vec<usize>> = model.params.shapes().iter().map(|s| s.to_vec()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();

    let mut best_params = model.params.clone();
    let mut best_val = validation_loss(&model, snapshots, &validation)?;
    let mut best_epoch = 0;
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        training.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in training.chunks(config.batch_size) {
            let data: Vec<f64> = batch.iter().flat_map(|&i| snapshots[i].iter().copied()).collect();
            let input = Tensor::new(vec![batch.len(), 1, k], data)?;
            let step = (|| -> Result<f64> {
                let mut tape = Tape::new();
                let x = tape.constant(input.clone())?;
                let z = model.record(&mut tape, Stack::Encoder, x)?;
                let y = model.record(&mut tape, Stack::Decoder, z)?;
                let loss = tape.mse(y, x)?;
                let value = tape.value(loss).item();
                let grads = tape.backward(loss)?.dense(&shape_refs);
                adam.step(model.params.tensors_mut(), &grads)?;
                Ok(value)
            })();
            let value = step.map_err(|e| match e {
                Error::Numerical(msg) => {
                    Error::numerical(format!("autoencoder training diverged in epoch {epoch}: {msg}"))
                }
                other => other,
            })?;
            total += value * batch.len() as f64;
        }
        let train_loss = total / training.len() as f64;
        let val = validation_loss(&model, snapshots, &validation)
            .map_err(|e| Error::numerical(format!("autoencoder validation failed in epoch {epoch}: {e}")))?;
        let record = EpochRecord { epoch, train_loss, validation_loss: val };
        history.push(record);
        if let Some(cb) = progress.as_mut() {
            cb(&record);
        }
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best_params = model.params.clone();
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    model.params = best_params;
    Ok((model, TrainReport { history, best_epoch, best_validation_loss: best_val, validation_indices: validation }))
}

fn validation_loss(model: &CaeModel, snapshots: &[&[f64]], indices: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in indices.chunks(200) {
        let batch: Vec<&[f64]> = chunk.iter().map(|&i| snapshots[i]).collect();
        let recon = model.reconstruct_batch(&batch)?;
        for (u, r) in batch.iter().zip(&recon) {
            total += u.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            count += u.len();
        }
    }
    Ok(total / count as f64)
}

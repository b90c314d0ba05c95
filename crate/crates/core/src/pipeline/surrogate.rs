use crate::burgers::{GridSpec, ParametricDataset, SolutionField};
use crate::cae::CaeModel;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::reservoir::{predict_closed_loop_batch, LatentNoise, LatentTrajectory, ReservoirModel, Rollout};
use crate::rng::{derive_seed, seeded, SeededRng};

/// Encoder, parametric reservoir, optional error flow and decoder on one grid.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub cae: CaeModel,
    pub reservoir: ReservoirModel,
    pub flow: Option<FlowModel>,
    pub grid: GridSpec,
}

/// Result of one surrogate rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutput {
    /// Decoded warm-up reconstruction followed by decoded predictions.
    pub field: SolutionField,
    /// Encoded warm-up followed by fed-back latent states.
    pub latents: LatentTrajectory,
    pub warmup: usize,
}

impl SurrogateModel {
    pub fn new(cae: CaeModel, reservoir: ReservoirModel, flow: Option<FlowModel>, grid: GridSpec) -> Result<Self> {
        if cae.latent_dim() != reservoir.latent_dim() {
            return Err(Error::config(format!(
                "encoder latent dimension {} differs from the reservoir's {}",
                cae.latent_dim(),
                reservoir.latent_dim()
            )));
        }
        if flow.is_some() && cae.latent_dim() != 2 {
            return Err(Error::config("the error flow models 2-D latents only"));
        }
        if cae.input_len() != grid.space_points {
            return Err(Error::config(format!(
                "encoder expects {} samples, grid has {}",
                cae.input_len(),
                grid.space_points
            )));
        }
        Ok(Self { cae, reservoir, flow, grid })
    }

    pub fn noise(&self) -> Option<&dyn LatentNoise> {
        self.flow.as_ref().map(|f| f as &dyn LatentNoise)
    }

    /// Latent trajectory of every field in `dataset`.
    pub fn encode_dataset(&self, dataset: &ParametricDataset) -> Result<Vec<LatentTrajectory>> {
        encode_dataset(&self.cae, dataset)
    }

    /// Rollouts for several Reynolds numbers at once. `warmups[b]` holds the observed
    /// snapshots of rollout `b`; `seeds[b]` seeds its compensation noise (ignored
    /// without a flow).
    pub fn rollout_batch(
        &self,
        warmups: &[&[&[f64]]],
        reynolds: &[f64],
        steps: usize,
        seeds: &[u64],
    ) -> Result<Vec<RolloutOutput>> {
        if warmups.len() != reynolds.len() || warmups.len() != seeds.len() {
            return Err(Error::usage("rollout batch needs one Reynolds number and seed per warm-up"));
        }
        let warm = warmups.first().map_or(0, |w| w.len());
        if warm == 0 || warmups.iter().any(|w| w.len() != warm) {
            return Err(Error::usage("rollout warm-ups must share a non-zero length"));
        }
        let encoded: Vec<Vec<Vec<f64>>> = warmups.iter().map(|w| self.cae.encode_batch(w)).collect::<Result<_>>()?;
        let mut rngs: Vec<SeededRng> = seeds.iter().map(|&s| seeded(s)).collect();
        let with_noise = self.flow.is_some();
        let mut requests: Vec<Rollout> = encoded
            .iter()
            .zip(reynolds)
            .zip(rngs.iter_mut())
            .map(|((w, &re), rng)| Rollout { reynolds: re, warmup: w, rng: with_noise.then_some(rng) })
            .collect();
        let predicted = predict_closed_loop_batch(&self.reservoir, &mut requests, steps, self.noise())?;
        let total = warm + steps;
        let grid = GridSpec { t_max: self.grid.dt() * total as f64, time_points: total, ..self.grid };
        encoded
            .into_iter()
            .zip(predicted)
            .zip(reynolds)
            .map(|((mut states, pred), &re)| {
                states.extend(pred);
                let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
                let decoded = self.cae.decode_batch(&refs)?;
                let field = SolutionField::new(re, grid, decoded.concat())?;
                let latents = LatentTrajectory::new(re, grid.ts(), states)?;
                Ok(RolloutOutput { field, latents, warmup: warm })
            })
            .collect()
    }
}

/// Encode every field of `dataset`.
pub fn encode_dataset(cae: &CaeModel, dataset: &ParametricDataset) -> Result<Vec<LatentTrajectory>> {
    dataset
        .fields()
        .iter()
        .map(|f| {
            let snaps: Vec<&[f64]> = f.snapshots().collect();
            LatentTrajectory::new(f.reynolds, f.grid.ts(), cae.encode_batch(&snaps)?)
        })
        .collect()
}

/// Encode the first `warmup_field.len()` snapshots, run the reservoir closed loop for
/// `steps` further steps (with flow compensation when present) and decode everything.
pub fn rollout(
    model: &SurrogateModel,
    warmup_field: &[&[f64]],
    reynolds: f64,
    steps: usize,
    seed: u64,
) -> Result<RolloutOutput> {
    Ok(model.rollout_batch(&[warmup_field], &[reynolds], steps, &[seed])?.pop().unwrap())
}

/// Noise seed of rollout `sample` for the field at position `index` of a dataset.
pub fn rollout_seed(base: u64, index: usize, sample: usize) -> u64 {
    derive_seed(derive_seed(base, index as u64), sample as u64)
}

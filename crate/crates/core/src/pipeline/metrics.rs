use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::surrogate::{encode_dataset, rollout_seed, RolloutOutput, SurrogateModel};
use crate::burgers::{DatasetRole, ParametricDataset, SolutionField};
use crate::cae::CaeModel;
use crate::error::{Error, Result};
use crate::reservoir::LatentTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    /// Mean-square autoencoder reconstruction error.
    Cae,
    /// Mean-square error of the decoded closed-loop prediction.
    CaeRcNf,
    /// Latent mean-square prediction error of one dimension (1-based).
    RcNf(usize),
}

impl MetricKind {
    pub fn label(&self) -> String {
        match self {
            MetricKind::Cae => "L2_CAE".into(),
            MetricKind::CaeRcNf => "L2_CAE-RC-NF".into(),
            MetricKind::RcNf(i) => format!("L2_RC-NF_y{i}"),
        }
    }
}

/// One metric over the grid times. `warmup[j]` marks values at teacher-forced times,
/// which report the reconstruction-only value and are excluded from time averages.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub kind: MetricKind,
    pub role: DatasetRole,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub warmup: Vec<bool>,
}

impl MetricSeries {
    /// Mean over the non-warm-up times.
    pub fn time_average(&self) -> f64 {
        let vals: Vec<f64> = self.values.iter().zip(&self.warmup).filter(|(_, w)| !**w).map(|(v, _)| *v).collect();
        if vals.is_empty() {
            return f64::NAN;
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("t,{},warmup\n", self.kind.label());
        for ((t, v), w) in self.times.iter().zip(&self.values).zip(&self.warmup) {
            s.push_str(&format!("{t},{v},{}\n", u8::from(*w)));
        }
        s
    }
}

fn mean_square(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Rollouts of every field of a dataset, with the reference data they are scored against.
#[derive(Debug, Clone)]
pub struct DatasetEvaluation {
    pub role: DatasetRole,
    pub reynolds: Vec<f64>,
    pub times: Vec<f64>,
    pub warmup: usize,
    /// `truth[m]`: reference snapshots, time-major.
    truth: Vec<Vec<Vec<f64>>>,
    reconstruction: Vec<Vec<Vec<f64>>>,
    latents: Vec<LatentTrajectory>,
    /// `rollouts[s][m]`.
    pub rollouts: Vec<Vec<RolloutOutput>>,
}

/// Roll out every field of `dataset` from its first `warmup` snapshots, `samples`
/// times with distinct noise seeds (one sample suffices without a flow).
pub fn evaluate_dataset(
    model: &SurrogateModel,
    dataset: &ParametricDataset,
    warmup: usize,
    samples: usize,
    seed: u64,
) -> Result<DatasetEvaluation> {
    let grid = dataset.grid();
    if grid != model.grid {
        return Err(Error::config("dataset grid differs from the surrogate's"));
    }
    let t = grid.time_points;
    if warmup == 0 || warmup > t {
        return Err(Error::config(format!("warm-up must lie in 1..={t}, got {warmup}")));
    }
    let samples = if model.flow.is_some() { samples.max(1) } else { 1 };
    let truth: Vec<Vec<Vec<f64>>> =
        dataset.fields().iter().map(|f| f.snapshots().map(<[f64]>::to_vec).collect()).collect();
    let reconstruction = dataset
        .fields()
        .iter()
        .map(|f| model.cae.reconstruct_batch(&f.snapshots().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let latents = model.encode_dataset(dataset)?;
    let reynolds = dataset.reynolds();
    let warmups: Vec<Vec<&[f64]>> = dataset.fields().iter().map(|f| f.snapshots().take(warmup).collect()).collect();
    let refs: Vec<&[&[f64]]> = warmups.iter().map(Vec::as_slice).collect();
    // Samples are independent streams, so they run concurrently without changing results.
    let rollouts = (0..samples)
        .into_par_iter()
        .map(|s| {
            let seeds: Vec<u64> = (0..reynolds.len()).map(|m| rollout_seed(seed, m, s)).collect();
            model.rollout_batch(&refs, &reynolds, t - warmup, &seeds)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetEvaluation {
        role: dataset.role,
        reynolds,
        times: grid.ts(),
        warmup,
        truth,
        reconstruction,
        latents,
        rollouts,
    })
}

impl DatasetEvaluation {
    /// Score externally supplied latent trajectories (`predicted[s][m]`, covering every
    /// grid time) by decoding them with `cae`. Used for oracle substitution.
    pub fn from_latents(
        cae: &CaeModel,
        dataset: &ParametricDataset,
        warmup: usize,
        predicted: Vec<Vec<LatentTrajectory>>,
    ) -> Result<Self> {
        let grid = dataset.grid();
        if predicted.is_empty() || predicted.iter().any(|p| p.len() != dataset.len()) {
            return Err(Error::usage("need at least one sample with one trajectory per field"));
        }
        if predicted.iter().flatten().any(|y| y.len() != grid.time_points) {
            return Err(Error::shape("predicted trajectories must cover every grid time"));
        }
        let truth: Vec<Vec<Vec<f64>>> =
            dataset.fields().iter().map(|f| f.snapshots().map(<[f64]>::to_vec).collect()).collect();
        let reconstruction = dataset
            .fields()
            .iter()
            .map(|f| cae.reconstruct_batch(&f.snapshots().collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let latents = encode_dataset(cae, dataset)?;
        let rollouts = predicted
            .into_iter()
            .map(|sample| {
                sample
                    .into_iter()
                    .map(|y| {
                        let refs: Vec<&[f64]> = y.states.iter().map(Vec::as_slice).collect();
                        let field = SolutionField::new(y.reynolds, grid, cae.decode_batch(&refs)?.concat())?;
                        Ok(RolloutOutput { field, latents: y, warmup })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DatasetEvaluation {
            role: dataset.role,
            reynolds: dataset.reynolds(),
            times: grid.ts(),
            warmup,
            truth,
            reconstruction,
            latents,
            rollouts,
        })
    }

    fn check_time(&self, j: usize) -> Result<()> {
        if j >= self.times.len() {
            return Err(Error::usage(format!("time index {j} is off the grid")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.reynolds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reynolds.is_empty()
    }

    pub fn samples(&self) -> usize {
        self.rollouts.len()
    }

    /// Reconstruction error averaged over fields and space at time index `j`.
    pub fn cae(&self, j: usize) -> Result<f64> {
        self.check_time(j)?;
        let m = self.len() as f64;
        Ok(self.truth.iter().zip(&self.reconstruction).map(|(u, r)| mean_square(&u[j], &r[j])).sum::<f64>() / m)
    }

    fn sample_range(&self, sample: Option<usize>) -> Result<std::ops::Range<usize>> {
        match sample {
            None => Ok(0..self.samples()),
            Some(s) if s < self.samples() => Ok(s..s + 1),
            Some(s) => Err(Error::usage(format!("rollout sample {s} out of range 0..{}", self.samples()))),
        }
    }

    /// Decoded-prediction error at time index `j`, for one rollout sample or averaged
    /// over all of them. Warm-up times report the reconstruction error.
    pub fn caercnf(&self, j: usize, sample: Option<usize>) -> Result<f64> {
        self.check_time(j)?;
        let range = self.sample_range(sample)?;
        if j < self.warmup {
            return self.cae(j);
        }
        let m = self.len() as f64;
        let n = range.len() as f64;
        Ok(range
            .map(|s| {
                let runs = &self.rollouts[s];
                runs.iter().zip(&self.truth).map(|(r, u)| mean_square(&u[j], r.field.snapshot(j))).sum::<f64>() / m
            })
            .sum::<f64>()
            / n)
    }

    /// Latent prediction error of dimension `dim` (1-based) at time index `j`; zero at
    /// warm-up times, where the reservoir sees the encoded data.
    pub fn rcnf(&self, j: usize, dim: usize, sample: Option<usize>) -> Result<f64> {
        self.check_time(j)?;
        let range = self.sample_range(sample)?;
        let d = self.latents.first().map_or(0, |l| l.dim());
        if dim == 0 || dim > d {
            return Err(Error::usage(format!("latent dimension must lie in 1..={d}, got {dim}")));
        }
        if j < self.warmup {
            return Ok(0.0);
        }
        let m = self.len() as f64;
        let n = range.len() as f64;
        Ok(range
            .map(|s| {
                let runs = &self.rollouts[s];
                runs.iter()
                    .zip(&self.latents)
                    .map(|(r, y)| (y.states[j][dim - 1] - r.latents.states[j][dim - 1]).powi(2))
                    .sum::<f64>()
                    / m
            })
            .sum::<f64>()
            / n)
    }

    /// Series averaged over rollout samples.
    pub fn series(&self, kind: MetricKind) -> Result<MetricSeries> {
        self.sample_series(kind, None)
    }

    /// Series of one rollout sample, or the sample mean for `None`.
    pub fn sample_series(&self, kind: MetricKind, sample: Option<usize>) -> Result<MetricSeries> {
        let values = (0..self.times.len())
            .map(|j| match kind {
                MetricKind::Cae => self.cae(j),
                MetricKind::CaeRcNf => self.caercnf(j, sample),
                MetricKind::RcNf(i) => self.rcnf(j, i, sample),
            })
            .collect::<Result<Vec<_>>>()?;
        let warmup = (0..self.times.len()).map(|j| kind != MetricKind::Cae && j < self.warmup).collect();
        Ok(MetricSeries { kind, role: self.role, times: self.times.clone(), values, warmup })
    }

    pub fn kinds(&self) -> Vec<MetricKind> {
        let d = self.latents.first().map_or(0, |l| l.dim());
        let mut kinds = vec![MetricKind::Cae, MetricKind::CaeRcNf];
        kinds.extend((1..=d).map(MetricKind::RcNf));
        kinds
    }

    /// Every metric: reconstruction, decoded prediction and each latent dimension.
    pub fn all_series(&self) -> Result<Vec<MetricSeries>> {
        self.kinds().into_iter().map(|k| self.series(k)).collect()
    }

    pub fn truth(&self, m: usize) -> &[Vec<f64>] {
        &self.truth[m]
    }

    pub fn encoded(&self, m: usize) -> &LatentTrajectory {
        &self.latents[m]
    }

    /// Sample-mean predicted snapshot of field `m` at time index `j`.
    pub fn mean_prediction(&self, m: usize, j: usize) -> Vec<f64> {
        let k = self.truth[m][j].len();
        let mut acc = vec![0.0; k];
        for runs in &self.rollouts {
            acc.iter_mut().zip(runs[m].field.snapshot(j)).for_each(|(a, v)| *a += v);
        }
        acc.iter().map(|v| v / self.samples() as f64).collect()
    }
}

fn time_index(dataset: &ParametricDataset, t: f64) -> Result<usize> {
    dataset.grid().time_index(t).ok_or_else(|| Error::usage(format!("t = {t} is not a grid time")))
}

/// `(1/(M·K)) Σ_m Σ_k (u − G[F(u)])²` at grid time `t`.
pub fn metric_cae(model: &SurrogateModel, dataset: &ParametricDataset, t: f64) -> Result<f64> {
    let j = time_index(dataset, t)?;
    let m = dataset.len() as f64;
    let mut total = 0.0;
    for f in dataset.fields() {
        let u = f.snapshot(j);
        let r = model.cae.reconstruct_batch(&[u])?;
        total += mean_square(u, &r[0]);
    }
    Ok(total / m)
}

/// Decoded closed-loop error at grid time `t` for one noise seed, warm-up 10.
pub fn metric_caercnf(model: &SurrogateModel, dataset: &ParametricDataset, t: f64, seed: u64) -> Result<f64> {
    let j = time_index(dataset, t)?;
    evaluate_dataset(model, dataset, super::WARMUP, 1, seed)?.caercnf(j, None)
}

/// Latent closed-loop error of dimension `dim` (1-based) at grid time `t`, warm-up 10.
pub fn metric_rcnf(model: &SurrogateModel, dataset: &ParametricDataset, t: f64, dim: usize, seed: u64) -> Result<f64> {
    let j = time_index(dataset, t)?;
    if dim == 0 || dim > model.reservoir.latent_dim() {
        return Err(Error::usage(format!("latent dimension must be 1 or 2, got {dim}")));
    }
    evaluate_dataset(model, dataset, super::WARMUP, 1, seed)?.rcnf(j, dim, None)
}

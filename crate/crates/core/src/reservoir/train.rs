use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::hyper::RcHyperparams;
use super::model::{init_reservoir, InputScaling, ParameterChannel, ReservoirModel};
use super::readout::{fit_readout_weighted, StateMatrix};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Latent time series of one Reynolds number; `states[j]` is the latent vector at `times[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    pub reynolds: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl LatentTrajectory {
    pub fn new(reynolds: f64, times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != states.len() || states.is_empty() {
            return Err(Error::shape(format!("trajectory has {} times and {} states", times.len(), states.len())));
        }
        let d = states[0].len();
        if d == 0 || states.iter().any(|s| s.len() != d) {
            return Err(Error::shape("trajectory states must share one non-zero dimension"));
        }
        Ok(Self { reynolds, times, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// The first `n` steps.
    pub fn head(&self, n: usize) -> LatentTrajectory {
        let n = n.min(self.len());
        LatentTrajectory { reynolds: self.reynolds, times: self.times[..n].to_vec(), states: self.states[..n].to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    /// `Re / max(training Re)`.
    #[default]
    Scaled,
    /// Raw `ν = 1/Re`.
    Viscosity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RcOptions {
    pub nodes: usize,
    /// Leading driven states discarded from the readout fit.
    pub washout: usize,
    pub channel: ChannelMode,
    /// Standardise latent inputs per dimension before they enter the reservoir.
    pub standardize_inputs: bool,
    /// Accept hyperparameters from the relaxed box.
    pub relaxed_bounds: bool,
}

impl Default for RcOptions {
    fn default() -> Self {
        Self { nodes: 600, washout: 10, channel: ChannelMode::Scaled, standardize_inputs: false, relaxed_bounds: false }
    }
}

fn check_trajectories(trajs: &[LatentTrajectory], d: usize) -> Result<()> {
    if trajs.is_empty() {
        return Err(Error::config("reservoir training needs at least one trajectory"));
    }
    if trajs.iter().any(|t| t.dim() != d) {
        return Err(Error::shape("latent trajectories differ in dimension"));
    }
    Ok(())
}

/// Teacher-forced driving from `r = 0`. Returns, per trajectory, the states
/// `r_1 … r_{T−1}` where `r_{j+1}` has absorbed `Y_j`.
pub fn drive_teacher_forced(model: &ReservoirModel, trajs: &[LatentTrajectory]) -> Result<Vec<Vec<Vec<f64>>>> {
    check_trajectories(trajs, model.latent_dim())?;
    let n = model.nodes();
    let width = trajs.len();
    let steps = trajs.iter().map(|t| t.len()).max().unwrap_or(0);
    let params: Vec<f64> = trajs.iter().map(|t| model.channel.value(t.reynolds)).collect();
    let mut block = vec![0.0; n * width];
    let mut scratch = Vec::new();
    let mut out: Vec<Vec<Vec<f64>>> = trajs.iter().map(|t| Vec::with_capacity(t.len())).collect();
    let zero = vec![0.0; model.latent_dim()];
    for j in 0..steps.saturating_sub(1) {
        // Columns whose trajectory has ended keep being driven by zeros and are ignored.
        let inputs: Vec<&[f64]> =
            trajs.iter().map(|t| if j + 1 < t.len() { t.states[j].as_slice() } else { zero.as_slice() }).collect();
        model.step_block(&mut block, &inputs, &params, &mut scratch);
        for (b, t) in trajs.iter().enumerate() {
            if j + 1 < t.len() {
                out[b].push((0..n).map(|i| block[i * width + b]).collect());
            }
        }
    }
    for (b, states) in out.iter().enumerate() {
        if !states.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::numerical(format!("reservoir state became non-finite on trajectory {b}")));
        }
    }
    Ok(out)
}

/// Assemble `[1; r_{j+1}]` columns and `Y_{j+1}` targets, skipping the first `washout` states.
pub fn collect_training_pairs(
    model: &ReservoirModel,
    trajs: &[LatentTrajectory],
    washout: usize,
) -> Result<(StateMatrix, DMatrix<f64>, Vec<usize>)> {
    let driven = drive_teacher_forced(model, trajs)?;
    let n = model.nodes();
    let d = model.latent_dim();
    let mut cols = Vec::new();
    let mut targets = Vec::new();
    let mut owner = Vec::new();
    for (b, (t, states)) in trajs.iter().zip(&driven).enumerate() {
        for (j, r) in states.iter().enumerate().skip(washout) {
            let mut c = Vec::with_capacity(n + 1);
            c.push(1.0);
            c.extend_from_slice(r);
            cols.push(c);
            targets.push(&t.states[j + 1]);
            owner.push(b);
        }
    }
    if cols.is_empty() {
        return Err(Error::config(format!("washout {washout} leaves no training samples")));
    }
    let states = StateMatrix::from_columns(n + 1, &cols)?;
    let y = DMatrix::from_fn(d, targets.len(), |o, k| targets[k][o]);
    Ok((states, y, owner))
}

/// Draw a reservoir and fit its readout on teacher-forced training trajectories.
pub fn train_rc(
    trajs: &[LatentTrajectory],
    hyper: &RcHyperparams,
    options: &RcOptions,
    seed: u64,
) -> Result<ReservoirModel> {
    train_rc_weighted(trajs, None, hyper, options, seed)
}

/// As [`train_rc`], with an optional non-negative weight per trajectory.
pub fn train_rc_weighted(
    trajs: &[LatentTrajectory],
    weights: Option<&[f64]>,
    hyper: &RcHyperparams,
    options: &RcOptions,
    seed: u64,
) -> Result<ReservoirModel> {
    hyper.validate(options.relaxed_bounds)?;
    let d = trajs.first().map(|t| t.dim()).ok_or_else(|| Error::config("no training trajectories"))?;
    check_trajectories(trajs, d)?;
    if let Some(w) = weights {
        if w.len() != trajs.len() {
            return Err(Error::config("one weight per trajectory is required"));
        }
    }
    let mut model = init_reservoir(hyper, options.nodes, d, seed)?;
    model.channel = match options.channel {
        ChannelMode::Scaled => {
            let scale = trajs.iter().map(|t| t.reynolds).fold(0.0, f64::max);
            ParameterChannel::Scaled { scale }
        }
        ChannelMode::Viscosity => ParameterChannel::Viscosity,
    };
    if options.standardize_inputs {
        model.input_scaling =
            InputScaling::standardizing(trajs.iter().flat_map(|t| t.states.iter().map(|s| s.as_slice())), d);
    }
    let (states, targets, owner) = collect_training_pairs(&model, trajs, options.washout)?;
    let sample_weights: Option<Vec<f64>> = weights.map(|w| owner.iter().map(|&b| w[b]).collect());
    let readout = fit_readout_weighted(&states, &targets, sample_weights.as_deref(), hyper.regularization)?;
    model.set_readout(readout)?;
    Ok(model)
}

/// Teacher-forced one-step residuals `Y_{j+1} − Ŷ_{j+1}` after the washout, pooled over trajectories.
pub fn one_step_errors(model: &ReservoirModel, trajs: &[LatentTrajectory], washout: usize) -> Result<Vec<Vec<f64>>> {
    let (states, targets, _) = collect_training_pairs(model, trajs, washout)?;
    let w = model.trained_readout()?;
    let pred = w * states.matrix();
    let res = targets - pred;
    Ok((0..res.ncols()).map(|k| res.column(k).iter().copied().collect()).collect())
}

/// Mean squared one-step error over all residual components.
pub fn one_step_mse(model: &ReservoirModel, trajs: &[LatentTrajectory], washout: usize) -> Result<f64> {
    let errs = one_step_errors(model, trajs, washout)?;
    let count: usize = errs.iter().map(|e| e.len()).sum();
    Ok(errs.iter().flatten().map(|e| e * e).sum::<f64>() / count as f64)
}

/// Source of additive latent noise during closed-loop rollout.
pub trait LatentNoise {
    fn sample(&self, rng: &mut SeededRng) -> Result<Vec<f64>>;
}

/// Above this norm a closed-loop latent state is treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e3;

/// One closed-loop rollout request.
pub struct Rollout<'a> {
    pub reynolds: f64,
    /// Observed latent states used to synchronise the reservoir.
    pub warmup: &'a [Vec<f64>],
    pub rng: Option<&'a mut SeededRng>,
}

/// Closed-loop forecasts for a batch of rollouts sharing one step count.
///
/// Each reservoir starts at zero and absorbs its warm-up states. Every prediction
/// `Ŷ_{j+1} = W_out [1; r_{j+1}]` is perturbed by a noise draw (when both a noise
/// source and an rng are given) and the perturbed value is fed back. Returns the
/// `steps` fed-back states per rollout.
pub fn predict_closed_loop_batch(
    model: &ReservoirModel,
    rollouts: &mut [Rollout<'_>],
    steps: usize,
    noise: Option<&dyn LatentNoise>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = model.nodes();
    let d = model.latent_dim();
    let width = rollouts.len();
    if width == 0 {
        return Ok(Vec::new());
    }
    model.trained_readout()?;
    let warm = rollouts[0].warmup.len();
    if warm == 0 || rollouts.iter().any(|r| r.warmup.len() != warm || r.warmup.iter().any(|y| y.len() != d)) {
        return Err(Error::shape(format!("closed-loop warm-up must be a non-empty common length of {d}-vectors")));
    }
    let params: Vec<f64> = rollouts.iter().map(|r| model.channel.value(r.reynolds)).collect();
    let mut block = vec![0.0; n * width];
    let mut scratch = Vec::new();
    for j in 0..warm {
        let inputs: Vec<&[f64]> = rollouts.iter().map(|r| r.warmup[j].as_slice()).collect();
        model.step_block(&mut block, &inputs, &params, &mut scratch);
    }
    let mut out: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(steps); width];
    for s in 0..steps {
        let mut preds = model.readout_block(&block, width)?;
        for (b, (y, r)) in preds.iter_mut().zip(rollouts.iter_mut()).enumerate() {
            if let (Some(src), Some(rng)) = (noise, r.rng.as_deref_mut()) {
                let eps = src.sample(rng)?;
                if eps.len() != d {
                    return Err(Error::shape(format!("noise sample has {} components, expected {d}", eps.len())));
                }
                y.iter_mut().zip(&eps).for_each(|(v, e)| *v += e);
            }
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm <= DIVERGENCE_NORM) {
                return Err(Error::numerical(format!(
                    "closed-loop rollout {b} (Re={}) diverged at step {} with |Y|={norm:.3e}",
                    r.reynolds,
                    s + 1
                )));
            }
            out[b].push(y.clone());
        }
        if s + 1 < steps {
            let inputs: Vec<&[f64]> = preds.iter().map(|v| v.as_slice()).collect();
            model.step_block(&mut block, &inputs, &params, &mut scratch);
        }
    }
    Ok(out)
}

/// Single closed-loop rollout from an observed warm-up; see [`predict_closed_loop_batch`].
///
/// The result holds the warm-up followed by `steps` fed-back states, with times
/// continuing at the warm-up spacing.
pub fn predict_closed_loop(
    model: &ReservoirModel,
    warmup: &LatentTrajectory,
    steps: usize,
    noise: Option<&dyn LatentNoise>,
    rng: Option<&mut SeededRng>,
) -> Result<LatentTrajectory> {
    let mut r = [Rollout { reynolds: warmup.reynolds, warmup: &warmup.states, rng }];
    let predicted = predict_closed_loop_batch(model, &mut r, steps, noise)?.pop().unwrap();
    let n = warmup.len();
    let dt = if n > 1 { warmup.times[n - 1] - warmup.times[n - 2] } else { 1.0 };
    let last = warmup.times[n - 1];
    let mut out = warmup.clone();
    for (i, y) in predicted.into_iter().enumerate() {
        out.times.push(last + (i + 1) as f64 * dt);
        out.states.push(y);
    }
    Ok(out)
}

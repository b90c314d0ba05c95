use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gp::{expected_improvement, GaussianProcess, GpFitOptions};
use crate::error::{Error, Result};
use crate::reservoir::{HyperBox, RcHyperparams};
use crate::rng::{derive_seed, seeded, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub scale: Scale,
}

/// Axis-aligned search region; the optimiser works in its unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub dims: Vec<Dimension>,
}

impl SearchBox {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::config("search box needs at least one dimension"));
        }
        for d in &dims {
            if !(d.min < d.max) || !d.min.is_finite() || !d.max.is_finite() {
                return Err(Error::config(format!("dimension {} needs min < max", d.name)));
            }
            if d.scale == Scale::Log && d.min <= 0.0 {
                return Err(Error::config(format!("log-scaled dimension {} needs a positive minimum", d.name)));
            }
        }
        Ok(Self { dims })
    }

    /// Reservoir hyperparameter box with the ridge penalty on a log scale.
    pub fn reservoir(b: &HyperBox) -> Self {
        let ranges =
            [b.spectral_radius, b.input_scale, b.leakage, b.regularization, b.adjacency_density, b.input_density];
        let dims = RcHyperparams::NAMES
            .iter()
            .zip(ranges)
            .enumerate()
            .map(|(i, (n, (min, max)))| Dimension {
                name: n.to_string(),
                min,
                max,
                scale: if i == 3 { Scale::Log } else { Scale::Linear },
            })
            .collect();
        Self { dims }
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dims.len() && p.iter().zip(&self.dims).all(|(v, d)| *v >= d.min && *v <= d.max)
    }

    pub fn to_unit(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.dims)
            .map(|(v, d)| match d.scale {
                Scale::Linear => (v - d.min) / (d.max - d.min),
                Scale::Log => (v.ln() - d.min.ln()) / (d.max.ln() - d.min.ln()),
            })
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.dims)
            .map(|(v, d)| {
                let v = v.clamp(0.0, 1.0);
                let x = match d.scale {
                    Scale::Linear => d.min + v * (d.max - d.min),
                    Scale::Log => (d.min.ln() + v * (d.max.ln() - d.min.ln())).exp(),
                };
                x.clamp(d.min, d.max)
            })
            .collect()
    }
}

/// One objective evaluation; `mse` is `None` when the evaluation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    pub point: Vec<f64>,
    pub mse: Option<f64>,
    pub seed: u64,
    pub wall_time: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub budget: usize,
    pub initial_points: usize,
    pub candidates: usize,
    /// Best candidates polished by local search.
    pub refine_starts: usize,
    pub refine_steps: usize,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self { budget: 100, initial_points: 10, candidates: 2048, refine_starts: 5, refine_steps: 40, seed: 5 }
    }
}

/// `n` stratified points in the unit cube.
pub fn latin_hypercube(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Deterministic seed for an evaluation at `point`.
pub fn point_seed(base: u64, point: &[f64]) -> u64 {
    point.iter().fold(base, |acc, v| derive_seed(acc, v.to_bits()))
}

/// Targets for the surrogate: log objective, failures imputed at ten times the worst value.
fn surrogate_data(history: &[EvalRecord], sbox: &SearchBox) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
    let worst = history.iter().filter_map(|r| r.mse).fold(f64::NEG_INFINITY, f64::max);
    if !worst.is_finite() {
        return None;
    }
    let floor = 1e-300;
    let x = history.iter().map(|r| sbox.to_unit(&r.point)).collect();
    let y = history.iter().map(|r| r.mse.unwrap_or(worst * 10.0).max(floor).ln()).collect();
    Some((x, y))
}

/// Next point to evaluate given `history`.
///
/// The first `initial_points` proposals come from a Latin hypercube; later ones maximise
/// expected improvement of a GP fitted to the log objective, over random candidates
/// followed by local refinement. With no successful evaluation yet, the proposal is a
/// uniform random draw.
pub fn propose_next(history: &[EvalRecord], sbox: &SearchBox, config: &BoConfig) -> Result<Vec<f64>> {
    let i = history.len();
    let dim = sbox.dim();
    if i < config.initial_points {
        let design = latin_hypercube(config.initial_points, dim, derive_seed(config.seed, u64::MAX));
        return Ok(sbox.from_unit(&design[i]));
    }
    let mut rng = seeded(derive_seed(config.seed, i as u64));
    let Some((x, y)) = surrogate_data(history, sbox) else {
        let u: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        return Ok(sbox.from_unit(&u));
    };
    let gp = GaussianProcess::fit(&x, &y, &GpFitOptions::default())?;
    let best = y.iter().copied().fold(f64::INFINITY, f64::min);
    let acq = |u: &[f64]| {
        let (m, s) = gp.predict(u);
        expected_improvement(m, s, best)
    };
    Ok(sbox.from_unit(&maximize_acquisition(&acq, dim, config, &mut rng)))
}

fn maximize_acquisition(acq: &dyn Fn(&[f64]) -> f64, dim: usize, config: &BoConfig, rng: &mut SeededRng) -> Vec<f64> {
    let mut scored: Vec<(f64, Vec<f64>)> = (0..config.candidates.max(1))
        .map(|_| {
            let u: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            (acq(&u), u)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(config.refine_starts.max(1));
    let mut best = scored[0].clone();
    for (mut value, mut u) in scored {
        let mut radius = 0.1;
        for _ in 0..config.refine_steps {
            let step = Normal::new(0.0, radius).unwrap();
            let trial: Vec<f64> = u.iter().map(|v| (v + step.sample(rng)).clamp(0.0, 1.0)).collect();
            let a = acq(&trial);
            if a > value {
                value = a;
                u = trial;
            } else {
                radius = (radius * 0.8).max(1e-4);
            }
        }
        if value > best.0 {
            best = (value, u);
        }
    }
    best.1
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoResult {
    pub best: EvalRecord,
    pub history: Vec<EvalRecord>,
}

/// Minimise `objective(point, seed)` with exactly `budget` evaluations.
///
/// Objective errors and non-finite or negative values are recorded as failures and
/// the search continues. `progress` is called after every evaluation.
pub fn optimize(
    objective: &mut dyn FnMut(&[f64], u64) -> Result<f64>,
    sbox: &SearchBox,
    config: &BoConfig,
    mut progress: Option<&mut dyn FnMut(&EvalRecord)>,
) -> Result<BoResult> {
    if config.budget == 0 {
        return Err(Error::config("optimisation budget must be at least 1"));
    }
    let mut history: Vec<EvalRecord> = Vec::with_capacity(config.budget);
    for iteration in 0..config.budget {
        let point = propose_next(&history, sbox, config)?;
        let seed = point_seed(config.seed, &point);
        let start = Instant::now();
        let outcome = objective(&point, seed);
        let wall_time = start.elapsed().as_secs_f64();
        let (mse, failure) = match outcome {
            Ok(v) if v.is_finite() && v >= 0.0 => (Some(v), None),
            Ok(v) => (None, Some(format!("objective returned {v}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        let record = EvalRecord { iteration, point, mse, seed, wall_time, failure };
        if let Some(cb) = progress.as_deref_mut() {
            cb(&record);
        }
        history.push(record);
    }
    let best = history
        .iter()
        .filter(|r| r.mse.is_some())
        .min_by(|a, b| a.mse.unwrap().total_cmp(&b.mse.unwrap()))
        .cloned()
        .ok_or_else(|| Error::numerical("every objective evaluation failed"))?;
    Ok(BoResult { best, history })
}

/// CSV with columns `iteration, <dimension names>, mse, seed`; failed rows leave `mse` empty.
pub fn history_csv(history: &[EvalRecord], sbox: &SearchBox) -> String {
    let mut s = String::from("iteration");
    for d in &sbox.dims {
        s.push(',');
        s.push_str(&d.name);
    }
    s.push_str(",mse,seed\n");
    for r in history {
        s.push_str(&r.iteration.to_string());
        for v in &r.point {
            s.push_str(&format!(",{v}"));
        }
        match r.mse {
            Some(m) => s.push_str(&format!(",{m}")),
            None => s.push(','),
        }
        s.push_str(&format!(",{}\n", r.seed));
    }
    s
}

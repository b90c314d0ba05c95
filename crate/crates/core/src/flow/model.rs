use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spline::{constrain, forward_core, forward_with_gradient, inverse_core, raw_param_count};
use crate::diff::params::glorot_uniform;
use crate::diff::{checkpoint, AdamConfig, AdamState, CustomOp, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::reservoir::LatentNoise;
use crate::rng::{seeded, SeededRng};

/// Bins per spline. Fixed at compile time so spline gradients use stack-allocated duals.
pub const BINS: usize = 8;
const RAW: usize = raw_param_count(BINS);
/// Tangent directions: the input coordinate plus the raw spline parameters.
const TANGENTS: usize = RAW + 1;
const TRANSFORMS: usize = 2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub hidden: usize,
    /// Spline half-width in standardised units.
    pub tail_bound: f64,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { learning_rate: 0.005, iterations: 500, hidden: 8, tail_bound: 3.0, seed: 23 }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.hidden == 0 || !(self.tail_bound > 0.0) {
            return Err(Error::config("flow needs a positive learning rate, hidden width and tail bound"));
        }
        Ok(())
    }
}

/// Density of 2-D one-step errors: two autoregressive spline transforms on
/// standardised errors over a standard-normal base.
///
/// In the density direction transform `t` maps its leading coordinate with a spline
/// whose parameters are a free vector, and the other coordinate with a spline whose
/// parameters come from an MLP of the leading coordinate. Transform 0 leads with
/// coordinate 0, transform 1 with coordinate 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub(super) params: ParamSet,
    pub mean: [f64; 2],
    pub std: [f64; 2],
    hidden: usize,
    bound: f64,
}

fn slot(t: usize, name: &str) -> String {
    format!("transform{t}.{name}")
}

/// Parameter names of one transform, in storage order.
const LAYERS: [&str; 7] = ["bias", "l0.weight", "l0.bias", "l1.weight", "l1.bias", "l2.weight", "l2.bias"];

impl FlowModel {
    /// Random hidden layers with zeroed output layers: the identity transformation.
    pub fn identity(hidden: usize, bound: f64, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut params = ParamSet::new();
        for t in 0..TRANSFORMS {
            params.push(slot(t, "bias"), Tensor::zeros(&[RAW]));
            params.push(slot(t, "l0.weight"), glorot_uniform(&mut rng, &[hidden, 1], 1, hidden));
            params.push(slot(t, "l0.bias"), Tensor::zeros(&[hidden]));
            params.push(slot(t, "l1.weight"), glorot_uniform(&mut rng, &[hidden, hidden], hidden, hidden));
            params.push(slot(t, "l1.bias"), Tensor::zeros(&[hidden]));
            params.push(slot(t, "l2.weight"), Tensor::zeros(&[RAW, hidden]));
            params.push(slot(t, "l2.bias"), Tensor::zeros(&[RAW]));
        }
        Self { params, mean: [0.0; 2], std: [1.0; 2], hidden, bound }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn tail_bound(&self) -> f64 {
        self.bound
    }

    fn layer(&self, t: usize, k: usize) -> &Tensor {
        self.params.get(t * LAYERS.len() + k)
    }

    fn leading(t: usize) -> (usize, usize) {
        if t == 0 {
            (0, 1)
        } else {
            (1, 0)
        }
    }

    /// Raw spline parameters for the trailing coordinate of transform `t`.
    fn conditioner(&self, t: usize, lead: f64) -> Vec<f64> {
        let h = self.hidden;
        let dense = |w: &Tensor, b: &Tensor, x: &[f64], out: usize| -> Vec<f64> {
            let n = x.len();
            (0..out).map(|o| b.data()[o] + (0..n).map(|i| w.data()[o * n + i] * x[i]).sum::<f64>()).collect()
        };
        let h0: Vec<f64> = dense(self.layer(t, 1), self.layer(t, 2), &[lead], h).into_iter().map(f64::tanh).collect();
        let h1: Vec<f64> = dense(self.layer(t, 3), self.layer(t, 4), &h0, h).into_iter().map(f64::tanh).collect();
        dense(self.layer(t, 5), self.layer(t, 6), &h1, RAW)
    }

    fn spline(&self, raw: &[f64], x: f64, inverse: bool) -> (f64, f64) {
        let (w, hgt, d) = constrain(raw, BINS, self.bound);
        if inverse {
            inverse_core(x, &w, &hgt, &d, self.bound)
        } else {
            forward_core(x, &w, &hgt, &d, self.bound)
        }
    }

    /// Standardised error → base point, with the accumulated log-determinant.
    pub fn to_base(&self, x: [f64; 2]) -> ([f64; 2], f64) {
        let mut c = x;
        let mut logdet = 0.0;
        for t in 0..TRANSFORMS {
            let (a, b) = Self::leading(t);
            let (za, la) = self.spline(self.layer(t, 0).data(), c[a], false);
            let (zb, lb) = self.spline(&self.conditioner(t, c[a]), c[b], false);
            c[a] = za;
            c[b] = zb;
            logdet += la + lb;
        }
        (c, logdet)
    }

    /// Base point → standardised error.
    pub fn from_base(&self, z: [f64; 2]) -> [f64; 2] {
        let mut c = z;
        for t in (0..TRANSFORMS).rev() {
            let (a, b) = Self::leading(t);
            let (xa, _) = self.spline(self.layer(t, 0).data(), c[a], true);
            let (xb, _) = self.spline(&self.conditioner(t, xa), c[b], true);
            c[a] = xa;
            c[b] = xb;
        }
        c
    }

    /// Log density of an error in its original units.
    pub fn log_prob(&self, e: [f64; 2]) -> f64 {
        let x = [(e[0] - self.mean[0]) / self.std[0], (e[1] - self.mean[1]) / self.std[1]];
        let (z, logdet) = self.to_base(x);
        -0.5 * (z[0] * z[0] + z[1] * z[1]) - LN_2PI + logdet - self.std[0].ln() - self.std[1].ln()
    }

    pub fn sample_one(&self, rng: &mut SeededRng) -> [f64; 2] {
        let z = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
        let x = self.from_base(z);
        [self.mean[0] + self.std[0] * x[0], self.mean[1] + self.std[1] * x[1]]
    }

    /// `n` errors; deterministic per seed.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = seeded(seed);
        (0..n).map(|_| self.sample_one(&mut rng)).collect()
    }

    /// Mean negative log-likelihood of `errors` in their original units.
    pub fn mean_nll(&self, errors: &[[f64; 2]]) -> f64 {
        -errors.iter().map(|&e| self.log_prob(e)).sum::<f64>() / errors.len() as f64
    }

    pub fn to_params(&self) -> ParamSet {
        let mut p = self.params.clone();
        p.push("standardize.mean", Tensor::from_vec(self.mean.to_vec()));
        p.push("standardize.std", Tensor::from_vec(self.std.to_vec()));
        p.push("meta", Tensor::from_vec(vec![self.hidden as f64, self.bound, BINS as f64]));
        p
    }

    pub fn from_params(p: &ParamSet) -> Result<Self> {
        let meta = p.by_name("meta")?.data();
        if meta.len() != 3 || meta[2] != BINS as f64 || !(meta[0] >= 1.0) || !(meta[1] > 0.0) {
            return Err(Error::format("flow checkpoint metadata is invalid or uses another bin count"));
        }
        let (hidden, bound) = (meta[0] as usize, meta[1]);
        let template = Self::identity(hidden, bound, 0);
        let mut params = ParamSet::new();
        for (name, t) in template.params.iter() {
            let stored = p.by_name(name)?;
            if stored.shape() != t.shape() {
                return Err(Error::format(format!("flow parameter {name} has shape {:?}", stored.shape())));
            }
            params.push(name, stored.clone());
        }
        let pair = |name: &str| -> Result<[f64; 2]> {
            p.by_name(name)?.data().try_into().map_err(|_| Error::format(format!("{name} must hold 2 values")))
        };
        Ok(Self { params, mean: pair("standardize.mean")?, std: pair("standardize.std")?, hidden, bound })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.to_params(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(&checkpoint::load(path)?)
    }

    /// Mean NLL of standardised samples `x` (`[n, 2]`) recorded on a tape.
    pub(super) fn record_nll(&self, tape: &mut Tape, x: &Tensor) -> Result<Var> {
        let n = x.shape()[0];
        let input = tape.constant(x.clone())?;
        let mut cols = [tape.column(input, 0)?, tape.column(input, 1)?];
        let mut logdets = Vec::new();
        for t in 0..TRANSFORMS {
            let p: Vec<Var> =
                (0..LAYERS.len()).map(|k| tape.param(t * LAYERS.len() + k, self.layer(t, k))).collect::<Result<_>>()?;
            let (a, b) = Self::leading(t);
            let lead_params = tape.broadcast_rows(p[0], n)?;
            let (za, la) = record_spline(tape, cols[a], lead_params, self.bound)?;
            let h0 = tape.dense(cols[a], p[1], p[2])?;
            let h0 = tape.tanh(h0)?;
            let h1 = tape.dense(h0, p[3], p[4])?;
            let h1 = tape.tanh(h1)?;
            let raw = tape.dense(h1, p[5], p[6])?;
            let (zb, lb) = record_spline(tape, cols[b], raw, self.bound)?;
            cols[a] = za;
            cols[b] = zb;
            logdets.push(la);
            logdets.push(lb);
        }
        let s0 = tape.square(cols[0])?;
        let s1 = tape.square(cols[1])?;
        let quad = tape.add(s0, s1)?;
        let mut nll = tape.scale(quad, 0.5)?;
        for ld in logdets {
            nll = tape.sub(nll, ld)?;
        }
        let mean = tape.mean(nll)?;
        tape.offset(mean, LN_2PI)
    }
}

/// Spline of `x` (`[n, 1]`) with per-row raw parameters (`[n, RAW]`); returns the
/// image and log-determinant columns.
fn record_spline(tape: &mut Tape, x: Var, raw: Var, bound: f64) -> Result<(Var, Var)> {
    let xs = tape.value(x).data();
    let ps = tape.value(raw).data();
    let n = xs.len();
    let mut out = Vec::with_capacity(2 * n);
    let mut jac = Vec::with_capacity(n);
    for i in 0..n {
        let mut dy = [0.0; TANGENTS];
        let mut dl = [0.0; TANGENTS];
        let (y, ld) = forward_with_gradient(xs[i], &ps[i * RAW..(i + 1) * RAW], BINS, bound, &mut dy, &mut dl);
        out.push(y);
        out.push(ld);
        jac.push((dy, dl));
    }
    let value = Tensor::new(vec![n, 2], out)?;
    let node = tape.custom(vec![x, raw], value, Box::new(SplineOp { jac }))?;
    Ok((tape.column(node, 0)?, tape.column(node, 1)?))
}

#[derive(Debug)]
struct SplineOp {
    jac: Vec<([f64; TANGENTS], [f64; TANGENTS])>,
}

impl CustomOp for SplineOp {
    fn name(&self) -> &'static str {
        "rq_spline"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let n = self.jac.len();
        let g = grad_out.data();
        let mut gx = vec![0.0; n];
        let mut gp = vec![0.0; n * RAW];
        for (i, (dy, dl)) in self.jac.iter().enumerate() {
            let (gy, gl) = (g[2 * i], g[2 * i + 1]);
            gx[i] = gy * dy[0] + gl * dl[0];
            for j in 0..RAW {
                gp[i * RAW + j] = gy * dy[j + 1] + gl * dl[j + 1];
            }
        }
        vec![Tensor::new(vec![n, 1], gx).unwrap(), Tensor::new(vec![n, RAW], gp).unwrap()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrainReport {
    /// Mean NLL (original units) before each update, followed by the final value.
    pub history: Vec<f64>,
}

impl FlowTrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,nll\n");
        for (i, v) in self.history.iter().enumerate() {
            s.push_str(&format!("{i},{v}\n"));
        }
        s
    }
}

/// Per-dimension standard deviations below this are treated as degenerate.
pub const MIN_ERROR_STD: f64 = 1e-12;

/// Maximum-likelihood fit with full-batch Adam.
pub fn train_flow(errors: &[[f64; 2]], config: &FlowConfig) -> Result<(FlowModel, FlowTrainReport)> {
    config.validate()?;
    if errors.len() < 10 {
        return Err(Error::config(format!("flow training needs at least 10 samples, got {}", errors.len())));
    }
    if !errors.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::config("flow training samples must be finite"));
    }
    let n = errors.len() as f64;
    let mut mean = [0.0; 2];
    let mut std = [0.0; 2];
    for i in 0..2 {
        mean[i] = errors.iter().map(|e| e[i]).sum::<f64>() / n;
        std[i] = (errors.iter().map(|e| (e[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt();
        if !(std[i] > MIN_ERROR_STD * mean[i].abs().max(1.0)) {
            return Err(Error::config(format!(
                "error samples are degenerate in dimension {i} (std {:.3e}); no density to fit",
                std[i]
            )));
        }
    }
    let mut model = FlowModel::identity(config.hidden, config.tail_bound, config.seed);
    model.mean = mean;
    model.std = std;
    let standardized: Vec<f64> =
        errors.iter().flat_map(|e| [(e[0] - mean[0]) / std[0], (e[1] - mean[1]) / std[1]]).collect();
    let x = Tensor::new(vec![errors.len(), 2], standardized)?;
    let offset = std[0].ln() + std[1].ln();
    let shapes: Vec<Vec<usize>> = model.params.shapes().iter().map(|s| s.to_vec()).collect();
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(config.learning_rate), model.params.tensors());
    let mut history = Vec::with_capacity(config.iterations + 1);
    let numerical = |it: usize, e: Error| match e {
        Error::Numerical(m) => Error::numerical(format!("flow training iteration {it}: {m}")),
        other => other,
    };
    for it in 0..config.iterations {
        let mut tape = Tape::new();
        let loss = model.record_nll(&mut tape, &x).map_err(|e| numerical(it, e))?;
        history.push(tape.value(loss).item() + offset);
        let grads = tape.backward(loss)?;
        let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        let g = grads.dense(&shape_refs);
        adam.step(model.params.tensors_mut(), &g).map_err(|e| numerical(it, e))?;
    }
    let mut tape = Tape::new();
    let loss = model.record_nll(&mut tape, &x).map_err(|e| numerical(config.iterations, e))?;
    history.push(tape.value(loss).item() + offset);
    Ok((model, FlowTrainReport { history }))
}

impl LatentNoise for FlowModel {
    fn sample(&self, rng: &mut SeededRng) -> Result<Vec<f64>> {
        Ok(self.sample_one(rng).to_vec())
    }
}

/// `∫∫ exp(log_prob)` over the spline box (in original units) by midpoint quadrature.
pub fn quadrature_mass(model: &FlowModel, cells: usize) -> f64 {
    let b = model.bound;
    let h = 2.0 * b / cells as f64;
    let mut total = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            let x = [-b + (i as f64 + 0.5) * h, -b + (j as f64 + 0.5) * h];
            let e = [model.mean[0] + model.std[0] * x[0], model.mean[1] + model.std[1] * x[1]];
            total += model.log_prob(e).exp();
        }
    }
    total * h * h * model.std[0] * model.std[1]
}

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hyper::RcHyperparams;
use super::sparse::CsrMatrix;
use super::spectral::spectral_radius;
use crate::diff::{checkpoint, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, SeededRng};

/// How the Reynolds number enters the parameter channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ParameterChannel {
    /// `Re / scale`, with `scale` the largest training Reynolds number.
    Scaled { scale: f64 },
    /// Raw viscosity `ν = 1/Re`.
    Viscosity,
}

impl ParameterChannel {
    pub fn value(&self, reynolds: f64) -> f64 {
        match *self {
            ParameterChannel::Scaled { scale } => reynolds / scale,
            ParameterChannel::Viscosity => 1.0 / reynolds,
        }
    }

    fn encode(&self) -> [f64; 2] {
        match *self {
            ParameterChannel::Scaled { scale } => [0.0, scale],
            ParameterChannel::Viscosity => [1.0, 0.0],
        }
    }

    fn decode(v: &[f64]) -> Result<Self> {
        match v {
            [m, s] if *m == 0.0 => Ok(ParameterChannel::Scaled { scale: *s }),
            [m, _] if *m == 1.0 => Ok(ParameterChannel::Viscosity),
            _ => Err(Error::format("unknown parameter-channel record")),
        }
    }
}

/// Affine map applied to latent inputs before they enter the reservoir:
/// `(y − offset) / scale`. Readout targets stay in encoder units.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    pub fn identity(d: usize) -> Self {
        Self { offset: vec![0.0; d], scale: vec![1.0; d] }
    }

    /// Per-dimension mean and standard deviation of the given states.
    pub fn standardizing<'a>(states: impl Iterator<Item = &'a [f64]>, d: usize) -> Self {
        let mut n = 0.0;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for s in states {
            n += 1.0;
            for i in 0..d {
                sum[i] += s[i];
                sq[i] += s[i] * s[i];
            }
        }
        if n == 0.0 {
            return Self::identity(d);
        }
        let offset: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = (0..d)
            .map(|i| {
                let var = (sq[i] / n - offset[i] * offset[i]).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { offset, scale }
    }

    fn apply(&self, y: &[f64], out: &mut [f64]) {
        for i in 0..y.len() {
            out[i] = (y[i] - self.offset[i]) / self.scale[i];
        }
    }
}

/// Parametric leaky echo-state network with a linear readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirModel {
    pub hyper: RcHyperparams,
    nodes: usize,
    latent_dim: usize,
    adjacency: CsrMatrix,
    /// `N × d`, row-major.
    w_latent: Vec<f64>,
    w_param: Vec<f64>,
    bias: Vec<f64>,
    /// `d × (1 + N)`.
    readout: Option<DMatrix<f64>>,
    pub channel: ParameterChannel,
    pub input_scaling: InputScaling,
}

const MAX_INIT_RETRIES: u64 = 10;

/// Draw random reservoir matrices for `hyper`; the readout is left untrained.
///
/// Connections appear with probability `p_A` and take `Uniform(−1, 1)` weights, after
/// which the adjacency is rescaled to spectral radius `ρ`. Input weights appear with
/// probability `p_Win` and, like the bias, are drawn from `Uniform(−χ, χ)`.
pub fn init_reservoir(hyper: &RcHyperparams, nodes: usize, latent_dim: usize, seed: u64) -> Result<ReservoirModel> {
    if nodes == 0 || latent_dim == 0 {
        return Err(Error::config("reservoir needs at least one node and one latent dimension"));
    }
    for attempt in 0..=MAX_INIT_RETRIES {
        let mut rng = seeded(derive_seed(seed, attempt));
        let mut dense = vec![0.0; nodes * nodes];
        for v in dense.iter_mut() {
            if rng.random::<f64>() < hyper.adjacency_density {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        if dense.iter().all(|&v| v == 0.0) {
            continue;
        }
        let radius = spectral_radius(&DMatrix::from_row_slice(nodes, nodes, &dense), &mut rng, 500, 1e-10);
        if !(radius > 0.0) {
            // Nilpotent draws (e.g. a single off-diagonal entry) cannot be rescaled.
            continue;
        }
        let mut adjacency = CsrMatrix::from_dense(nodes, &dense);
        adjacency.scale(hyper.spectral_radius / radius);

        let chi = hyper.input_scale;
        let sparse_uniform = |count: usize, rng: &mut SeededRng| -> Vec<f64> {
            (0..count)
                .map(|_| if rng.random::<f64>() < hyper.input_density { rng.random_range(-chi..=chi) } else { 0.0 })
                .collect()
        };
        let w_latent = sparse_uniform(nodes * latent_dim, &mut rng);
        let w_param = sparse_uniform(nodes, &mut rng);
        let bias = (0..nodes).map(|_| rng.random_range(-chi..=chi)).collect();
        return Ok(ReservoirModel {
            hyper: *hyper,
            nodes,
            latent_dim,
            adjacency,
            w_latent,
            w_param,
            bias,
            readout: None,
            channel: ParameterChannel::Scaled { scale: 1.0 },
            input_scaling: InputScaling::identity(latent_dim),
        });
    }
    Err(Error::config(format!(
        "adjacency matrix stayed degenerate after {MAX_INIT_RETRIES} redraws (p_A={} at N={nodes})",
        hyper.adjacency_density
    )))
}

impl ReservoirModel {
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn readout(&self) -> Option<&DMatrix<f64>> {
        self.readout.as_ref()
    }

    pub fn set_readout(&mut self, readout: DMatrix<f64>) -> Result<()> {
        if readout.nrows() != self.latent_dim || readout.ncols() != self.nodes + 1 {
            return Err(Error::shape(format!(
                "readout must be {}×{}, got {}×{}",
                self.latent_dim,
                self.nodes + 1,
                readout.nrows(),
                readout.ncols()
            )));
        }
        if !readout.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("readout contains non-finite entries"));
        }
        self.readout = Some(readout);
        Ok(())
    }

    pub(crate) fn trained_readout(&self) -> Result<&DMatrix<f64>> {
        self.readout.as_ref().ok_or_else(|| Error::usage("reservoir readout has not been fitted"))
    }

    /// Advance a row-major `N × width` block of states by one step. Column `b` is driven
    /// by latent `inputs[b]` and parameter value `params[b]`.
    pub(crate) fn step_block(&self, states: &mut [f64], inputs: &[&[f64]], params: &[f64], scratch: &mut Vec<f64>) {
        let width = inputs.len();
        let n = self.nodes;
        let d = self.latent_dim;
        scratch.resize(n * width, 0.0);
        self.adjacency.mul_block(states, width, scratch);
        let mut scaled = vec![0.0; d * width];
        for (b, y) in inputs.iter().enumerate() {
            self.input_scaling.apply(y, &mut scaled[b * d..(b + 1) * d]);
        }
        let alpha = self.hyper.leakage;
        for i in 0..n {
            let wl = &self.w_latent[i * d..(i + 1) * d];
            let (wp, zeta) = (self.w_param[i], self.bias[i]);
            for b in 0..width {
                let y = &scaled[b * d..(b + 1) * d];
                let drive: f64 = wl.iter().zip(y).map(|(w, v)| w * v).sum();
                let pre = scratch[i * width + b] + drive + wp * params[b] + zeta;
                let r = &mut states[i * width + b];
                *r = (1.0 - alpha) * *r + alpha * pre.tanh();
            }
        }
    }

    /// `Ŷ = W_out [1; r]` for every column of a row-major `N × width` block.
    pub(crate) fn readout_block(&self, states: &[f64], width: usize) -> Result<Vec<Vec<f64>>> {
        let w = self.trained_readout()?;
        let mut out = vec![vec![0.0; self.latent_dim]; width];
        for (k, row) in out.iter_mut().enumerate() {
            for (o, v) in row.iter_mut().enumerate() {
                let mut acc = w[(o, 0)];
                for i in 0..self.nodes {
                    acc += w[(o, i + 1)] * states[i * width + k];
                }
                *v = acc;
            }
        }
        Ok(out)
    }

    /// Readout for one state vector.
    pub fn predict(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.readout_block(state, 1)?.pop().unwrap())
    }

    pub fn to_params(&self) -> Result<ParamSet> {
        let n = self.nodes;
        let d = self.latent_dim;
        let mut p = ParamSet::new();
        p.push("hyper", Tensor::from_vec(self.hyper.to_array().to_vec()));
        p.push("adjacency", Tensor::new(vec![n, n], self.adjacency.to_dense())?);
        p.push("w_in_latent", Tensor::new(vec![n, d], self.w_latent.clone())?);
        p.push("w_in_param", Tensor::new(vec![n, 1], self.w_param.clone())?);
        p.push("bias", Tensor::new(vec![n], self.bias.clone())?);
        let w = self.trained_readout()?;
        let rows: Vec<f64> = (0..d).flat_map(|o| (0..=n).map(move |i| w[(o, i)])).collect();
        p.push("readout", Tensor::new(vec![d, n + 1], rows)?);
        p.push("param_channel", Tensor::from_vec(self.channel.encode().to_vec()));
        p.push("latent_offset", Tensor::from_vec(self.input_scaling.offset.clone()));
        p.push("latent_scale", Tensor::from_vec(self.input_scaling.scale.clone()));
        Ok(p)
    }

    pub fn from_params(p: &ParamSet) -> Result<Self> {
        let hyper_v = p.by_name("hyper")?.data();
        if hyper_v.len() != 6 {
            return Err(Error::format("hyperparameter record must hold 6 values"));
        }
        let hyper = RcHyperparams::from_array(hyper_v.try_into().unwrap());
        let adj = p.by_name("adjacency")?;
        let (n, d) = match (adj.shape(), p.by_name("w_in_latent")?.shape()) {
            ([a, b], [c, e]) if a == b && a == c => (*a, *e),
            _ => return Err(Error::format("inconsistent reservoir matrix shapes")),
        };
        let readout_t = p.by_name("readout")?;
        if readout_t.shape() != [d, n + 1] {
            return Err(Error::format("readout shape does not match reservoir"));
        }
        let mut model = ReservoirModel {
            hyper,
            nodes: n,
            latent_dim: d,
            adjacency: CsrMatrix::from_dense(n, adj.data()),
            w_latent: p.by_name("w_in_latent")?.data().to_vec(),
            w_param: p.by_name("w_in_param")?.data().to_vec(),
            bias: p.by_name("bias")?.data().to_vec(),
            readout: None,
            channel: ParameterChannel::decode(p.by_name("param_channel")?.data())?,
            input_scaling: InputScaling {
                offset: p.by_name("latent_offset")?.data().to_vec(),
                scale: p.by_name("latent_scale")?.data().to_vec(),
            },
        };
        if model.w_param.len() != n || model.bias.len() != n || model.input_scaling.offset.len() != d {
            return Err(Error::format("reservoir vector lengths do not match"));
        }
        model.set_readout(DMatrix::from_row_slice(d, n + 1, readout_t.data()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.to_params()?, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(&checkpoint::load(path)?)
    }
}

/// One update `r' = (1−α) r + α tanh(A r + W_in^Y Y + W_in^ν p + ζ)`, with `Y` passed
/// through the model's input scaling (the identity unless configured otherwise).
pub fn reservoir_step(model: &ReservoirModel, state: &[f64], latent: &[f64], param: f64) -> Result<Vec<f64>> {
    if state.len() != model.nodes || latent.len() != model.latent_dim {
        return Err(Error::shape(format!(
            "reservoir_step expects state {} and latent {}, got {} and {}",
            model.nodes,
            model.latent_dim,
            state.len(),
            latent.len()
        )));
    }
    let mut next = state.to_vec();
    let mut scratch = Vec::new();
    model.step_block(&mut next, &[latent], &[param], &mut scratch);
    Ok(next)
}

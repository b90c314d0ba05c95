use std::path::Path;

use super::arch::{Activation, CaeArchitecture, FeatureShape, Layer};
use crate::diff::{checkpoint, params, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Trained (or freshly initialised) encoder/decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CaeModel {
    pub arch: CaeArchitecture,
    pub params: ParamSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stack {
    Encoder,
    Decoder,
}

impl Stack {
    fn prefix(self) -> &'static str {
        match self {
            Stack::Encoder => "encoder",
            Stack::Decoder => "decoder",
        }
    }
}

impl CaeModel {
    /// He-uniform weights for ReLU layers, Glorot-uniform for linear layers, zero biases.
    pub fn init(arch: CaeArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seeded(seed);
        let mut params = ParamSet::new();
        for (stack, layers, input) in [
            (Stack::Encoder, &arch.encoder, FeatureShape::Spatial { channels: 1, len: arch.input_len }),
            (Stack::Decoder, &arch.decoder, FeatureShape::Flat(arch.latent_dim)),
        ] {
            let shapes = CaeArchitecture::trace(layers, input)?;
            for (i, layer) in layers.iter().enumerate() {
                let prev = if i == 0 { input } else { shapes[i - 1] };
                let (wshape, fan_in, fan_out, act) = match (layer, prev) {
                    (Layer::Conv { channels, width, activation, .. }, FeatureShape::Spatial { channels: c_in, .. }) => {
                        (vec![*channels, c_in, *width], c_in * width, channels * width, *activation)
                    }
                    (Layer::Dense { units, activation }, FeatureShape::Flat(n)) => {
                        (vec![*units, n], n, *units, *activation)
                    }
                    _ => continue,
                };
                let weight = match act {
                    Activation::Relu => params::he_uniform(&mut rng, &wshape, fan_in),
                    _ => params::glorot_uniform(&mut rng, &wshape, fan_in, fan_out),
                };
                let name = format!("{}.{i}", stack.prefix());
                params.push(format!("{name}.weight"), weight);
                params.push(format!("{name}.bias"), Tensor::zeros(&[wshape[0]]));
            }
        }
        Ok(Self { arch, params })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn input_len(&self) -> usize {
        self.arch.input_len
    }

    /// Record one stack on `tape`. `input` must already have the stack's batched input shape.
    pub(crate) fn record(&self, tape: &mut Tape, stack: Stack, input: Var) -> Result<Var> {
        let layers = match stack {
            Stack::Encoder => &self.arch.encoder,
            Stack::Decoder => &self.arch.decoder,
        };
        let batch = tape.value(input).shape()[0];
        let mut x = input;
        for (i, layer) in layers.iter().enumerate() {
            let param = |tape: &mut Tape, suffix: &str| -> Result<Var> {
                let name = format!("{}.{i}.{suffix}", stack.prefix());
                let slot =
                    self.params.index_of(&name).ok_or_else(|| Error::config(format!("missing parameter {name}")))?;
                tape.param(slot, self.params.get(slot))
            };
            let (pre, activation) = match layer {
                Layer::Conv { stride, activation, .. } => {
                    let w = param(tape, "weight")?;
                    let b = param(tape, "bias")?;
                    (tape.conv1d(x, w, b, *stride, true)?, Some(*activation))
                }
                Layer::Dense { activation, .. } => {
                    let w = param(tape, "weight")?;
                    let b = param(tape, "bias")?;
                    (tape.dense(x, w, b)?, Some(*activation))
                }
                Layer::Pool { window } => (tape.maxpool1d(x, *window)?, None),
                Layer::Upsample { factor } => (tape.upsample_nearest(x, *factor)?, None),
                Layer::Flatten => {
                    let n = tape.value(x).len() / batch;
                    (tape.reshape(x, &[batch, n])?, None)
                }
                Layer::Reshape { channels, len } => (tape.reshape(x, &[batch, *channels, *len])?, None),
            };
            x = match activation {
                Some(Activation::Relu) => tape.relu(pre)?,
                Some(Activation::Tanh) => tape.tanh(pre)?,
                Some(Activation::Linear) | None => pre,
            };
        }
        Ok(x)
    }

    fn check_rows(rows: &[&[f64]], len: usize, what: &str) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::usage(format!("{what}: empty batch")));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != len) {
            return Err(Error::usage(format!("{what}: expected length {len}, got {}", r.len())));
        }
        Ok(())
    }

    /// Encode a batch of snapshots into latent vectors.
    pub fn encode_batch(&self, snapshots: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let k = self.input_len();
        Self::check_rows(snapshots, k, "encode")?;
        let data: Vec<f64> = snapshots.iter().flat_map(|s| s.iter().copied()).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![snapshots.len(), 1, k], data)?)?;
        let y = self.record(&mut tape, Stack::Encoder, x)?;
        Ok(tape.value(y).data().chunks(self.latent_dim()).map(<[f64]>::to_vec).collect())
    }

    /// Decode a batch of latent vectors into snapshots.
    pub fn decode_batch(&self, latents: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let d = self.latent_dim();
        Self::check_rows(latents, d, "decode")?;
        let data: Vec<f64> = latents.iter().flat_map(|s| s.iter().copied()).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![latents.len(), d], data)?)?;
        let y = self.record(&mut tape, Stack::Decoder, x)?;
        Ok(tape.value(y).data().chunks(self.input_len()).map(<[f64]>::to_vec).collect())
    }

    pub fn encode(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("encode: input contains non-finite values"));
        }
        Ok(self.encode_batch(&[u])?.pop().unwrap())
    }

    pub fn decode(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.decode_batch(&[y])?.pop().unwrap())
    }

    /// `decode(encode(u))` for a batch.
    pub fn reconstruct_batch(&self, snapshots: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let latents = self.encode_batch(snapshots)?;
        let refs: Vec<&[f64]> = latents.iter().map(Vec::as_slice).collect();
        self.decode_batch(&refs)
    }

    /// Writes `<stem>.rfw` (parameters) and `<stem>.arch.toml` (architecture descriptor).
    pub fn save(&self, stem: &Path) -> Result<()> {
        checkpoint::save(&self.params, &stem.with_extension("rfw"))?;
        crate::io::write_atomic(&stem.with_extension("arch.toml"), self.arch.to_toml().as_bytes())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let arch = CaeArchitecture::from_toml(&std::fs::read_to_string(stem.with_extension("arch.toml"))?)?;
        let params = checkpoint::load(&stem.with_extension("rfw"))?;
        let fresh = Self::init(arch.clone(), 0)?;
        if fresh.params.names() != params.names() || fresh.params.shapes() != params.shapes() {
            return Err(Error::format("checkpoint parameters do not match the architecture"));
        }
        Ok(Self { arch, params })
    }
}

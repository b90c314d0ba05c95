use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layer {
    Conv { channels: usize, width: usize, stride: usize, activation: Activation },
    Pool { window: usize },
    Upsample { factor: usize },
    Flatten,
    Dense { units: usize, activation: Activation },
    Reshape { channels: usize, len: usize },
}

/// Shape of the activation flowing between layers (batch axis omitted).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureShape {
    Spatial { channels: usize, len: usize },
    Flat(usize),
}

impl FeatureShape {
    pub fn size(&self) -> usize {
        match *self {
            FeatureShape::Spatial { channels, len } => channels * len,
            FeatureShape::Flat(n) => n,
        }
    }
}

/// Encoder and decoder layer stacks with the latent width between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeArchitecture {
    pub input_len: usize,
    pub latent_dim: usize,
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
}

impl CaeArchitecture {
    /// Four width-3 conv/pool stages down to 4×8, a dense bottleneck to `d = 2`, and
    /// the mirrored upsample/conv decoder back to 1×128.
    pub fn reference() -> Self {
        Self::reference_with_bottleneck(Activation::Linear)
    }

    pub fn reference_with_bottleneck(bottleneck: Activation) -> Self {
        let conv = |channels, activation| Layer::Conv { channels, width: 3, stride: 1, activation };
        let pool = Layer::Pool { window: 2 };
        let up = Layer::Upsample { factor: 2 };
        Self {
            input_len: 128,
            latent_dim: 2,
            encoder: vec![
                conv(8, Activation::Relu),
                pool.clone(),
                conv(16, Activation::Relu),
                pool.clone(),
                conv(32, Activation::Relu),
                pool.clone(),
                conv(4, Activation::Relu),
                pool,
                Layer::Flatten,
                Layer::Dense { units: 2, activation: bottleneck },
            ],
            decoder: vec![
                Layer::Dense { units: 32, activation: Activation::Relu },
                Layer::Reshape { channels: 4, len: 8 },
                up.clone(),
                conv(32, Activation::Relu),
                up.clone(),
                conv(16, Activation::Relu),
                up.clone(),
                conv(8, Activation::Relu),
                up,
                conv(1, Activation::Linear),
            ],
        }
    }

    /// Propagate shapes through a stack, checking every layer.
    pub fn trace(layers: &[Layer], input: FeatureShape) -> Result<Vec<FeatureShape>> {
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input;
        for (i, layer) in layers.iter().enumerate() {
            let bad = |msg: String| Error::config(format!("layer {i} ({layer:?}): {msg}"));
            cur = match (layer, cur) {
                (Layer::Conv { channels, width, stride, .. }, FeatureShape::Spatial { len, .. }) => {
                    if *width != 3 {
                        return Err(bad("filters must have width 3".into()));
                    }
                    if *stride == 0 || (len + 2 * (width / 2) - width) % stride != 0 {
                        return Err(bad(format!("stride {stride} does not tile length {len}")));
                    }
                    FeatureShape::Spatial { channels: *channels, len: (len + 2 * (width / 2) - width) / stride + 1 }
                }
                (Layer::Pool { window }, FeatureShape::Spatial { channels, len }) => {
                    if *window != 2 || len % 2 != 0 {
                        return Err(bad(format!("pooling must halve an even length, got {len}")));
                    }
                    FeatureShape::Spatial { channels, len: len / 2 }
                }
                (Layer::Upsample { factor }, FeatureShape::Spatial { channels, len }) if *factor >= 1 => {
                    FeatureShape::Spatial { channels, len: len * factor }
                }
                (Layer::Flatten, s @ FeatureShape::Spatial { .. }) => FeatureShape::Flat(s.size()),
                (Layer::Dense { units, .. }, FeatureShape::Flat(_)) => FeatureShape::Flat(*units),
                (Layer::Reshape { channels, len }, FeatureShape::Flat(n)) => {
                    if channels * len != n {
                        return Err(bad(format!("cannot reshape {n} values into {channels}×{len}")));
                    }
                    FeatureShape::Spatial { channels: *channels, len: *len }
                }
                (_, s) => return Err(bad(format!("incompatible with input {s:?}"))),
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        let enc = Self::trace(&self.encoder, FeatureShape::Spatial { channels: 1, len: self.input_len })?;
        if enc.last() != Some(&FeatureShape::Flat(self.latent_dim)) {
            return Err(Error::config(format!(
                "encoder ends in {:?}, expected {} latents",
                enc.last(),
                self.latent_dim
            )));
        }
        let dec = Self::trace(&self.decoder, FeatureShape::Flat(self.latent_dim))?;
        if dec.last() != Some(&FeatureShape::Spatial { channels: 1, len: self.input_len }) {
            return Err(Error::config(format!("decoder ends in {:?}, expected 1×{}", dec.last(), self.input_len)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("architecture serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let arch: Self = toml::from_str(text).map_err(|e| Error::config(format!("architecture descriptor: {e}")))?;
        arch.validate()?;
        Ok(arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_valid() {
        let arch = CaeArchitecture::reference();
        arch.validate().unwrap();
        let enc = CaeArchitecture::trace(&arch.encoder, FeatureShape::Spatial { channels: 1, len: 128 }).unwrap();
        assert_eq!(enc[7], FeatureShape::Spatial { channels: 4, len: 8 });
        assert_eq!(enc[8], FeatureShape::Flat(32));
    }

    #[test]
    fn descriptor_round_trip() {
        let arch = CaeArchitecture::reference();
        assert_eq!(CaeArchitecture::from_toml(&arch.to_toml()).unwrap(), arch);
    }

    #[test]
    fn rejects_wide_filters_and_odd_pooling() {
        let mut arch = CaeArchitecture::reference();
        arch.encoder[0] = Layer::Conv { channels: 8, width: 5, stride: 1, activation: Activation::Relu };
        assert!(arch.validate().is_err());
        let mut arch = CaeArchitecture::reference();
        arch.input_len = 100;
        assert!(arch.validate().is_err());
    }

    #[test]
    fn rejects_wrong_latent_width() {
        let mut arch = CaeArchitecture::reference();
        arch.latent_dim = 3;
        assert!(arch.validate().is_err());
    }
}

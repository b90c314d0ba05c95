//! Dense tensors, reverse-mode differentiation and Adam.

pub mod adam;
pub mod checkpoint;
pub mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::ParamSet;
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Stand-alone cross-correlation on a single `[channels, len]` input.
pub fn conv1d(input: &Tensor, filters: &Tensor, biases: &Tensor, stride: usize, zero_pad: bool) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone())?;
    let f = tape.constant(filters.clone())?;
    let b = tape.constant(biases.clone())?;
    let y = tape.conv1d(x, f, b, stride, zero_pad)?;
    Ok(tape.value(y).clone())
}

pub fn maxpool1d(input: &Tensor, window: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone())?;
    let y = tape.maxpool1d(x, window)?;
    Ok(tape.value(y).clone())
}

pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone())?;
    let y = tape.upsample_nearest(x, factor)?;
    Ok(tape.value(y).clone())
}

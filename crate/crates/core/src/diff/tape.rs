//! Reverse-mode differentiation over a linear record of primitive operations.
//!
//! A [`Tape`] is built fresh for every forward evaluation. Nodes are appended in
//! evaluation order, so the record is topologically sorted by construction and the
//! backward sweep is a single reverse pass.

use std::fmt;

use super::kernels::{self, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A primitive whose local gradient rule lives outside this module.
///
/// `backward` receives the forward inputs (in the order they were recorded),
/// the forward output and the upstream gradient, and returns one gradient per input.
pub trait CustomOp: fmt::Debug {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    Conv1d { input: Var, filters: Var, bias: Var, geometry: ConvGeometry },
    MaxPool { input: Var, argmax: Vec<usize> },
    Upsample { input: Var, rows: usize, len: usize, factor: usize },
    Dense { input: Var, weight: Var, bias: Var, n: usize, fan_in: usize, fan_out: usize },
    Reshape(Var),
    Relu(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Square(Var),
    Mean(Var),
    Sum(Var),
    Column { input: Var, col: usize, cols: usize },
    BroadcastRows { input: Var, rows: usize },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Per-parameter gradients returned by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for parameter slot `index`, or `None` if the slot never reached the loss.
    pub fn get(&self, index: usize) -> Option<&Tensor> {
        self.grads.get(index).and_then(|g| g.as_ref())
    }

    /// Gradients aligned with `shapes`; slots not on the tape become zeros.
    pub fn dense(self, shapes: &[&[usize]]) -> Vec<Tensor> {
        let mut grads = self.grads;
        grads.resize(shapes.len(), None);
        grads.into_iter().zip(shapes).map(|(g, s)| g.unwrap_or_else(|| Tensor::zeros(s))).collect()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, context: &str) -> Result<Var> {
        value.ensure_finite(context)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Constant, "constant")
    }

    /// Record trainable parameter slot `index` with its current value.
    pub fn param(&mut self, index: usize, value: &Tensor) -> Result<Var> {
        self.push(value.clone(), Op::Param(index), "parameter")
    }

    /// Batched cross-correlation: input `[batch, c_in, len]`, filters `[c_out, c_in, width]`,
    /// bias `[c_out]`. A rank-2 input `[c_in, len]` is treated as a batch of one and
    /// yields a rank-2 output.
    pub fn conv1d(&mut self, input: Var, filters: Var, bias: Var, stride: usize, zero_pad: bool) -> Result<Var> {
        let (batched, batch, c_in, len) = match *self.shape(input) {
            [b, c, k] => (true, b, c, k),
            [c, k] => (false, 1, c, k),
            ref s => return Err(Error::shape(format!("conv1d input must be rank 2 or 3, got {s:?}"))),
        };
        let (c_out, width) = match *self.shape(filters) {
            [o, c, w] if c == c_in => (o, w),
            ref s => return Err(Error::config(format!("conv1d filters {s:?} do not match {c_in} input channels"))),
        };
        if self.shape(bias) != [c_out] {
            return Err(Error::config(format!(
                "conv1d bias {:?} does not match {c_out} output channels",
                self.shape(bias)
            )));
        }
        let geometry = ConvGeometry::new(batch, c_in, c_out, len, width, stride, zero_pad)?;
        let out = kernels::conv1d_forward(
            &geometry,
            self.value(input).data(),
            self.value(filters).data(),
            self.value(bias).data(),
        );
        let shape = if batched { vec![batch, c_out, geometry.out_len] } else { vec![c_out, geometry.out_len] };
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Conv1d { input, filters, bias, geometry }, "conv1d")
    }

    /// Non-overlapping max pooling over the last axis.
    pub fn maxpool1d(&mut self, input: Var, window: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let len = *shape.last().ok_or_else(|| Error::shape("maxpool1d of a scalar"))?;
        if window == 0 || len % window != 0 {
            return Err(Error::config(format!("maxpool1d window {window} does not divide length {len}")));
        }
        let rows = self.value(input).len() / len;
        let (out, argmax) = kernels::maxpool_forward(rows, len, window, self.value(input).data());
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len / window;
        let value = Tensor::new(out_shape, out)?;
        self.push(value, Op::MaxPool { input, argmax }, "maxpool1d")
    }

    /// Nearest-neighbour upsampling over the last axis.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::config("upsample factor must be at least 1"));
        }
        let shape = self.shape(input).to_vec();
        let len = *shape.last().ok_or_else(|| Error::shape("upsample of a scalar"))?;
        let rows = self.value(input).len() / len;
        let out = kernels::upsample_forward(rows, len, factor, self.value(input).data());
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len * factor;
        let value = Tensor::new(out_shape, out)?;
        self.push(value, Op::Upsample { input, rows, len, factor }, "upsample")
    }

    /// Affine layer: input `[n, fan_in]`, weight `[fan_out, fan_in]`, bias `[fan_out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, fan_in) = match *self.shape(input) {
            [n, i] => (n, i),
            ref s => return Err(Error::shape(format!("dense input must be rank 2, got {s:?}"))),
        };
        let fan_out = match *self.shape(weight) {
            [o, i] if i == fan_in => o,
            ref s => return Err(Error::shape(format!("dense weight {s:?} does not accept {fan_in} inputs"))),
        };
        if self.shape(bias) != [fan_out] {
            return Err(Error::shape(format!("dense bias {:?} does not match {fan_out}", self.shape(bias))));
        }
        let out = kernels::dense_forward(
            n,
            fan_in,
            fan_out,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![n, fan_out], out)?;
        self.push(value, Op::Dense { input, weight, bias, n, fan_in, fan_out }, "dense")
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push(value, Op::Reshape(input), "reshape")
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(|v| v.max(0.0));
        self.push(value, Op::Relu(input), "relu")
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(f64::tanh);
        self.push(value, Op::Tanh(input), "tanh")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: operand shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.zip_with(a, b, |x, y| x + y);
        self.push(value, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.zip_with(a, b, |x, y| x - y);
        self.push(value, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.zip_with(a, b, |x, y| x * y);
        self.push(value, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v * factor);
        self.push(value, Op::Scale(input, factor), "scale")
    }

    /// Add a constant to every element.
    pub fn offset(&mut self, input: Var, shift: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v + shift);
        self.push(value, Op::Offset(input), "offset")
    }

    pub fn square(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(|v| v * v);
        self.push(value, Op::Square(input), "square")
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(value, Op::Mean(input), "mean")
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(value, Op::Sum(input), "sum")
    }

    /// Mean squared difference between two equally shaped nodes.
    pub fn mse(&mut self, prediction: Var, target: Var) -> Result<Var> {
        let diff = self.sub(prediction, target)?;
        let sq = self.square(diff)?;
        self.mean(sq)
    }

    /// Column `col` of a `[rows, cols]` node, as `[rows, 1]`.
    pub fn column(&mut self, input: Var, col: usize) -> Result<Var> {
        let (rows, cols) = match *self.shape(input) {
            [r, c] if col < c => (r, c),
            ref s => return Err(Error::shape(format!("column {col} of {s:?}"))),
        };
        let src = self.value(input).data();
        let data = (0..rows).map(|r| src[r * cols + col]).collect();
        let value = Tensor::new(vec![rows, 1], data)?;
        self.push(value, Op::Column { input, col, cols }, "column")
    }

    /// Repeat a rank-1 node `[p]` into `[rows, p]`.
    pub fn broadcast_rows(&mut self, input: Var, rows: usize) -> Result<Var> {
        let src = self.value(input);
        if src.rank() != 1 {
            return Err(Error::shape(format!("broadcast_rows expects rank 1, got {:?}", src.shape())));
        }
        let p = src.len();
        let mut data = Vec::with_capacity(rows * p);
        for _ in 0..rows {
            data.extend_from_slice(src.data());
        }
        let value = Tensor::new(vec![rows, p], data)?;
        self.push(value, Op::BroadcastRows { input, rows }, "broadcast_rows")
    }

    /// Record an externally defined primitive whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: Vec<Var>, value: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        let name = op.name();
        self.push(value, Op::Custom { inputs, op }, name)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut params: Vec<Option<Tensor>> = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let acc = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            let like =
                |v: Var, data: Vec<f64>| Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape");
            match &node.op {
                Op::Constant => {}
                Op::Param(slot) => {
                    if params.len() <= *slot {
                        params.resize(*slot + 1, None);
                    }
                    match &mut params[*slot] {
                        Some(existing) => existing.add_assign(&g),
                        s @ None => *s = Some(g),
                    }
                }
                Op::Conv1d { input, filters, bias, geometry } => {
                    let (gx, gf, gb) = kernels::conv1d_backward(
                        geometry,
                        self.value(*input).data(),
                        self.value(*filters).data(),
                        g.data(),
                    );
                    acc(*input, like(*input, gx), &mut grads);
                    acc(*filters, like(*filters, gf), &mut grads);
                    acc(*bias, like(*bias, gb), &mut grads);
                }
                Op::MaxPool { input, argmax } => {
                    let mut gx = vec![0.0; self.value(*input).len()];
                    for (&i, &gv) in argmax.iter().zip(g.data()) {
                        gx[i] += gv;
                    }
                    acc(*input, like(*input, gx), &mut grads);
                }
                Op::Upsample { input, rows, len, factor } => {
                    let gx = kernels::upsample_backward(*rows, *len, *factor, g.data());
                    acc(*input, like(*input, gx), &mut grads);
                }
                Op::Dense { input, weight, bias, n, fan_in, fan_out } => {
                    let (gx, gw, gb) = kernels::dense_backward(
                        *n,
                        *fan_in,
                        *fan_out,
                        self.value(*input).data(),
                        self.value(*weight).data(),
                        g.data(),
                    );
                    acc(*input, like(*input, gx), &mut grads);
                    acc(*weight, like(*weight, gw), &mut grads);
                    acc(*bias, like(*bias, gb), &mut grads);
                }
                Op::Reshape(input) => {
                    let gx = g.into_data();
                    acc(*input, like(*input, gx), &mut grads);
                }
                Op::Relu(input) => {
                    let x = self.value(*input).data();
                    let gx = g.data().iter().zip(x).map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 }).collect();
                    acc(*input, like(*input, gx), &mut grads);
                }
                Op::Tanh(input) => {
                    let y = node.value.data();
                    let gx = g.data().iter().zip(y).map(|(&gv, &yv)| gv * (1.0 - yv * yv)).collect();
                    acc(*input, like(*input, gx), &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|v| -v), &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let ga = g.data().iter().zip(vb).map(|(x, y)| x * y).collect();
                    let gb = g.data().iter().zip(va).map(|(x, y)| x * y).collect();
                    acc(*a, like(*a, ga), &mut grads);
                    acc(*b, like(*b, gb), &mut grads);
                }
                Op::Scale(input, factor) => {
                    let f = *factor;
                    acc(*input, g.map(|v| v * f), &mut grads);
                }
                Op::Offset(input) => acc(*input, g, &mut grads),
                Op::Square(input) => {
                    let x = self.value(*input).data();
                    let gx = g.data().iter().zip(x).map(|(gv, xv)| 2.0 * gv * xv).collect();
                    acc(*input, like(*input, gx), &mut grads);
                }
                Op::Mean(input) => {
                    let n = self.value(*input).len();
                    let gx = vec![g.item() / n as f64; n];
                    acc(*input, like(*input, gx), &mut grads);
                }
                Op::Sum(input) => {
                    let n = self.value(*input).len();
                    acc(*input, like(*input, vec![g.item(); n]), &mut grads);
                }
                Op::Column { input, col, cols } => {
                    let mut gx = vec![0.0; self.value(*input).len()];
                    for (r, &gv) in g.data().iter().enumerate() {
                        gx[r * cols + col] = gv;
                    }
                    acc(*input, like(*input, gx), &mut grads);
                }
                Op::BroadcastRows { input, rows } => {
                    let p = self.value(*input).len();
                    let mut gx = vec![0.0; p];
                    for r in 0..*rows {
                        for (a, b) in gx.iter_mut().zip(&g.data()[r * p..(r + 1) * p]) {
                            *a += b;
                        }
                    }
                    acc(*input, like(*input, gx), &mut grads);
                }
                Op::Custom { inputs, op } => {
                    let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                    let local = op.backward(&values, &node.value, &g);
                    for (v, t) in inputs.iter().zip(local) {
                        acc(*v, t, &mut grads);
                    }
                }
            }
        }
        Ok(Gradients { grads: params })
    }
}

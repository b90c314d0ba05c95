//! Forward and backward kernels for the batched 1-D network primitives.
//!
//! Every kernel works on `[batch, channels, length]` arrays stored row-major.

use crate::error::{Error, Result};

/// Geometry of one 1-D cross-correlation layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_len: usize,
    pub width: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_len: usize,
}

impl ConvGeometry {
    pub fn new(
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        in_len: usize,
        width: usize,
        stride: usize,
        zero_pad: bool,
    ) -> Result<Self> {
        if stride == 0 || width == 0 {
            return Err(Error::config("conv1d stride and width must be positive"));
        }
        let pad = if zero_pad { width / 2 } else { 0 };
        let padded = in_len + 2 * pad;
        if width > padded {
            return Err(Error::config(format!("conv1d filter width {width} exceeds padded input length {padded}")));
        }
        if !(padded - width).is_multiple_of(stride) {
            return Err(Error::config(format!(
                "conv1d stride {stride} does not divide the padded traversal {}",
                padded - width
            )));
        }
        let out_len = (padded - width) / stride + 1;
        Ok(Self { batch, in_channels, out_channels, in_len, width, stride, pad, out_len })
    }

    /// Range of output positions `j` for which input index `j*stride + w - pad` is in bounds.
    #[inline]
    fn valid_outputs(&self, w: usize) -> (usize, usize) {
        let lo = if w >= self.pad { 0 } else { (self.pad - w).div_ceil(self.stride) };
        // need j*stride + w - pad <= in_len - 1
        let max_num = self.in_len + self.pad;
        let hi = if max_num > w { ((max_num - w - 1) / self.stride + 1).min(self.out_len) } else { 0 };
        (lo, hi.max(lo))
    }
}

/// `out[b,o,j] = bias[o] + sum_{c,w} filters[o,c,w] * x[b,c,j*stride + w - pad]`.
pub fn conv1d_forward(g: &ConvGeometry, x: &[f64], filters: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.out_channels * g.out_len];
    for b in 0..g.batch {
        for o in 0..g.out_channels {
            let row = &mut out[(b * g.out_channels + o) * g.out_len..][..g.out_len];
            row.fill(bias[o]);
            for c in 0..g.in_channels {
                let xin = &x[(b * g.in_channels + c) * g.in_len..][..g.in_len];
                let f = &filters[(o * g.in_channels + c) * g.width..][..g.width];
                for (w, &fw) in f.iter().enumerate() {
                    let (lo, hi) = g.valid_outputs(w);
                    if g.stride == 1 {
                        let start = lo + w - g.pad;
                        for (r, &xv) in row[lo..hi].iter_mut().zip(&xin[start..start + hi - lo]) {
                            *r += fw * xv;
                        }
                    } else {
                        for j in lo..hi {
                            row[j] += fw * xin[j * g.stride + w - g.pad];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv1d_forward`] with respect to input, filters and bias.
pub fn conv1d_backward(
    g: &ConvGeometry,
    x: &[f64],
    filters: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gf = vec![0.0; filters.len()];
    let mut gb = vec![0.0; g.out_channels];
    for b in 0..g.batch {
        for o in 0..g.out_channels {
            let go = &grad_out[(b * g.out_channels + o) * g.out_len..][..g.out_len];
            gb[o] += go.iter().sum::<f64>();
            for c in 0..g.in_channels {
                let base = (b * g.in_channels + c) * g.in_len;
                let fbase = (o * g.in_channels + c) * g.width;
                for w in 0..g.width {
                    let (lo, hi) = g.valid_outputs(w);
                    let fw = filters[fbase + w];
                    let mut acc = 0.0;
                    if g.stride == 1 {
                        let start = base + lo + w - g.pad;
                        let xs = &x[start..start + hi - lo];
                        let gxs = &mut gx[start..start + hi - lo];
                        for ((gv, gxv), &xv) in go[lo..hi].iter().zip(gxs.iter_mut()).zip(xs) {
                            acc += gv * xv;
                            *gxv += fw * gv;
                        }
                    } else {
                        for j in lo..hi {
                            let i = base + j * g.stride + w - g.pad;
                            acc += go[j] * x[i];
                            gx[i] += fw * go[j];
                        }
                    }
                    gf[fbase + w] += acc;
                }
            }
        }
    }
    (gx, gf, gb)
}

/// Non-overlapping max pooling along the last axis. Returns values and flat argmax indices.
/// Ties resolve to the lowest index.
pub fn maxpool_forward(rows: usize, len: usize, window: usize, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let out_len = len / window;
    let mut out = Vec::with_capacity(rows * out_len);
    let mut argmax = Vec::with_capacity(rows * out_len);
    for r in 0..rows {
        for j in 0..out_len {
            let start = r * len + j * window;
            let mut best = start;
            for i in start + 1..start + window {
                if x[i] > x[best] {
                    best = i;
                }
            }
            out.push(x[best]);
            argmax.push(best);
        }
    }
    (out, argmax)
}

pub fn upsample_forward(rows: usize, len: usize, factor: usize, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * len * factor);
    for &v in &x[..rows * len] {
        out.extend(std::iter::repeat_n(v, factor));
    }
    out
}

pub fn upsample_backward(rows: usize, len: usize, factor: usize, grad_out: &[f64]) -> Vec<f64> {
    grad_out[..rows * len * factor].chunks(factor).map(|c| c.iter().sum()).collect()
}

/// `y[n,o] = sum_i x[n,i] * w[o,i] + b[o]`.
pub fn dense_forward(n: usize, fan_in: usize, fan_out: usize, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n * fan_out];
    for r in 0..n {
        let xr = &x[r * fan_in..][..fan_in];
        for o in 0..fan_out {
            let wr = &w[o * fan_in..][..fan_in];
            y[r * fan_out + o] = b[o] + xr.iter().zip(wr).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    y
}

pub fn dense_backward(
    n: usize,
    fan_in: usize,
    fan_out: usize,
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; n * fan_in];
    let mut gw = vec![0.0; fan_out * fan_in];
    let mut gb = vec![0.0; fan_out];
    for r in 0..n {
        let xr = &x[r * fan_in..][..fan_in];
        for o in 0..fan_out {
            let go = grad_out[r * fan_out + o];
            if go == 0.0 {
                continue;
            }
            gb[o] += go;
            let wr = &w[o * fan_in..][..fan_in];
            let gwr = &mut gw[o * fan_in..][..fan_in];
            for i in 0..fan_in {
                gwr[i] += go * xr[i];
            }
            let gxr = &mut gx[r * fan_in..][..fan_in];
            for i in 0..fan_in {
                gxr[i] += go * wr[i];
            }
        }
    }
    (gx, gw, gb)
}

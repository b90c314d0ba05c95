use std::sync::LazyLock;

use super::dual::{Dual, Scalar};
use crate::error::{Error, Result};

pub const MIN_BIN_WIDTH: f64 = 1e-3;
pub const MIN_BIN_HEIGHT: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Unconstrained values per transformed coordinate: `bins` widths, `bins` heights and
/// `bins − 1` interior knot derivatives.
pub const fn raw_param_count(bins: usize) -> usize {
    3 * bins - 1
}

/// Monotone rational-quadratic spline on `[−bound, bound]`, identity outside.
#[derive(Debug, Clone, PartialEq)]
pub struct RqSplineParams {
    pub widths: Vec<f64>,
    pub heights: Vec<f64>,
    /// `bins + 1` knot derivatives; the outer two are 1 so the tails join smoothly.
    pub derivatives: Vec<f64>,
    pub bound: f64,
}

/// Shift making a raw derivative of 0 map to exactly 1.
fn derivative_shift() -> f64 {
    static SHIFT: LazyLock<f64> = LazyLock::new(|| (1.0 - MIN_DERIVATIVE).exp_m1().ln());
    *SHIFT
}

fn softmax<S: Scalar>(raw: &[S]) -> Vec<S> {
    let m = raw.iter().map(|v| v.re()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<S> = raw.iter().map(|&v| (v - S::cst(m)).exp()).collect();
    let total = e.iter().fold(S::cst(0.0), |a, &b| a + b);
    e.into_iter().map(|v| v / total).collect()
}

/// Map unconstrained values to (widths, heights, derivatives).
pub(crate) fn constrain<S: Scalar>(raw: &[S], bins: usize, bound: f64) -> (Vec<S>, Vec<S>, Vec<S>) {
    let span = 2.0 * bound;
    let bin = |p: &[S], min: f64| -> Vec<S> {
        softmax(p).into_iter().map(|v| S::cst(span * min) + S::cst(span * (1.0 - min * bins as f64)) * v).collect()
    };
    let widths = bin(&raw[..bins], MIN_BIN_WIDTH);
    let heights = bin(&raw[bins..2 * bins], MIN_BIN_HEIGHT);
    let shift = S::cst(derivative_shift());
    let mut derivs = Vec::with_capacity(bins + 1);
    derivs.push(S::cst(1.0));
    for &r in &raw[2 * bins..] {
        derivs.push(S::cst(MIN_DERIVATIVE) + (r + shift).softplus());
    }
    derivs.push(S::cst(1.0));
    (widths, heights, derivs)
}

fn knots<S: Scalar>(sizes: &[S], bound: f64) -> Vec<S> {
    let mut k = Vec::with_capacity(sizes.len() + 1);
    let mut acc = S::cst(-bound);
    k.push(acc);
    for &s in &sizes[..sizes.len() - 1] {
        acc = acc + s;
        k.push(acc);
    }
    k.push(S::cst(bound));
    k
}

fn locate(knots_re: impl Iterator<Item = f64>, v: f64, bins: usize) -> usize {
    let mut bin = 0;
    for (i, k) in knots_re.enumerate().take(bins) {
        if v >= k {
            bin = i;
        }
    }
    bin
}

/// `(y, ln dy/dx)` inside one bin given its corner knots and end derivatives.
fn bin_map<S: Scalar>(x: S, xlo: S, xhi: S, ylo: S, yhi: S, d0: S, d1: S) -> (S, S) {
    let w = xhi - xlo;
    let h = yhi - ylo;
    let s = h / w;
    let xi = (x - xlo) / w;
    let one = S::cst(1.0);
    let om = one - xi;
    let xo = xi * om;
    let den = s + (d1 + d0 - S::cst(2.0) * s) * xo;
    let y = ylo + h * (s * xi * xi + d0 * xo) / den;
    let num = d1 * xi * xi + S::cst(2.0) * s * xo + d0 * om * om;
    let logdet = S::cst(2.0) * s.ln() + num.ln() - S::cst(2.0) * den.ln();
    (y, logdet)
}

/// `(y, ln dy/dx)` for constrained parameters.
pub(crate) fn forward_core<S: Scalar>(x: S, widths: &[S], heights: &[S], derivs: &[S], bound: f64) -> (S, S) {
    if x.re() <= -bound || x.re() >= bound {
        return (x, S::cst(0.0));
    }
    let bins = widths.len();
    let xk = knots(widths, bound);
    let yk = knots(heights, bound);
    let k = locate(xk.iter().map(|v| v.re()), x.re(), bins);
    bin_map(x, xk[k], xk[k + 1], yk[k], yk[k + 1], derivs[k], derivs[k + 1])
}

/// Spline value and log-determinant with their gradients with respect to the input
/// (slot 0) and the raw parameters (slots `1..`).
pub(crate) fn forward_with_gradient(
    x: f64,
    raw: &[f64],
    bins: usize,
    bound: f64,
    dy: &mut [f64],
    dl: &mut [f64],
) -> (f64, f64) {
    dy.iter_mut().for_each(|v| *v = 0.0);
    dl.iter_mut().for_each(|v| *v = 0.0);
    if x <= -bound || x >= bound {
        dy[0] = 1.0;
        return (x, 0.0);
    }
    let span = 2.0 * bound;
    let cw = span * (1.0 - MIN_BIN_WIDTH * bins as f64);
    let ch = span * (1.0 - MIN_BIN_HEIGHT * bins as f64);
    let sw = softmax(&raw[..bins]);
    let sh = softmax(&raw[bins..2 * bins]);
    // Bin search on the width knots; the last knot is pinned to the bound.
    let mut k = 0;
    let mut xlo = -bound;
    let mut ylo = -bound;
    while k + 1 < bins {
        let next = xlo + span * MIN_BIN_WIDTH + cw * sw[k];
        if x < next {
            break;
        }
        xlo = next;
        ylo += span * MIN_BIN_HEIGHT + ch * sh[k];
        k += 1;
    }
    let (xhi, yhi) = if k + 1 < bins {
        (xlo + span * MIN_BIN_WIDTH + cw * sw[k], ylo + span * MIN_BIN_HEIGHT + ch * sh[k])
    } else {
        (bound, bound)
    };
    let shift = derivative_shift();
    let interior = |slot: usize| -> (f64, f64) {
        if slot == 0 || slot == bins {
            (1.0, 0.0)
        } else {
            let r = raw[2 * bins + slot - 1] + shift;
            (MIN_DERIVATIVE + r.softplus(), 1.0 / (1.0 + (-r).exp()))
        }
    };
    let ((d0, s0), (d1, s1)) = (interior(k), interior(k + 1));
    type D7 = Dual<7>;
    let v = |val: f64, i: usize| D7::var(val, i);
    let (y, ld) = bin_map(v(x, 0), v(xlo, 1), v(xhi, 2), v(ylo, 3), v(yhi, 4), v(d0, 5), v(d1, 6));
    for (out, g) in [(&mut *dy, y.d), (&mut *dl, ld.d)] {
        out[0] = g[0];
        // Knot j is −B + Σ_{i<j} size_i, so bin size i moves the lower knot when i < k
        // and the upper knot when i ≤ k (unless the upper knot is the pinned bound).
        let upper = if k + 1 < bins { 1.0 } else { 0.0 };
        let gsize = |i: usize, lo: f64, hi: f64| {
            if i < k {
                lo + upper * hi
            } else if i == k {
                upper * hi
            } else {
                0.0
            }
        };
        let (mut dot_w, mut dot_h) = (0.0, 0.0);
        for i in 0..=k.min(bins - 1) {
            dot_w += sw[i] * gsize(i, g[1], g[2]);
            dot_h += sh[i] * gsize(i, g[3], g[4]);
        }
        for j in 0..bins {
            out[1 + j] = cw * sw[j] * (gsize(j, g[1], g[2]) - dot_w);
            out[1 + bins + j] = ch * sh[j] * (gsize(j, g[3], g[4]) - dot_h);
        }
        if k >= 1 {
            out[2 * bins + k] += g[5] * s0;
        }
        if k + 1 < bins {
            out[2 * bins + k + 1] += g[6] * s1;
        }
    }
    (y.v, ld.v)
}

pub(crate) fn inverse_core(y: f64, widths: &[f64], heights: &[f64], derivs: &[f64], bound: f64) -> (f64, f64) {
    if y <= -bound || y >= bound {
        return (y, 0.0);
    }
    let bins = widths.len();
    let xk = knots(widths, bound);
    let yk = knots(heights, bound);
    let k = locate(yk.iter().copied(), y, bins);
    let w = xk[k + 1] - xk[k];
    let h = yk[k + 1] - yk[k];
    let s = h / w;
    let (d0, d1) = (derivs[k], derivs[k + 1]);
    let dy = y - yk[k];
    let c2 = d1 + d0 - 2.0 * s;
    let a = h * (s - d0) + dy * c2;
    let b = h * d0 - dy * c2;
    let c = -s * dy;
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let xi = (2.0 * c) / (-b - disc.sqrt());
    let x = xk[k] + xi * w;
    let (_, fwd) = forward_core(x, widths, heights, derivs, bound);
    (x, -fwd)
}

impl RqSplineParams {
    /// Uniform bins with unit derivatives: the identity map.
    pub fn identity(bins: usize, bound: f64) -> Self {
        Self::from_raw(&vec![0.0; raw_param_count(bins)], bins, bound).expect("identity spline is valid")
    }

    pub fn from_raw(raw: &[f64], bins: usize, bound: f64) -> Result<Self> {
        if bins < 2 || raw.len() != raw_param_count(bins) {
            return Err(Error::shape(format!(
                "{bins}-bin spline takes {} raw values, got {}",
                raw_param_count(bins),
                raw.len()
            )));
        }
        if !(bound > 0.0) || !raw.iter().all(|v| v.is_finite()) {
            return Err(Error::config("spline needs a positive bound and finite parameters"));
        }
        let (widths, heights, derivatives) = constrain(raw, bins, bound);
        Ok(Self { widths, heights, derivatives, bound })
    }

    pub fn bins(&self) -> usize {
        self.widths.len()
    }
}

/// `(y, ln|dy/dx|)`.
pub fn rq_spline_forward(x: f64, p: &RqSplineParams) -> (f64, f64) {
    forward_core(x, &p.widths, &p.heights, &p.derivatives, p.bound)
}

/// `(x, ln|dx/dy|)`.
pub fn rq_spline_inverse(y: f64, p: &RqSplineParams) -> (f64, f64) {
    inverse_core(y, &p.widths, &p.heights, &p.derivatives, p.bound)
}


#[cfg(test)]
mod gradient_tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn analytic_gradient_matches_full_dual() {
        let mut rng = seeded(21);
        const N: usize = 24;
        for _ in 0..200 {
            let raw: Vec<f64> = (0..raw_param_count(8)).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x = rng.random_range(-3.2..3.2);
            let mut dy = [0.0; N];
            let mut dl = [0.0; N];
            let (y, ld) = forward_with_gradient(x, &raw, 8, 3.0, &mut dy, &mut dl);
            let xd = Dual::<N>::var(x, 0);
            let rd: Vec<Dual<N>> = raw.iter().enumerate().map(|(j, &r)| Dual::var(r, j + 1)).collect();
            let (w, h, d) = constrain(&rd, 8, 3.0);
            let (yd, ldd) = forward_core(xd, &w, &h, &d, 3.0);
            assert!((y - yd.v).abs() < 1e-13 && (ld - ldd.v).abs() < 1e-13);
            for j in 0..N {
                assert!((dy[j] - yd.d[j]).abs() < 1e-9, "dy[{j}] {} vs {}", dy[j], yd.d[j]);
                assert!((dl[j] - ldd.d[j]).abs() < 1e-9, "dl[{j}] {} vs {}", dl[j], ldd.d[j]);
            }
        }
    }
}

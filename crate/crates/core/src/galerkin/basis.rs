use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::burgers::GridSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    FourierSine,
    Pod,
}

/// `d` basis functions sampled on a set of quadrature nodes.
///
/// Inner products are `(f, g) = Σ_k w_k f(x_k) g(x_k)`. The sine basis uses the closed
/// grid `x_0 … x_K` including the right boundary so that the trapezoid rule is exact
/// for its products; a POD basis lives on the sampled data grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub kind: BasisKind,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `d × nodes`.
    values: DMatrix<f64>,
    derivatives: DMatrix<f64>,
    singular_values: Vec<f64>,
}

/// Composite trapezoid weights on uniformly spaced nodes.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// `φ_l(x) = sqrt(2/L) sin(lπx/L)` for `l = 1..=d`.
pub fn fourier_sine_basis(d: usize, grid: &GridSpec) -> Result<BasisSet> {
    grid.validate()?;
    let k = grid.space_points;
    if d == 0 || d >= k {
        return Err(Error::config(format!("sine basis dimension must lie in 1..{k}, got {d}")));
    }
    let len = grid.length;
    let nodes: Vec<f64> = (0..=k).map(|i| grid.x(i)).collect();
    let amp = (2.0 / len).sqrt();
    let values = DMatrix::from_fn(d, k + 1, |l, i| amp * ((l + 1) as f64 * PI * nodes[i] / len).sin());
    let derivatives = DMatrix::from_fn(d, k + 1, |l, i| {
        let w = (l + 1) as f64 * PI / len;
        amp * w * (w * nodes[i]).cos()
    });
    Ok(BasisSet {
        kind: BasisKind::FourierSine,
        weights: trapezoid_weights(k + 1, grid.dx()),
        nodes,
        values,
        derivatives,
        singular_values: Vec::new(),
    })
}

/// Leading `d` POD modes of snapshot rows (`T × K`, mean retained), orthonormal under
/// the trapezoid inner product on the data grid.
pub fn pod_basis(snapshots: &DMatrix<f64>, d: usize, grid: &GridSpec) -> Result<BasisSet> {
    grid.validate()?;
    let k = grid.space_points;
    if snapshots.ncols() != k {
        return Err(Error::shape(format!("snapshots have {} columns, grid has {k} points", snapshots.ncols())));
    }
    if d == 0 {
        return Err(Error::config("POD dimension must be positive"));
    }
    let h = grid.dx();
    let weights = trapezoid_weights(k, h);
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    // Weighted snapshot matrix: columns are snapshots in the quadrature-scaled metric.
    let x = DMatrix::from_fn(k, snapshots.nrows(), |i, j| sqrt_w[i] * snapshots[(j, i)]);
    let svd = x.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::numerical("SVD did not return left singular vectors"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let rank = sigma.iter().take_while(|&&s| s >= 1e-12 * sigma[0]).count();
    if sigma.is_empty() || sigma[0] == 0.0 || d > rank {
        return Err(Error::config(format!("POD dimension {d} exceeds the numerical rank {rank} of the snapshots")));
    }
    let values = DMatrix::from_fn(d, k, |l, i| u[(i, order[l])] / sqrt_w[i]);
    let derivatives = DMatrix::from_fn(d, k, |l, i| {
        let f = |j: usize| values[(l, j)];
        if i == 0 {
            (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
        } else if i == k - 1 {
            (3.0 * f(k - 1) - 4.0 * f(k - 2) + f(k - 3)) / (2.0 * h)
        } else {
            (f(i + 1) - f(i - 1)) / (2.0 * h)
        }
    });
    Ok(BasisSet { kind: BasisKind::Pod, nodes: grid.xs(), weights, values, derivatives, singular_values: sigma })
}

impl BasisSet {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn derivatives(&self) -> &DMatrix<f64> {
        &self.derivatives
    }

    /// All singular values of the weighted snapshot matrix, descending (POD only).
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let d = self.dim();
        let rows: Vec<Vec<f64>> = (0..d).map(|l| self.values.row(l).iter().copied().collect()).collect();
        DMatrix::from_fn(d, d, |i, j| self.inner(&rows[i], &rows[j]))
    }

    /// Coefficients `y_l = (u, φ_l)` of a function sampled on the basis nodes.
    pub fn project(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.nodes.len() {
            return Err(Error::shape(format!("expected {} samples, got {}", self.nodes.len(), u.len())));
        }
        Ok((0..self.dim())
            .map(|l| self.inner(self.values.row(l).iter().copied().collect::<Vec<_>>().as_slice(), u))
            .collect())
    }

    /// `u_d(x_k) = Σ_l y_l φ_l(x_k)` on the basis nodes.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        (0..self.nodes.len()).map(|i| (0..self.dim()).map(|l| coeffs[l] * self.values[(l, i)]).sum()).collect()
    }

    /// Discrete L² norm `sqrt((f, f))`.
    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_basis_is_orthonormal() {
        let b = fourier_sine_basis(12, &GridSpec::default()).unwrap();
        let g = b.gram();
        assert!((g - DMatrix::identity(12, 12)).abs().max() < 1e-6);
        for l in 0..12 {
            assert!(b.values()[(l, 0)].abs() < 1e-14);
            assert!(b.values()[(l, 128)].abs() < 1e-12);
        }
    }

    #[test]
    fn sine_derivative_products() {
        let b = fourier_sine_basis(6, &GridSpec::default()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let di: Vec<f64> = b.derivatives().row(i).iter().copied().collect();
                let dj: Vec<f64> = b.derivatives().row(j).iter().copied().collect();
                let expect = if i == j { ((i + 1) as f64 * PI).powi(2) } else { 0.0 };
                assert!((b.inner(&di, &dj) - expect).abs() < 1e-4 * expect.max(1.0));
            }
        }
    }

    #[test]
    fn sine_dimension_bounds() {
        assert!(fourier_sine_basis(0, &GridSpec::default()).is_err());
        assert!(fourier_sine_basis(128, &GridSpec::default()).is_err());
    }

    fn two_mode_snapshots(grid: &GridSpec) -> DMatrix<f64> {
        DMatrix::from_fn(30, grid.space_points, |t, k| {
            let x = grid.x(k);
            (t as f64 * 0.1).cos() * (2.0 * x).exp() + (t as f64 * 0.3).sin() * x * x
        })
    }

    #[test]
    fn pod_reconstructs_low_rank_data() {
        let grid = GridSpec::default();
        let s = two_mode_snapshots(&grid);
        let b = pod_basis(&s, 2, &grid).unwrap();
        assert!((b.gram() - DMatrix::identity(2, 2)).abs().max() < 1e-8);
        for t in 0..s.nrows() {
            let u: Vec<f64> = s.row(t).iter().copied().collect();
            let r = b.reconstruct(&b.project(&u).unwrap());
            let err = u.iter().zip(&r).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{err}");
        }
        assert!(pod_basis(&s, 3, &grid).is_err());
    }

    #[test]
    fn pod_tail_identity() {
        let grid = GridSpec::new(1.0, 40, 1.0, 10).unwrap();
        let s = DMatrix::from_fn(25, 40, |t, k| ((t * 7 + k * 3) % 11) as f64 - 5.0 + 0.1 * (k as f64).sin());
        let total: f64 = (0..25)
            .map(|t| {
                let u: Vec<f64> = s.row(t).iter().copied().collect();
                trapezoid_weights(40, grid.dx()).iter().zip(&u).map(|(w, v)| w * v * v).sum::<f64>()
            })
            .sum();
        let mut prev = f64::INFINITY;
        for d in 1..6 {
            let b = pod_basis(&s, d, &grid).unwrap();
            let mut err = 0.0;
            for t in 0..25 {
                let u: Vec<f64> = s.row(t).iter().copied().collect();
                let r = b.reconstruct(&b.project(&u).unwrap());
                let diff: Vec<f64> = u.iter().zip(&r).map(|(a, c)| a - c).collect();
                err += b.inner(&diff, &diff);
            }
            let tail: f64 = b.singular_values()[d..].iter().map(|s| s * s).sum();
            assert!(((err / total).sqrt() - (tail / total).sqrt()).abs() < 1e-8);
            assert!(err <= prev + 1e-12);
            prev = err;
        }
    }
}

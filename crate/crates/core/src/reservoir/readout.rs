use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Column-stacked reservoir features `[1; r_t]`, one column per training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    features: DMatrix<f64>,
}

impl StateMatrix {
    /// Build from columns that already include the leading constant.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        if let Some(c) = columns.iter().find(|c| c.len() != rows) {
            return Err(Error::shape(format!("state column has {} entries, expected {rows}", c.len())));
        }
        Ok(Self::from_matrix(DMatrix::from_fn(rows, columns.len(), |r, c| columns[c][r])))
    }

    pub fn from_matrix(features: DMatrix<f64>) -> Self {
        Self { features }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn cols(&self) -> usize {
        self.features.ncols()
    }

    /// True when every column starts with the bias entry 1.
    pub fn has_bias_row(&self) -> bool {
        self.features.row(0).iter().all(|&v| v == 1.0)
    }
}

/// Ridge readout `W = Y Rᵀ (R Rᵀ + λI)⁻¹`.
pub fn fit_readout(states: &StateMatrix, targets: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    fit_readout_weighted(states, targets, None, lambda)
}

/// Ridge readout with per-sample weights `w`: `W = Y D Rᵀ (R D Rᵀ + λI)⁻¹`, `D = diag(w)`.
pub fn fit_readout_weighted(
    states: &StateMatrix,
    targets: &DMatrix<f64>,
    weights: Option<&[f64]>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let r = states.matrix();
    if targets.ncols() != r.ncols() {
        return Err(Error::shape(format!("{} state columns but {} target columns", r.ncols(), targets.ncols())));
    }
    if r.ncols() == 0 {
        return Err(Error::config("readout fit needs at least one sample"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config(format!("ridge penalty must be non-negative, got {lambda}")));
    }
    let weighted;
    let rw = match weights {
        None => r,
        Some(w) => {
            if w.len() != r.ncols() || w.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::config("sample weights must be non-negative, one per column"));
            }
            weighted = DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| r[(i, j)] * w[j]);
            &weighted
        }
    };
    let mut gram = rw * r.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = rw * targets.transpose();
    let singular = || {
        Error::numerical(format!(
            "readout normal equations are numerically singular at λ={lambda:e}; use a larger ridge penalty"
        ))
    };
    let chol = gram.clone().cholesky().ok_or_else(singular)?;
    let mut solution = chol.solve(&rhs);
    // One step of iterative refinement, then verify the normal-equation residual.
    let residual = &rhs - &gram * &solution;
    solution += chol.solve(&residual);
    let residual = (&rhs - &gram * &solution).norm();
    let scale = rhs.norm().max(f64::MIN_POSITIVE);
    if !solution.iter().all(|v| v.is_finite()) || residual > 1e-8 * scale {
        return Err(singular());
    }
    Ok(solution.transpose())
}

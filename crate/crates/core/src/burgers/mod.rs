//! Viscous Burgers problem on `[0, 1]` with homogeneous Dirichlet data: the closed-form
//! solution, a finite-difference oracle, and the parametric snapshot datasets.

mod analytic;
mod fd;
mod format;

pub use analytic::{analytic_u, initial_u, DOMAIN_LENGTH, OVERFLOW_EXPONENT};
pub use fd::{fd_solve, fd_solve_with, BoundaryData, FdOptions};
pub use format::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform space-time sampling grid.
///
/// Spatial samples are `x_k = k·Δx` for `k = 0..K` with `Δx = l/K` (the right boundary
/// is not sampled); time samples are `t_j = j·Δt` for `j = 1..=T` with `Δt = t_max/T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub length: f64,
    pub space_points: usize,
    pub t_max: f64,
    pub time_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { length: 1.0, space_points: 128, t_max: 2.0, time_points: 100 }
    }
}

impl GridSpec {
    pub fn new(length: f64, space_points: usize, t_max: f64, time_points: usize) -> Result<Self> {
        let grid = Self { length, space_points, t_max, time_points };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.space_points < 2 || self.time_points < 2 {
            return Err(Error::config("grid needs at least 2 space and 2 time points"));
        }
        if !(self.length > 0.0 && self.length.is_finite() && self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::config("grid length and final time must be positive"));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.length / self.space_points as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.time_points as f64
    }

    pub fn x(&self, k: usize) -> f64 {
        k as f64 * self.dx()
    }

    /// Time of sample index `j` (zero-based), i.e. `(j + 1)·Δt`.
    pub fn t(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.dt()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.space_points).map(|k| self.x(k)).collect()
    }

    pub fn ts(&self) -> Vec<f64> {
        (0..self.time_points).map(|j| self.t(j)).collect()
    }

    /// Index of the sample time equal to `t` (to 1e-9 relative), if any.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let j = (t / self.dt()).round() as i64 - 1;
        if j < 0 || j as usize >= self.time_points {
            return None;
        }
        let j = j as usize;
        ((self.t(j) - t).abs() <= 1e-9 * t.abs().max(1.0)).then_some(j)
    }
}

/// Velocity samples `u(x_k, t_j)` for one Reynolds number, stored time-major (`T × K`).
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub reynolds: f64,
    pub grid: GridSpec,
    values: Vec<f64>,
}

impl SolutionField {
    pub fn new(reynolds: f64, grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.space_points * grid.time_points {
            return Err(Error::shape(format!(
                "field needs {}×{} values, got {}",
                grid.time_points,
                grid.space_points,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("field value {i} is not finite")));
        }
        Ok(Self { reynolds, grid, values })
    }

    /// Evaluate the closed-form solution on every grid point.
    pub fn analytic(reynolds: f64, grid: GridSpec) -> Result<Self> {
        let xs = grid.xs();
        let mut values = Vec::with_capacity(grid.space_points * grid.time_points);
        for j in 0..grid.time_points {
            let t = grid.t(j);
            for &x in &xs {
                values.push(analytic_u(x, t, reynolds)?);
            }
        }
        Self::new(reynolds, grid, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Snapshot at time index `j`.
    pub fn snapshot(&self, j: usize) -> &[f64] {
        let k = self.grid.space_points;
        &self.values[j * k..(j + 1) * k]
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.grid.space_points)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest forward-difference slope magnitude of the snapshot at index `j`.
    pub fn max_gradient(&self, j: usize) -> f64 {
        max_gradient(self.snapshot(j), self.grid.dx())
    }
}

pub fn max_gradient(snapshot: &[f64], dx: f64) -> f64 {
    snapshot.windows(2).map(|w| (w[1] - w[0]).abs() / dx).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    Train,
    Test,
    #[default]
    Unspecified,
}

/// Stack of fields over strictly increasing Reynolds numbers sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricDataset {
    pub role: DatasetRole,
    grid: GridSpec,
    fields: Vec<SolutionField>,
}

impl ParametricDataset {
    pub fn new(role: DatasetRole, grid: GridSpec, fields: Vec<SolutionField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::config("dataset needs at least one field"));
        }
        for f in &fields {
            if f.grid != grid {
                return Err(Error::config(format!("field Re={} uses a different grid", f.reynolds)));
            }
        }
        for w in fields.windows(2) {
            if w[1].reynolds == w[0].reynolds {
                return Err(Error::config(format!("duplicate Reynolds number {}", w[0].reynolds)));
            }
            if w[1].reynolds < w[0].reynolds {
                return Err(Error::config("Reynolds numbers must be strictly increasing"));
            }
        }
        Ok(Self { role, grid, fields })
    }

    pub fn with_role(mut self, role: DatasetRole) -> Self {
        self.role = role;
        self
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn fields(&self) -> &[SolutionField] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn reynolds(&self) -> Vec<f64> {
        self.fields.iter().map(|f| f.reynolds).collect()
    }

    /// `[M, T, K]` extents.
    pub fn dims(&self) -> [usize; 3] {
        [self.fields.len(), self.grid.time_points, self.grid.space_points]
    }

    /// Sub-dataset holding only the listed Reynolds numbers.
    pub fn select(&self, reynolds: &[f64]) -> Result<Self> {
        let fields = reynolds
            .iter()
            .map(|&re| {
                self.fields
                    .iter()
                    .find(|f| f.reynolds == re)
                    .cloned()
                    .ok_or_else(|| Error::config(format!("Re={re} is not in the dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.role, self.grid, fields)
    }
}

/// Evaluate the closed-form solution for every Reynolds number on `grid`.
pub fn build_dataset(re_values: &[f64], grid: GridSpec, role: DatasetRole) -> Result<ParametricDataset> {
    grid.validate()?;
    if re_values.is_empty() {
        return Err(Error::config("no Reynolds numbers given"));
    }
    if let Some(re) = re_values.iter().find(|&&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::config(format!("Reynolds number {re} must be positive")));
    }
    let fields = re_values.iter().map(|&re| SolutionField::analytic(re, grid)).collect::<Result<Vec<_>>>()?;
    ParametricDataset::new(role, grid, fields)
}

/// `start, start+step, …` up to and including `stop`.
pub fn reynolds_range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| start + i as f64 * step).collect()
}

/// Training Reynolds numbers: 100, 200, …, 2000.
pub fn train_reynolds() -> Vec<f64> {
    reynolds_range(100.0, 2000.0, 100.0)
}

/// Test Reynolds numbers: 50, 250, …, 2250 (twelve values, disjoint from training).
pub fn test_reynolds() -> Vec<f64> {
    reynolds_range(50.0, 2250.0, 200.0)
}

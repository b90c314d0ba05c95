use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six reservoir hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcHyperparams {
    /// ρ: dominant eigenvalue magnitude of the adjacency matrix.
    pub spectral_radius: f64,
    /// χ: input weights and biases are drawn from `Uniform(−χ, χ)`.
    pub input_scale: f64,
    /// α: leakage rate.
    pub leakage: f64,
    /// λ: ridge penalty of the readout.
    pub regularization: f64,
    /// p_A: probability of a connection between two reservoir nodes.
    pub adjacency_density: f64,
    /// p_Win: probability that an input feeds a given node.
    pub input_density: f64,
}

/// Closed interval per hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBox {
    pub spectral_radius: (f64, f64),
    pub input_scale: (f64, f64),
    pub leakage: (f64, f64),
    pub regularization: (f64, f64),
    pub adjacency_density: (f64, f64),
    pub input_density: (f64, f64),
}

impl HyperBox {
    /// The published search ranges.
    pub const STANDARD: HyperBox = HyperBox {
        spectral_radius: (0.3, 1.5),
        input_scale: (0.3, 1.5),
        leakage: (0.05, 1.0),
        regularization: (1e-10, 1.0),
        adjacency_density: (0.0, 1.0),
        input_density: (0.0, 1.0),
    };

    /// The standard box with the spectral-radius floor lowered to 0.05, which admits the
    /// published optimum ρ = 0.1.
    pub const RELAXED: HyperBox = HyperBox { spectral_radius: (0.05, 1.5), ..HyperBox::STANDARD };

    pub fn contains(&self, h: &RcHyperparams) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(h.spectral_radius, self.spectral_radius)
            && inside(h.input_scale, self.input_scale)
            && inside(h.leakage, self.leakage)
            && inside(h.regularization, self.regularization)
            && inside(h.adjacency_density, self.adjacency_density)
            && inside(h.input_density, self.input_density)
    }
}

impl RcHyperparams {
    /// The published Bayesian-optimisation result.
    pub const TABLE2: RcHyperparams = RcHyperparams {
        spectral_radius: 0.1000,
        input_scale: 0.3332,
        leakage: 1.0000,
        regularization: 0.0040,
        adjacency_density: 0.9663,
        input_density: 0.0165,
    };

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.spectral_radius,
            self.input_scale,
            self.leakage,
            self.regularization,
            self.adjacency_density,
            self.input_density,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            spectral_radius: v[0],
            input_scale: v[1],
            leakage: v[2],
            regularization: v[3],
            adjacency_density: v[4],
            input_density: v[5],
        }
    }

    pub const NAMES: [&'static str; 6] =
        ["spectral_radius", "input_scale", "leakage", "regularization", "adjacency_density", "input_density"];

    /// Check against the standard box, or the relaxed one when `relaxed` is set.
    pub fn validate(&self, relaxed: bool) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::config("reservoir hyperparameters must be finite"));
        }
        let bounds = if relaxed { HyperBox::RELAXED } else { HyperBox::STANDARD };
        if !bounds.contains(self) {
            return Err(Error::config(format!(
                "reservoir hyperparameters {self:?} fall outside the {} search box",
                if relaxed { "relaxed" } else { "standard" }
            )));
        }
        Ok(())
    }
}

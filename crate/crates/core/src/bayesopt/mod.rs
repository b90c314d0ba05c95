//! Gaussian-process Bayesian optimisation over a box.

mod gp;
mod search;

pub use gp::{expected_improvement, GaussianProcess, GpFitOptions};
pub use search::{
    history_csv, latin_hypercube, optimize, point_seed, propose_next, BoConfig, BoResult, Dimension, EvalRecord, Scale,
    SearchBox,
};

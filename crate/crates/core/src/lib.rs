//! Reduced-order surrogate for the 1-D viscous Burgers equation.
//!
//! The stack has three learned stages that are trained independently:
//!
//! * [`cae`] compresses a 128-point velocity snapshot to a 2-D latent state;
//! * [`reservoir`] evolves that latent state with a parametric echo-state network
//!   whose readout is fitted by ridge regression;
//! * [`flow`] learns the density of the reservoir's one-step error with two
//!   autoregressive rational-quadratic spline transforms, and supplies the
//!   stochastic compensation during closed-loop rollouts.
//!
//! Around them sit [`burgers`] (exact and finite-difference solutions, datasets),
//! [`galerkin`] (the classical projection baseline), [`bayesopt`] (Gaussian-process
//! hyperparameter search) and [`pipeline`] (composition, metrics, experiments and
//! artifact emission). [`diff`] is the small reverse-mode engine that trains the
//! networks.

pub mod bayesopt;
pub mod burgers;
pub mod cae;
pub mod diff;
pub mod error;
pub mod flow;
pub mod galerkin;
pub mod io;
pub mod pipeline;
pub mod reservoir;
pub mod rng;

pub use bayesopt::{BoConfig, BoResult, SearchBox};
pub use burgers::{DatasetRole, GridSpec, ParametricDataset, SolutionField};
pub use cae::{CaeArchitecture, CaeModel, TrainConfig};
pub use diff::{Tape, Tensor};
pub use error::{Error, Result};
pub use flow::{FlowConfig, FlowModel};
pub use pipeline::{ExperimentConfig, MetricSeries, Pipeline, RunManifest, SurrogateModel};
pub use reservoir::{LatentTrajectory, RcHyperparams, RcOptions, ReservoirModel};

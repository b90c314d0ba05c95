//! Density of the reservoir's one-step latent error: two autoregressive
//! rational-quadratic spline transforms trained by maximum likelihood.

mod dual;
mod model;
mod spline;

pub use model::{quadrature_mass, train_flow, FlowConfig, FlowModel, FlowTrainReport, BINS, MIN_ERROR_STD};
pub use spline::{raw_param_count, rq_spline_forward, rq_spline_inverse, RqSplineParams};

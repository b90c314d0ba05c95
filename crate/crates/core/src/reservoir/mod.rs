//! Parametric echo-state network on latent trajectories.

mod hyper;
mod model;
mod readout;
mod sparse;
mod spectral;
mod train;

pub use hyper::{HyperBox, RcHyperparams};
pub use model::{init_reservoir, reservoir_step, InputScaling, ParameterChannel, ReservoirModel};
pub use readout::{fit_readout, fit_readout_weighted, StateMatrix};
pub use sparse::CsrMatrix;
pub use spectral::spectral_radius;
pub use train::{
    collect_training_pairs, drive_teacher_forced, one_step_errors, one_step_mse, predict_closed_loop,
    predict_closed_loop_batch, train_rc, train_rc_weighted, ChannelMode, LatentNoise, LatentTrajectory, RcOptions,
    Rollout, DIVERGENCE_NORM,
};

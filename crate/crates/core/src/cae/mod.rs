//! Convolutional autoencoder mapping a 128-point snapshot to a 2-D latent state.

mod arch;
mod model;
mod train;

pub use arch::{Activation, CaeArchitecture, FeatureShape, Layer};
pub use model::CaeModel;
pub use train::{train_cae, train_cae_on, EpochRecord, TrainConfig, TrainReport};

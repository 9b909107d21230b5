//! Streaming sparse variational GP regression of the seafloor.

pub mod elbo;
pub mod kernel;
pub mod model;
pub mod train;

pub use elbo::{elbo_minibatch, kl_to_prior, ElboGradient, ElboValue};
pub use kernel::{matern52, KernelParams};
pub use model::{Snapshot, SvgpModel};
pub use train::{sample_ui_batch, Optimizer, TrainBuffer, TrainConfig, TrainSample, Trainer};

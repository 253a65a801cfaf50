//! Rectified-flow training with channel dropout, MMD latent regularization and
//! adaptive loss weighting.

pub mod config;
pub mod dropout;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use config::{KeyValues, Section};
pub use dropout::{sample_dropout, DropoutPlan};
pub use loss::{mmd_loss, mmd_squared, AdaptiveWeights, FlowSample};
pub use optim::{cosine_lr, lr_at, AdamW};
pub use trainer::{loss_and_grads, train, write_trace, LossRecord, StepBatch, StepLoss, TrainConfig, TrainOutcome, TrainOutputs};

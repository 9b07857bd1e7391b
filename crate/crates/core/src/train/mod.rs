//! Losses, optimizer, learning-rate schedule and the training stages.

pub mod loss;
pub mod optim;
pub mod stage;

pub use loss::{loss_mae, loss_mse, LossKind};
pub use optim::{update_lr, AdamState};
pub use stage::{fine_tune, mean_loss, split_indices, train_stage, EpochRecord, FineTuneConfig, Pair, TrainConfig, TrainOutcome};

//! Label-smoothed multi-branch objective, SGD with momentum and the epoch loop.

mod config;
mod loss;
mod optimizer;
mod session;

pub use config::{lr_at_epoch, TrainConfig};
pub use loss::{combined_branch_loss, smooth_labels, smoothed_cross_entropy, smoothed_targets, BranchLoss};
pub use optimizer::{sgd_momentum_step, sgd_step_network, sgd_update, OptimizerState, SgdHyper};
pub use session::{train, EpochRecord, RunOptions, TrainHistory, TrainSession};

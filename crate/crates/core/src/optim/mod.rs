//! Optimizers and the learning-rate scaling rules.

mod scaling;
mod step;
mod train;

pub use scaling::{group_multipliers, scaled_lr, GroupMultipliers, OptimizerKind, ParamGroup};
pub use step::{adam_step, apply_step, sgd_step, OptimizerConfig, OptimizerState};
pub use train::{train, train_with_probes, TrainLog};

//! The parameterized transformer and the deep linear network.

mod config;
mod forward;
mod params;

pub use config::{Mode, ModelConfig};
pub use forward::{
    attention_logits, forward, forward_deep_linear, forward_traced, loss_and_grads,
    loss_and_grads_lite, ActivationTrace, BlockTrace, Inputs, LossKind, Targets,
};
pub use params::{check_layout, init_params, init_std, layout, multipliers, ParamId, ParamKind, Params};

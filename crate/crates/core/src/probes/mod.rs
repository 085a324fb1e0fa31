//! Measurement instruments: feature and gradient kernels, per-head attention
//! statistics and update-size meters.

mod features;
mod heads;
mod kernel;
mod meters;

pub use features::{gradient_kernel, residual_kernel, residual_kernel_over_time};
pub use heads::{
    attn_across_heads, attn_head_variance, attn_histogram, head_avg_value_kernel, head_kernels, head_stats,
    kurtosis, mean_attn_head_variance, HeadKernels, HeadStats, Histogram,
};
pub use kernel::{kernel_distance, Kernel, KernelIndex};
pub use meters::{update_meters, UpdateMeters};

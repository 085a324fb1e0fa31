//! Size sweeps, power-law fits and the scaling experiments.

mod expect;
mod experiments;
mod fit;
mod sweep;

pub use expect::{expectation_for, Bound, Expectation, Stage, EXPECTATIONS};
pub use experiments::{
    deep_linear_response_check, depth_experiment, dmft_prediction, head_collapse_experiment,
    kernel_convergence_experiment, logit_convergence_experiment, naive_prediction, stability_probe,
    trained_logits, update_scaling_experiment, Lab, ResponseRow, EXPERIMENTS,
};
pub use fit::{ensemble_proxy, fit_power_law, FitResult};
pub use sweep::{fit_rows, for_each_trial, run_sweep, Axis, FitRow, Probe, Row, SweepSpec, SweepTable};

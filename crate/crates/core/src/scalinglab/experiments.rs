use super::fit::ensemble_proxy;
use super::sweep::{fit_rows, for_each_trial, run_sweep, Axis, Probe, Row, SweepSpec, SweepTable};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::{forward, init_params, ModelConfig, Mode};
use crate::optim::{train, OptimizerConfig, OptimizerKind};
use crate::probes::{kernel_distance, residual_kernel, Kernel};
use crate::tasks::{Dataset, TaskSpec};

/// Registered experiment names.
pub const EXPERIMENTS: [&str; 7] = [
    "head_collapse",
    "kernel_convergence",
    "logit_convergence",
    "depth",
    "update_scaling",
    "deep_linear_response",
    "stability",
];

/// Settings shared by the transformer experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct Lab {
    pub base: ModelConfig,
    /// `optim.steps` is the training budget.
    pub optim: OptimizerConfig,
    pub task: TaskSpec,
    pub seeds: Vec<u64>,
}

fn label(name: &str, key: &str, value: f64) -> String {
    format!("{name}/{key}={value}")
}

fn sweep(lab: &Lab, experiment: String, axis: Axis, values: &[usize], probes: Vec<Probe>, measure_at: Vec<usize>) -> Result<SweepTable> {
    run_sweep(&SweepSpec {
        experiment,
        axis,
        values: values.to_vec(),
        base: lab.base.clone(),
        optim: lab.optim.clone(),
        task: lab.task.clone(),
        seeds: lab.seeds.clone(),
        probes,
        measure_at,
    })
}

fn check_fit_sizes(values: &[usize], what: &str) -> Result<()> {
    if values.len() < 3 {
        return Err(Error::contract(format!("{what} needs at least 3 sizes to fit, got {}", values.len())));
    }
    Ok(())
}

/// Head variance of `𝒜` versus `N` at initialization and after
/// `optim.steps` updates, plus the RMS of the keys at initialization.
pub fn head_collapse_experiment(lab: &Lab, n_values: &[usize]) -> Result<SweepTable> {
    check_fit_sizes(n_values, "head collapse")?;
    if lab.base.heads < 2 {
        return Err(Error::contract("head collapse needs at least two heads"));
    }
    sweep(
        lab,
        label("head_collapse", "alpha_a", lab.base.alpha_a),
        Axis::N,
        n_values,
        vec![Probe::HeadVariance, Probe::KeyRms],
        vec![0, lab.optim.steps],
    )
}

/// Key and pre-attention update sizes versus `N` after one step and after
/// `optim.steps` steps.
pub fn update_scaling_experiment(lab: &Lab, n_values: &[usize]) -> Result<SweepTable> {
    check_fit_sizes(n_values, "update scaling")?;
    if lab.optim.steps < 2 {
        return Err(Error::contract("update scaling needs at least two steps"));
    }
    sweep(
        lab,
        label("update_scaling", "alpha_a", lab.base.alpha_a),
        Axis::N,
        n_values,
        vec![Probe::Updates],
        vec![1, lab.optim.steps],
    )
}

/// Weight movement after `optim.steps` updates and the initial kernel
/// deviation `mean((H^L − H^1)²)`, versus depth.
pub fn depth_experiment(lab: &Lab, l_values: &[usize]) -> Result<SweepTable> {
    check_fit_sizes(l_values, "depth")?;
    sweep(
        lab,
        label("depth", "alpha_l", lab.base.alpha_l),
        Axis::L,
        l_values,
        vec![Probe::KernelDeviation, Probe::Updates],
        vec![0, lab.optim.steps],
    )
}

/// Backward-signal size versus `N` at initialization, after one step and
/// after `optim.steps` steps.
pub fn stability_probe(lab: &Lab, n_values: &[usize]) -> Result<SweepTable> {
    check_fit_sizes(n_values, "stability")?;
    if lab.optim.steps < 2 {
        return Err(Error::contract("the stability probe needs at least two steps"));
    }
    sweep(
        lab,
        label("stability", "alpha_a", lab.base.alpha_a),
        Axis::N,
        n_values,
        vec![Probe::BackwardGrowth],
        vec![0, 1, lab.optim.steps],
    )
}

fn probe_batch(lab: &Lab, cfg: &ModelConfig) -> Result<Dataset> {
    Ok(lab.task.build(cfg)?.0)
}

fn init_kernel(lab: &Lab, cfg: &ModelConfig, seed: u64, layer: usize) -> Result<Kernel> {
    let data = probe_batch(lab, cfg)?;
    let params = init_params(cfg, seed)?;
    let (_, trace) = forward(&params, cfg, &data.full().0)?;
    residual_kernel(&trace, layer, true)
}

/// Squared distance between each model's pooled initial kernel at `layer`
/// and the mean kernel of `reference_seeds` at the largest head count.
///
/// `layer` counts residual-stream positions from 1; `depth + 1` is the
/// output of the last block.
pub fn kernel_convergence_experiment(lab: &Lab, h_values: &[usize], layer: usize, reference_seeds: &[u64]) -> Result<SweepTable> {
    check_fit_sizes(h_values, "kernel convergence")?;
    if reference_seeds.is_empty() {
        return Err(Error::contract("kernel convergence needs reference seeds"));
    }
    let largest = Axis::H.apply(&lab.base, *h_values.last().unwrap());
    let refs = for_each_trial(&[largest.heads], reference_seeds, |_, s| init_kernel(lab, &largest, s, layer))?;
    let mut reference = refs[0].clone();
    reference.values = ensemble_proxy(&refs.iter().map(|k| k.values.clone()).collect::<Vec<_>>())?;
    for k in &refs {
        if k.index != reference.index {
            return Err(Error::contract("reference kernels use different index sets"));
        }
    }
    let experiment = "kernel_convergence".to_string();
    let rows = for_each_trial(h_values, &lab.seeds, |h, seed| {
        let cfg = Axis::H.apply(&lab.base, h);
        let k = init_kernel(lab, &cfg, seed, layer)?;
        Ok(Row {
            experiment: experiment.clone(),
            axis: Axis::H,
            value: h,
            seed: Some(seed),
            step: 0,
            metric: "kernel_distance".into(),
            metric_value: kernel_distance(&k, &reference)?,
            diverged: false,
        })
    })?;
    let fits = fit_rows(&rows);
    Ok(SweepTable { rows, fits })
}

/// Probe-batch logits after `steps` updates, or `None` on divergence.
pub fn trained_logits(lab: &Lab, cfg: &ModelConfig, seed: u64, steps: usize) -> Result<Option<Tensor>> {
    let (data, loss) = lab.task.build(cfg)?;
    let mut params = init_params(cfg, seed)?;
    let optim = OptimizerConfig { steps, ..lab.optim.clone() };
    if train(&mut params, cfg, &optim, &data, loss)?.diverged() {
        return Ok(None);
    }
    match forward(&params, cfg, &data.full().0) {
        Ok((logits, _)) => Ok(Some(logits)),
        Err(Error::Numeric { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Mean squared difference between each model's logits after `early_step`
/// updates and the ensemble mean of `proxy_seeds` at the largest head count.
pub fn logit_convergence_experiment(lab: &Lab, h_values: &[usize], early_step: usize, proxy_seeds: &[u64]) -> Result<SweepTable> {
    check_fit_sizes(h_values, "logit convergence")?;
    if proxy_seeds.len() < 2 {
        return Err(Error::contract("the ensemble proxy needs at least two seeds"));
    }
    let largest = Axis::H.apply(&lab.base, *h_values.last().unwrap());
    let members = for_each_trial(&[largest.heads], proxy_seeds, |_, s| trained_logits(lab, &largest, s, early_step))?;
    let members: Vec<Tensor> = members
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| Error::numeric("ensemble proxy member"))?;
    let proxy = ensemble_proxy(&members)?;
    let experiment = "logit_convergence".to_string();
    let rows = for_each_trial(h_values, &lab.seeds, |h, seed| {
        let cfg = Axis::H.apply(&lab.base, h);
        let logits = trained_logits(lab, &cfg, seed, early_step)?;
        let (v, diverged) = match logits {
            Some(z) => {
                let d = z.sub(&proxy)?;
                (d.sum_squares() / d.len() as f64, false)
            }
            None => (f64::NAN, true),
        };
        Ok(Row {
            experiment: experiment.clone(),
            axis: Axis::H,
            value: h,
            seed: Some(seed),
            step: early_step,
            metric: "logit_mse".into(),
            metric_value: v,
            diverged,
        })
    })?;
    let fits = fit_rows(&rows);
    Ok(SweepTable { rows, fits })
}

/// Measured and predicted final-layer kernel of a deep linear network after
/// one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResponseRow {
    pub depth: usize,
    pub mean: f64,
    /// Standard error of the mean over seeds.
    pub stderr: f64,
    /// `1 + η²γ₀²·Σ_{k≤L} k²`.
    pub dmft: f64,
    /// `1 + η²γ₀²·L`, the prediction that drops the response terms.
    pub naive: f64,
}

pub fn dmft_prediction(depth: usize, eta_gamma: f64) -> f64 {
    let s: f64 = (1..=depth).map(|k| (k * k) as f64).sum();
    1.0 + eta_gamma * eta_gamma * s
}

pub fn naive_prediction(depth: usize, eta_gamma: f64) -> f64 {
    1.0 + eta_gamma * eta_gamma * depth as f64
}

/// One full-batch step on a single unit-norm input with target 1, then
/// `H^L(1,1) = |h^L|²/N` for each depth.
///
/// The step uses rate `η·γ₀²·N`, so the product `η·γ₀` sets the predictions.
pub fn deep_linear_response_check(n: usize, depths: &[usize], eta: f64, gamma0: f64, seeds: &[u64]) -> Result<(Vec<ResponseRow>, SweepTable)> {
    if seeds.len() < 2 {
        return Err(Error::contract("standard errors need at least two seeds"));
    }
    let input_dim = 16;
    let x = Tensor::from_fn(&[1, input_dim], |i| if i == 0 { 1.0 } else { 0.0 });
    let data = Dataset::from_features(x.clone(), Tensor::filled(&[1, 1], 1.0), 1, 0)?;
    let experiment = "deep_linear_response".to_string();
    let mut rows = for_each_trial(depths, seeds, |depth, seed| {
        let cfg = ModelConfig {
            n,
            heads: 1,
            depth,
            seq: 1,
            input_dim,
            output_dim: 1,
            gamma0,
            mode: Mode::DeepLinear,
            ..ModelConfig::default()
        };
        let optim = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            eta0: eta,
            steps: 1,
            lr_includes_gamma0: true,
            ..OptimizerConfig::default()
        };
        let mut params = init_params(&cfg, seed)?;
        let log = train(&mut params, &cfg, &optim, &data, crate::model::LossKind::Mse)?;
        let (_, hidden) = crate::model::forward_deep_linear(&params, &cfg, &x)?;
        let h = hidden.last().unwrap();
        Ok(Row {
            experiment: experiment.clone(),
            axis: Axis::L,
            value: depth,
            seed: Some(seed),
            step: 1,
            metric: "h_last".into(),
            metric_value: h.sum_squares() / n as f64,
            diverged: log.diverged(),
        })
    })?;
    let eg = eta * gamma0;
    let mut table = Vec::new();
    for &depth in depths {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.value == depth && !r.diverged)
            .map(|r| r.metric_value)
            .collect();
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        table.push(ResponseRow {
            depth,
            mean,
            stderr: (var / m).sqrt(),
            dmft: dmft_prediction(depth, eg),
            naive: naive_prediction(depth, eg),
        });
    }
    for r in &table {
        for (metric, v) in [
            ("h_last_mean", r.mean),
            ("h_last_stderr", r.stderr),
            ("dmft_prediction", r.dmft),
            ("naive_prediction", r.naive),
        ] {
            rows.push(Row {
                experiment: experiment.clone(),
                axis: Axis::L,
                value: r.depth,
                seed: None,
                step: 1,
                metric: metric.into(),
                metric_value: v,
                diverged: false,
            });
        }
    }
    Ok((table, SweepTable { rows, fits: Vec::new() }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_lab() -> Lab {
        Lab {
            base: ModelConfig {
                n: 2,
                heads: 2,
                depth: 1,
                seq: 3,
                input_dim: 4,
                ..ModelConfig::default()
            },
            optim: OptimizerConfig {
                steps: 2,
                ..OptimizerConfig::default()
            },
            task: TaskSpec {
                n_samples: 4,
                batch_size: 4,
                ..TaskSpec::default()
            },
            seeds: vec![0, 1],
        }
    }

    #[test]
    fn predictions_match_hand_sums() {
        assert!((dmft_prediction(3, 0.1) - 1.14).abs() < 1e-12);
        assert!((dmft_prediction(8, 0.1) - 3.04).abs() < 1e-12);
        assert!((naive_prediction(3, 0.1) - 1.03).abs() < 1e-12);
        assert!((naive_prediction(8, 0.1) - 1.08).abs() < 1e-12);
    }

    #[test]
    fn single_size_cannot_be_fit() {
        let lab = tiny_lab();
        assert!(matches!(kernel_convergence_experiment(&lab, &[4], 2, &[9]), Err(Error::Contract(_))));
        assert!(head_collapse_experiment(&lab, &[1, 2]).is_err());
    }

    #[test]
    fn kernel_distances_share_index_sets() {
        let t = kernel_convergence_experiment(&tiny_lab(), &[1, 2, 4], 2, &[7, 8]).unwrap();
        assert_eq!(t.rows.len(), 6);
        assert!(t.rows.iter().all(|r| r.metric_value > 0.0));
    }

    #[test]
    fn proxy_seed_alone_measures_seed_variance() {
        let lab = Lab { seeds: vec![3], ..tiny_lab() };
        let t = logit_convergence_experiment(&lab, &[1, 2, 4], 1, &[3, 4]).unwrap();
        let last = t.rows.last().unwrap();
        assert_eq!(last.value, 4);
        assert!(last.metric_value > 0.0);
    }

    #[test]
    fn zero_rate_response_is_unity() {
        let (table, _) = deep_linear_response_check(2048, &[3], f64::MIN_POSITIVE, 1.0, &[0, 1, 2, 3]).unwrap();
        assert!((table[0].mean - 1.0).abs() < 4.0 * table[0].stderr + 0.05, "{table:?}");
    }
}

use rayon::prelude::*;

use super::fit::{fit_power_law, FitResult};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::{
    forward_traced, init_params, loss_and_grads_lite, ActivationTrace, Inputs, ModelConfig, Params, Targets,
};
use crate::optim::{train_with_probes, OptimizerConfig};
use crate::probes::{mean_attn_head_variance, residual_kernel, update_meters};
use crate::tasks::TaskSpec;

/// The size being swept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Dimension per head.
    N,
    /// Number of heads.
    H,
    /// Number of residual blocks.
    L,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::N => "N",
            Axis::H => "H",
            Axis::L => "L",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "N" => Some(Axis::N),
            "H" => Some(Axis::H),
            "L" => Some(Axis::L),
            _ => None,
        }
    }

    pub fn apply(self, base: &ModelConfig, value: usize) -> ModelConfig {
        let mut cfg = base.clone();
        match self {
            Axis::N => cfg.n = value,
            Axis::H => cfg.heads = value,
            Axis::L => cfg.depth = value,
        }
        cfg
    }
}

/// A scalar measured on the probe batch at a measurement step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    /// `head_variance`: head variance of `𝒜` averaged over layers, samples
    /// and in-support `(s, s')` pairs.
    HeadVariance,
    /// `rms_k`: RMS of key entries over all layers.
    KeyRms,
    /// `rms_dk`, `rms_da`, `rms_dk_total`, `rms_da_total`, `fro_dwk`,
    /// `fro_dwq`, `rms_dh_last` relative to initialization; skipped at step 0.
    Updates,
    /// `kernel_deviation`: mean squared entry of the difference between the
    /// final and first residual kernels.
    KernelDeviation,
    /// `backward_rms`: largest per-layer RMS of the backward signal `g^ℓ`.
    /// After step 0 also `backward_change_rms`, the same for `g^ℓ(t) - g^ℓ(0)`.
    BackwardGrowth,
    /// `loss` on the probe batch.
    Loss,
}

impl Probe {
    pub fn name(self) -> &'static str {
        match self {
            Probe::HeadVariance => "head_variance",
            Probe::KeyRms => "rms_k",
            Probe::Updates => "updates",
            Probe::KernelDeviation => "kernel_deviation",
            Probe::BackwardGrowth => "backward_rms",
            Probe::Loss => "loss",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Probe::HeadVariance,
            Probe::KeyRms,
            Probe::Updates,
            Probe::KernelDeviation,
            Probe::BackwardGrowth,
            Probe::Loss,
        ]
        .into_iter()
        .find(|p| p.name() == s)
    }
}

/// A grid of independent training runs.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    /// Label written to the experiment column.
    pub experiment: String,
    pub axis: Axis,
    /// Strictly ascending sizes.
    pub values: Vec<usize>,
    pub base: ModelConfig,
    /// Training hyperparameters; `optim.steps` is the training budget.
    pub optim: OptimizerConfig,
    pub task: TaskSpec,
    pub seeds: Vec<u64>,
    pub probes: Vec<Probe>,
    pub measure_at: Vec<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.values.windows(2).any(|w| w[0] >= w[1]) || self.values[0] == 0 {
            return Err(Error::contract("sweep values must be positive and strictly ascending"));
        }
        if self.seeds.is_empty() {
            return Err(Error::contract("sweep needs at least one seed"));
        }
        if let Some(&t) = self.measure_at.iter().find(|&&t| t > self.optim.steps) {
            return Err(Error::contract(format!(
                "measurement step {t} is past the budget of {} steps",
                self.optim.steps
            )));
        }
        for &v in &self.values {
            self.axis.apply(&self.base, v).validate()?;
        }
        self.optim.validate()
    }
}

/// One measured value. `seed` is `None` for seed aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub experiment: String,
    pub axis: Axis,
    pub value: usize,
    pub seed: Option<u64>,
    pub step: usize,
    pub metric: String,
    pub metric_value: f64,
    pub diverged: bool,
}

/// Exponent fit of one metric at one step, over non-diverged rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FitRow {
    pub experiment: String,
    pub axis: Axis,
    pub step: usize,
    pub metric: String,
    /// `Err` carries the reason no fit was possible.
    pub fit: std::result::Result<FitResult, String>,
    /// Diverged rows left out of the fit.
    pub excluded: usize,
}

/// Rows plus their exponent fits.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<Row>,
    pub fits: Vec<FitRow>,
}

impl SweepTable {
    pub fn fit(&self, metric: &str, step: usize) -> Option<&FitRow> {
        self.fits.iter().find(|f| f.metric == metric && f.step == step)
    }

    pub fn extend(&mut self, other: SweepTable) {
        self.rows.extend(other.rows);
        self.fits.extend(other.fits);
    }
}

/// Fits every `(experiment, metric, step)` series found in `rows`, keeping
/// first-appearance order.
pub fn fit_rows(rows: &[Row]) -> Vec<FitRow> {
    let mut keys: Vec<(String, Axis, String, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.seed.is_some()) {
        let key = (r.experiment.clone(), r.axis, r.metric.clone(), r.step);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(experiment, axis, metric, step)| {
            let series: Vec<&Row> = rows
                .iter()
                .filter(|r| r.seed.is_some() && r.experiment == experiment && r.metric == metric && r.step == step)
                .collect();
            let excluded = series.iter().filter(|r| r.diverged).count();
            let points: Vec<(f64, f64)> = series
                .iter()
                .filter(|r| !r.diverged)
                .map(|r| (r.value as f64, r.metric_value))
                .collect();
            FitRow {
                experiment,
                axis,
                step,
                metric,
                fit: fit_power_law(&points, true).map_err(|e| e.to_string()),
                excluded,
            }
        })
        .collect()
}

/// Runs `f(value, seed)` for the whole grid, in parallel, returning results
/// in `(value, seed)` order.
pub fn for_each_trial<T, F>(values: &[usize], seeds: &[u64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    let grid: Vec<(usize, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    grid.into_par_iter().map(|(v, s)| f(v, s)).collect()
}

/// Measurements that are functions of a single trace.
fn trace_metrics(probe: Probe, trace: &ActivationTrace) -> Result<Vec<(&'static str, f64)>> {
    Ok(match probe {
        Probe::HeadVariance => {
            let layers = trace.blocks.len();
            let mut total = 0.0;
            for l in 1..=layers {
                total += mean_attn_head_variance(trace, l)?;
            }
            vec![("head_variance", total / layers as f64)]
        }
        Probe::KeyRms => {
            let (ss, count) = trace
                .blocks
                .iter()
                .fold((0.0, 0usize), |(s, c), b| (s + b.k.sum_squares(), c + b.k.len()));
            vec![("rms_k", (ss / count as f64).sqrt())]
        }
        Probe::KernelDeviation => {
            let last = trace.residual.len();
            let first = residual_kernel(trace, 1, false)?;
            let final_ = residual_kernel(trace, last, false)?;
            let d = final_.values.sub(&first.values)?;
            vec![("kernel_deviation", d.sum_squares() / d.len() as f64)]
        }
        Probe::BackwardGrowth => {
            let back = trace
                .backward
                .as_ref()
                .ok_or_else(|| Error::contract("backward signals were not recorded"))?;
            vec![("backward_rms", back.iter().map(Tensor::rms).fold(0.0, f64::max))]
        }
        Probe::Updates | Probe::Loss => Vec::new(),
    })
}

struct Snapshot {
    params: Params,
    trace: ActivationTrace,
}

/// One run of a sweep: trains and returns `(step, metric, value)` triples
/// plus the divergence step, if any.
fn run_trial(
    spec: &SweepSpec,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<(Vec<(usize, &'static str, f64)>, Option<usize>)> {
    let (data, loss_kind) = spec.task.build(cfg)?;
    let (inputs, targets): (Inputs, Targets) = data.full();
    let mut params = init_params(cfg, seed)?;
    let mut optim = spec.optim.clone();
    optim.steps = spec.measure_at.iter().copied().max().unwrap_or(0);

    let wants_backward = spec.probes.contains(&Probe::BackwardGrowth);
    let wants_updates = spec.probes.contains(&Probe::Updates);
    let mut init: Option<Snapshot> = None;
    let mut init_back: Option<Vec<Tensor>> = None;
    let mut out = Vec::new();
    let mut failed_at = None;

    let mut probe_steps = spec.measure_at.clone();
    if (wants_updates || wants_backward) && !probe_steps.contains(&0) {
        probe_steps.push(0);
    }
    let log = train_with_probes(&mut params, cfg, &optim, &data, loss_kind, &probe_steps, |t, p| {
        if failed_at.is_some() {
            return Ok(());
        }
        let trace = match forward_traced(p, cfg, &inputs, wants_backward) {
            Ok((_, trace)) => trace,
            Err(Error::Numeric { .. }) => {
                failed_at = Some(t);
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let measured = spec.measure_at.contains(&t);
        if measured {
            for &probe in &spec.probes {
                for (name, v) in trace_metrics(probe, &trace)? {
                    out.push((t, name, v));
                }
                if probe == Probe::Loss {
                    out.push((t, "loss", loss_and_grads_lite(p, cfg, &inputs, &targets, loss_kind)?.0));
                }
            }
        }
        if wants_backward {
            let back = trace.backward.as_ref().expect("backward requested");
            if t == 0 {
                init_back = Some(back.clone());
            } else if measured {
                let before = init_back.as_ref().expect("initial backward taken at step 0");
                let mut worst = 0.0f64;
                for (a, b) in back.iter().zip(before) {
                    worst = worst.max(a.sub(b)?.rms());
                }
                out.push((t, "backward_change_rms", worst));
            }
        }
        if wants_updates {
            if t == 0 {
                init = Some(Snapshot {
                    params: p.clone(),
                    trace: trace.clone(),
                });
            } else if measured {
                let s = init.as_ref().expect("initial snapshot taken at step 0");
                let m = update_meters(cfg, &s.params, p, &s.trace, &trace)?;
                out.extend([
                    (t, "rms_dk", m.rms_dk),
                    (t, "rms_da", m.rms_da),
                    (t, "rms_dk_total", m.rms_dk_total),
                    (t, "rms_da_total", m.rms_da_total),
                    (t, "fro_dwk", m.fro_dwk),
                    (t, "fro_dwq", m.fro_dwq),
                    (t, "rms_dh_last", m.rms_dh_last),
                ]);
            }
        }
        Ok(())
    })?;
    Ok((out, log.diverged_at.or(failed_at)))
}

/// Metric names a probe emits at a step.
fn metric_names(probe: Probe, step: usize) -> &'static [&'static str] {
    match probe {
        Probe::HeadVariance => &["head_variance"],
        Probe::KeyRms => &["rms_k"],
        Probe::Updates if step == 0 => &[],
        Probe::Updates => &["rms_dk", "rms_da", "rms_dk_total", "rms_da_total", "fro_dwk", "fro_dwq", "rms_dh_last"],
        Probe::KernelDeviation => &["kernel_deviation"],
        Probe::BackwardGrowth if step == 0 => &["backward_rms"],
        Probe::BackwardGrowth => &["backward_rms", "backward_change_rms"],
        Probe::Loss => &["loss"],
    }
}

/// Trains every `(value, seed)` pair and measures the requested probes.
///
/// Rows come out sorted by value, seed and step. A trial that diverges has
/// every row flagged, with `NaN` for steps it never reached.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let mut steps = spec.measure_at.clone();
    steps.sort_unstable();
    steps.dedup();
    let trials = for_each_trial(&spec.values, &spec.seeds, |value, seed| {
        let cfg = spec.axis.apply(&spec.base, value);
        let (measured, diverged_at) = run_trial(spec, &cfg, seed)?;
        let mut rows = Vec::new();
        for &t in &steps {
            for &probe in &spec.probes {
                for &name in metric_names(probe, t) {
                    let v = measured
                        .iter()
                        .find(|(s, n, _)| *s == t && *n == name)
                        .map_or(f64::NAN, |m| m.2);
                    rows.push(Row {
                        experiment: spec.experiment.clone(),
                        axis: spec.axis,
                        value,
                        seed: Some(seed),
                        step: t,
                        metric: name.to_string(),
                        metric_value: v,
                        diverged: diverged_at.is_some(),
                    });
                }
            }
        }
        Ok(rows)
    })?;
    let rows: Vec<Row> = trials.into_iter().flatten().collect();
    let fits = fit_rows(&rows);
    Ok(SweepTable { rows, fits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(values: Vec<usize>, seeds: Vec<u64>, measure_at: Vec<usize>) -> SweepSpec {
        SweepSpec {
            experiment: "test".into(),
            axis: Axis::N,
            values,
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
            seeds,
            probes: vec![Probe::HeadVariance],
            measure_at,
        }
    }

    #[test]
    fn cardinality() {
        assert_eq!(run_sweep(&spec(vec![2], vec![0], vec![1])).unwrap().rows.len(), 1);
        let t = run_sweep(&spec(vec![1, 2, 4], vec![0, 1], vec![0, 2])).unwrap();
        assert_eq!(t.rows.len(), 12);
        let order: Vec<(usize, Option<u64>, usize)> = t.rows.iter().map(|r| (r.value, r.seed, r.step)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        assert_eq!(t.fits.len(), 2);
    }

    #[test]
    fn repeat_is_identical() {
        let s = SweepSpec {
            probes: vec![Probe::HeadVariance, Probe::Updates, Probe::BackwardGrowth, Probe::Loss],
            ..spec(vec![1, 2, 3], vec![0, 1], vec![0, 2])
        };
        let a = run_sweep(&s).unwrap();
        let b = run_sweep(&s).unwrap();
        let bits = |t: &SweepTable| t.rows.iter().map(|r| r.metric_value.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(run_sweep(&spec(vec![2, 2], vec![0], vec![1])).is_err());
        assert!(run_sweep(&spec(vec![2], vec![], vec![1])).is_err());
        assert!(run_sweep(&spec(vec![2], vec![0], vec![3])).is_err());
    }

    #[test]
    fn diverged_trials_are_flagged_and_excluded() {
        let mut s = spec(vec![1, 2, 3, 4], vec![0], vec![0, 2]);
        s.optim.eta0 = 1e200;
        s.probes = vec![Probe::Loss];
        let t = run_sweep(&s).unwrap();
        assert!(t.rows.iter().all(|r| r.diverged));
        let f = t.fit("loss", 2).unwrap();
        assert_eq!(f.excluded, 4);
        assert!(f.fit.is_err());
    }

    #[test]
    fn zero_rate_update_fit_is_rejected() {
        // With η₀ → 0 every update meter reads exactly zero.
        let mut s = spec(vec![1, 2, 4], vec![0], vec![2]);
        s.optim.eta0 = f64::MIN_POSITIVE;
        s.probes = vec![Probe::Updates];
        let t = run_sweep(&s).unwrap();
        assert!(t.rows.iter().all(|r| r.metric_value == 0.0));
        assert!(t.fit("rms_dk", 2).unwrap().fit.is_err());
    }
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Mode, ModelConfig};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::tasks::{TaskKind, TaskSpec};

/// Everything one command invocation needs, read from a flat `key = value`
/// file. Lines starting with `#` are comments.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimizerConfig,
    pub task: TaskSpec,
    /// Parameter init seed for `train` and `probe`.
    pub seed: u64,
    /// Steps at which `train` dumps kernels, in addition to the final one.
    pub probe_steps: Vec<usize>,
    /// Layers whose kernels `train` and `probe` dump.
    pub kernel_layers: Vec<usize>,
    pub histogram_bins: usize,
    /// Checkpoint read by `probe`; empty means a fresh init from `seed`.
    pub checkpoint: Option<PathBuf>,
    pub experiment: String,
    /// Sizes swept by `sweep`, along the experiment's axis.
    pub values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub probe_layer: usize,
    pub reference_seeds: Vec<u64>,
    pub early_step: usize,
    pub proxy_seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            optim: OptimizerConfig::default(),
            task: TaskSpec::default(),
            seed: 0,
            probe_steps: Vec::new(),
            kernel_layers: Vec::new(),
            histogram_bins: 4,
            checkpoint: None,
            experiment: "head_collapse".into(),
            values: vec![4, 16, 64],
            seeds: vec![0, 1],
            probe_layer: 1,
            reference_seeds: vec![100, 101],
            early_step: 10,
            proxy_seeds: vec![200, 201],
            out: PathBuf::from("out"),
        }
    }
}

/// Every accepted key, in emission order.
pub const KEYS: &[&str] = &[
    "n",
    "heads",
    "depth",
    "seq",
    "input_dim",
    "output_dim",
    "alpha_a",
    "alpha_l",
    "beta0",
    "gamma0",
    "eps_ln",
    "mode",
    "adam_scale",
    "optimizer",
    "eta0",
    "momentum",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "steps",
    "lr_includes_gamma0",
    "task",
    "n_samples",
    "batch_size",
    "teacher_scale",
    "data_seed",
    "seed",
    "probe_steps",
    "kernel_layers",
    "histogram_bins",
    "checkpoint",
    "experiment",
    "values",
    "seeds",
    "probe_layer",
    "reference_seeds",
    "early_step",
    "proxy_seeds",
    "out",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn bool_value(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{v}`"))),
    }
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let m = &mut self.model;
        let o = &mut self.optim;
        let t = &mut self.task;
        match key {
            "n" => m.n = num(key, v)?,
            "heads" => m.heads = num(key, v)?,
            "depth" => m.depth = num(key, v)?,
            "seq" => m.seq = num(key, v)?,
            "input_dim" => m.input_dim = num(key, v)?,
            "output_dim" => m.output_dim = num(key, v)?,
            "alpha_a" => m.alpha_a = num(key, v)?,
            "alpha_l" => m.alpha_l = num(key, v)?,
            "beta0" => m.beta0 = num(key, v)?,
            "gamma0" => m.gamma0 = num(key, v)?,
            "eps_ln" => m.eps_ln = num(key, v)?,
            "mode" => m.mode = Mode::parse(v).ok_or_else(|| Error::config(key, format!("unknown mode `{v}`")))?,
            "adam_scale" => m.adam_scale = bool_value(key, v)?,
            "optimizer" => {
                o.kind = OptimizerKind::parse(v).ok_or_else(|| Error::config(key, format!("unknown optimizer `{v}`")))?
            }
            "eta0" => o.eta0 = num(key, v)?,
            "momentum" => o.momentum = num(key, v)?,
            "adam_beta1" => o.adam_beta1 = num(key, v)?,
            "adam_beta2" => o.adam_beta2 = num(key, v)?,
            "adam_eps" => o.adam_eps = num(key, v)?,
            "steps" => o.steps = num(key, v)?,
            "lr_includes_gamma0" => o.lr_includes_gamma0 = bool_value(key, v)?,
            "task" => t.kind = TaskKind::parse(v).ok_or_else(|| Error::config(key, format!("unknown task `{v}`")))?,
            "n_samples" => t.n_samples = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "teacher_scale" => t.teacher_scale = num(key, v)?,
            "data_seed" => t.seed = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "probe_steps" => self.probe_steps = list(key, v)?,
            "kernel_layers" => self.kernel_layers = list(key, v)?,
            "histogram_bins" => self.histogram_bins = num(key, v)?,
            "checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "experiment" => self.experiment = v.to_string(),
            "values" => self.values = list(key, v)?,
            "seeds" => self.seeds = list(key, v)?,
            "probe_layer" => self.probe_layer = num(key, v)?,
            "reference_seeds" => self.reference_seeds = list(key, v)?,
            "early_step" => self.early_step = num(key, v)?,
            "proxy_seeds" => self.proxy_seeds = list(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Text form of one key, as accepted by [`RunConfig::set`].
    pub fn get(&self, key: &str) -> Option<String> {
        let (m, o, t) = (&self.model, &self.optim, &self.task);
        Some(match key {
            "n" => m.n.to_string(),
            "heads" => m.heads.to_string(),
            "depth" => m.depth.to_string(),
            "seq" => m.seq.to_string(),
            "input_dim" => m.input_dim.to_string(),
            "output_dim" => m.output_dim.to_string(),
            "alpha_a" => m.alpha_a.to_string(),
            "alpha_l" => m.alpha_l.to_string(),
            "beta0" => m.beta0.to_string(),
            "gamma0" => m.gamma0.to_string(),
            "eps_ln" => m.eps_ln.to_string(),
            "mode" => m.mode.name().to_string(),
            "adam_scale" => m.adam_scale.to_string(),
            "optimizer" => o.kind.name().to_string(),
            "eta0" => o.eta0.to_string(),
            "momentum" => o.momentum.to_string(),
            "adam_beta1" => o.adam_beta1.to_string(),
            "adam_beta2" => o.adam_beta2.to_string(),
            "adam_eps" => o.adam_eps.to_string(),
            "steps" => o.steps.to_string(),
            "lr_includes_gamma0" => o.lr_includes_gamma0.to_string(),
            "task" => t.kind.name().to_string(),
            "n_samples" => t.n_samples.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "teacher_scale" => t.teacher_scale.to_string(),
            "data_seed" => t.seed.to_string(),
            "seed" => self.seed.to_string(),
            "probe_steps" => join(&self.probe_steps),
            "kernel_layers" => join(&self.kernel_layers),
            "histogram_bins" => self.histogram_bins.to_string(),
            "checkpoint" => self.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "experiment" => self.experiment.clone(),
            "values" => join(&self.values),
            "seeds" => join(&self.seeds),
            "probe_layer" => self.probe_layer.to_string(),
            "reference_seeds" => join(&self.reference_seeds),
            "early_step" => self.early_step.to_string(),
            "proxy_seeds" => join(&self.proxy_seeds),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    /// Parses config text over the defaults. Syntax errors carry line numbers.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("expected key = value, got `{line}`"),
                });
            };
            cfg.set(key.trim(), value).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o.as_str(), "override must look like key=value"))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Every key in [`KEYS`] order, one per line.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            writeln!(s, "{key} = {}", self.get(key).unwrap()).unwrap();
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        if self.histogram_bins == 0 {
            return Err(Error::config("histogram_bins", "must be at least 1"));
        }
        for &l in &self.kernel_layers {
            if l > self.model.depth + 1 {
                return Err(Error::config("kernel_layers", format!("layer {l} exceeds depth + 1")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn every_key_round_trips_through_get() {
        let cfg = RunConfig::default();
        for key in KEYS {
            let mut other = RunConfig::default();
            other.set(key, &cfg.get(key).unwrap()).unwrap();
            assert_eq!(other, cfg, "{key}");
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("n = 2\nalpha_AA = 1\n", Path::new("x")).unwrap_err();
        assert!(matches!(&err, Error::Format { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("alpha_AA"), "{err}");
        let mut cfg = RunConfig::default();
        let err = cfg.apply_overrides(&["alpha_AA=1".into()]).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "alpha_AA"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = RunConfig::parse("# note\n\n  n = 7 \nvalues = 1, 2,3\n", Path::new("x")).unwrap();
        assert_eq!(cfg.model.n, 7);
        assert_eq!(cfg.values, vec![1, 2, 3]);
    }

    #[test]
    fn missing_equals_reports_line() {
        let err = RunConfig::parse("n = 2\nheads 4\n", Path::new("c.txt")).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::parse("n = 2\n", Path::new("x")).unwrap();
        cfg.apply_overrides(&["n=9".into(), "checkpoint=a.ckpt".into()]).unwrap();
        assert_eq!(cfg.model.n, 9);
        assert_eq!(cfg.checkpoint, Some(PathBuf::from("a.ckpt")));
        assert!(cfg.apply_overrides(&["n".into()]).is_err());
    }

    proptest! {
        #[test]
        fn parse_inverts_emit(
            n in 1usize..300,
            alpha_a in 0.5f64..=1.0,
            eta0 in 1e-6f64..10.0,
            steps in 0usize..1000,
            seeds in proptest::collection::vec(0u64..u64::MAX, 0..5),
            mode in 0usize..3,
            adam in any::<bool>(),
        ) {
            let mut cfg = RunConfig::default();
            cfg.model.n = n;
            cfg.model.alpha_a = alpha_a;
            cfg.model.mode = [Mode::PooledClassifier, Mode::CausalLm, Mode::DeepLinear][mode];
            cfg.optim.eta0 = eta0;
            cfg.optim.steps = steps;
            cfg.optim.kind = if adam { OptimizerKind::Adam } else { OptimizerKind::Sgd };
            cfg.seeds = seeds;
            let back = RunConfig::parse(&cfg.emit(), Path::new("x")).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}

//! Deterministic synthetic datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::{Inputs, LossKind, Mode, ModelConfig, Targets};

/// Hard cap on dataset size; the dynamics under study assume a fixed,
/// width-independent amount of data.
pub const MAX_SAMPLES: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
enum Source {
    Features(Tensor),
    Tokens(Vec<usize>),
}

/// A fixed list of `(input, target)` samples plus a minibatch schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    seq: usize,
    n_samples: usize,
    batch_size: usize,
    seed: u64,
    inputs: Source,
    targets: Targets,
    /// Target rows per sample: 1 for pooled tasks, `seq` for next-token tasks.
    target_rows: usize,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

fn check_sizes(n_samples: usize, seq: usize, dim: usize) -> Result<()> {
    if n_samples == 0 || seq == 0 || dim == 0 {
        return Err(Error::contract("dataset sizes must be positive"));
    }
    if n_samples > MAX_SAMPLES {
        return Err(Error::contract(format!(
            "{n_samples} samples exceeds the cap of {MAX_SAMPLES}"
        )));
    }
    Ok(())
}

/// Gaussian tokens with target `scale·β·x̄·√(S/D)`, where `x̄` is the
/// position-averaged input and `β` a fixed standard-normal teacher.
pub fn make_regression(seed: u64, n_samples: usize, seq: usize, dim: usize, teacher_scale: f64) -> Result<Dataset> {
    check_sizes(n_samples, seq, dim)?;
    let x = gaussian(&mut rng_for(seed, 0), &[n_samples * seq, dim]);
    let teacher = gaussian(&mut rng_for(seed, 1), &[dim]);
    let norm = teacher_scale * (seq as f64 / dim as f64).sqrt();
    let y = Tensor::from_fn(&[n_samples, 1], |i| {
        let mut acc = 0.0;
        for s in 0..seq {
            acc += x
                .row(i * seq + s)
                .iter()
                .zip(teacher.data())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        norm * acc / seq as f64
    });
    Ok(Dataset {
        seq,
        n_samples,
        batch_size: n_samples,
        seed,
        inputs: Source::Features(x),
        targets: Targets::Values(y),
        target_rows: 1,
    })
}

/// Gaussian tokens with uniformly random fixed labels.
pub fn make_classification(seed: u64, n_samples: usize, seq: usize, dim: usize, n_classes: usize) -> Result<Dataset> {
    check_sizes(n_samples, seq, dim)?;
    if n_classes == 0 || n_classes > n_samples {
        return Err(Error::contract(format!(
            "need 1 ≤ classes ≤ samples, got {n_classes} classes for {n_samples} samples"
        )));
    }
    let x = gaussian(&mut rng_for(seed, 0), &[n_samples * seq, dim]);
    let mut rng = rng_for(seed, 2);
    let labels = (0..n_samples).map(|_| rng.random_range(0..n_classes)).collect();
    Ok(Dataset {
        seq,
        n_samples,
        batch_size: n_samples,
        seed,
        inputs: Source::Features(x),
        targets: Targets::Labels(labels),
        target_rows: 1,
    })
}

/// Random token sequences with a planted bigram `A B` that reappears at the
/// end as `A`, so the next-token target after the second `A` is `B`.
/// Targets are the next tokens of a length-`S+1` stream.
pub fn make_induction(seed: u64, n_samples: usize, seq: usize, vocab: usize) -> Result<Dataset> {
    check_sizes(n_samples, seq, vocab)?;
    if seq < 4 || vocab < 3 {
        return Err(Error::contract("induction task needs seq ≥ 4 and vocab ≥ 3"));
    }
    let mut rng = rng_for(seed, 3);
    let mut inputs = Vec::with_capacity(n_samples * seq);
    let mut targets = Vec::with_capacity(n_samples * seq);
    for _ in 0..n_samples {
        let mut stream: Vec<usize> = (0..=seq).map(|_| rng.random_range(0..vocab)).collect();
        let a = rng.random_range(0..vocab);
        let b = (a + rng.random_range(1..vocab)) % vocab;
        let p = rng.random_range(0..=seq - 3);
        stream[p] = a;
        stream[p + 1] = b;
        stream[seq - 1] = a;
        stream[seq] = b;
        inputs.extend_from_slice(&stream[..seq]);
        targets.extend_from_slice(&stream[1..]);
    }
    Ok(Dataset {
        seq,
        n_samples,
        batch_size: n_samples,
        seed,
        inputs: Source::Tokens(inputs),
        targets: Targets::Labels(targets),
        target_rows: seq,
    })
}

/// Which generator a [`TaskSpec`] calls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
    Induction,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Regression => "regression",
            TaskKind::Classification => "classification",
            TaskKind::Induction => "induction",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "regression" => Some(TaskKind::Regression),
            "classification" => Some(TaskKind::Classification),
            "induction" => Some(TaskKind::Induction),
            _ => None,
        }
    }
}

/// Dataset recipe. Shapes come from the model config: `seq` and
/// `input_dim` always, `output_dim` as the class count, `input_dim` as the
/// vocabulary for induction.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub n_samples: usize,
    pub batch_size: usize,
    pub teacher_scale: f64,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            kind: TaskKind::Regression,
            n_samples: 8,
            batch_size: 8,
            teacher_scale: 1.0,
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn build(&self, cfg: &ModelConfig) -> Result<(Dataset, LossKind)> {
        let (data, loss) = match (self.kind, cfg.mode) {
            (TaskKind::Regression, Mode::PooledClassifier) => (
                make_regression(self.seed, self.n_samples, cfg.seq, cfg.input_dim, self.teacher_scale)?,
                LossKind::Mse,
            ),
            (TaskKind::Classification, Mode::PooledClassifier) => (
                make_classification(self.seed, self.n_samples, cfg.seq, cfg.input_dim, cfg.output_dim)?,
                LossKind::CrossEntropy,
            ),
            (TaskKind::Induction, Mode::CausalLm) => {
                if cfg.output_dim != cfg.input_dim {
                    return Err(Error::config("output_dim", "must equal the vocabulary size for induction"));
                }
                (make_induction(self.seed, self.n_samples, cfg.seq, cfg.input_dim)?, LossKind::CrossEntropy)
            }
            (kind, mode) => {
                return Err(Error::config(
                    "task",
                    format!("{} does not fit mode {}", kind.name(), mode.name()),
                ))
            }
        };
        if cfg.mode == Mode::PooledClassifier && self.kind == TaskKind::Regression && cfg.output_dim != 1 {
            return Err(Error::config("output_dim", "regression targets are scalar"));
        }
        Ok((data.with_batch_size(self.batch_size)?, loss))
    }
}

impl Dataset {
    /// Dataset over explicit `(n·S) × D` features and `n × O` real targets.
    pub fn from_features(x: Tensor, y: Tensor, seq: usize, seed: u64) -> Result<Self> {
        if seq == 0 || !x.rows().is_multiple_of(seq) {
            return Err(Error::dim(format!("{} rows do not split into sequences of {seq}", x.rows())));
        }
        let n_samples = x.rows() / seq;
        check_sizes(n_samples, seq, x.cols())?;
        if y.rows() != n_samples {
            return Err(Error::dim(format!("{} targets for {n_samples} samples", y.rows())));
        }
        Ok(Dataset {
            seq,
            n_samples,
            batch_size: n_samples,
            seed,
            inputs: Source::Features(x),
            targets: Targets::Values(y),
            target_rows: 1,
        })
    }

    /// Sets the minibatch size; `n_samples` gives full-batch descent.
    pub fn with_batch_size(mut self, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || batch_size > self.n_samples {
            return Err(Error::contract(format!(
                "batch size {batch_size} must lie in 1..={}",
                self.n_samples
            )));
        }
        self.batch_size = batch_size;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples == 0
    }

    pub fn seq(&self) -> usize {
        self.seq
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Sample order for epoch `e`: identity for full-batch descent, otherwise a
    /// permutation fixed by `(seed, e)`.
    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_samples).collect();
        if self.batch_size < self.n_samples {
            let mut rng = rng_for(self.seed ^ 0x5eed_5eed, 16 + epoch as u64);
            order.shuffle(&mut rng);
        }
        order
    }

    /// Sample indices of minibatch `𝔅_t`, a pure function of `(seed, step)`.
    /// Consecutive steps walk through each epoch's order, so every sample is
    /// visited before any repeats.
    pub fn batch_indices(&self, step: usize) -> Vec<usize> {
        let start = step * self.batch_size;
        let mut cached: Option<(usize, Vec<usize>)> = None;
        (start..start + self.batch_size)
            .map(|p| {
                let epoch = p / self.n_samples;
                if cached.as_ref().map(|c| c.0) != Some(epoch) {
                    cached = Some((epoch, self.epoch_order(epoch)));
                }
                cached.as_ref().unwrap().1[p % self.n_samples]
            })
            .collect()
    }

    pub fn batch(&self, step: usize) -> (Inputs, Targets) {
        self.select(&self.batch_indices(step))
    }

    pub fn full(&self) -> (Inputs, Targets) {
        self.select(&(0..self.n_samples).collect::<Vec<_>>())
    }

    /// Inputs and targets for the given samples, in order.
    pub fn select(&self, idx: &[usize]) -> (Inputs, Targets) {
        let s = self.seq;
        let inputs = match &self.inputs {
            Source::Features(x) => {
                let d = x.cols();
                let mut data = Vec::with_capacity(idx.len() * s * d);
                for &i in idx {
                    data.extend_from_slice(&x.data()[i * s * d..(i + 1) * s * d]);
                }
                Inputs::Features(Tensor::new(vec![idx.len() * s, d], data).expect("consistent rows"))
            }
            Source::Tokens(t) => {
                Inputs::Tokens(idx.iter().flat_map(|&i| t[i * s..(i + 1) * s].iter().copied()).collect())
            }
        };
        let r = self.target_rows;
        let targets = match &self.targets {
            Targets::Values(y) => {
                let o = y.cols();
                let mut data = Vec::with_capacity(idx.len() * r * o);
                for &i in idx {
                    data.extend_from_slice(&y.data()[i * r * o..(i + 1) * r * o]);
                }
                Targets::Values(Tensor::new(vec![idx.len() * r, o], data).expect("consistent rows"))
            }
            Targets::Labels(l) => {
                Targets::Labels(idx.iter().flat_map(|&i| l[i * r..(i + 1) * r].iter().copied()).collect())
            }
        };
        (inputs, targets)
    }
}

use super::kernel::{gram, Kernel, KernelIndex};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::{ActivationTrace, Mode};

/// Per-head `1/N` Grams of keys, queries and values at one layer, plus the
/// head's raw pre-attention matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadKernels {
    pub head: usize,
    pub keys: Kernel,
    pub queries: Kernel,
    pub values: Kernel,
    /// `(B·S) × S` block of `𝒜` for this head, rows ordered `(sample, s)`.
    pub scores: Tensor,
}

/// Every head of one layer and the head-averaged attended-value kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadStats {
    pub layer: usize,
    pub heads: Vec<HeadKernels>,
    pub avg_value: Kernel,
}

fn token_index(batch: usize, seq: usize) -> Vec<KernelIndex> {
    (0..batch * seq)
        .map(|r| KernelIndex {
            sample: r / seq,
            position: Some(r % seq),
            time: 0,
        })
        .collect()
}

fn head_columns(x: &Tensor, head: usize, n: usize) -> Tensor {
    let rows = x.rows();
    Tensor::from_fn(&[rows, n], |i| x.at(i / n, head * n + i % n))
}

fn check_attention(trace: &ActivationTrace) -> Result<()> {
    if trace.mode == Mode::DeepLinear {
        return Err(Error::contract("the deep linear network has no attention"));
    }
    Ok(())
}

pub fn head_kernels(trace: &ActivationTrace, layer: usize, head: usize) -> Result<HeadKernels> {
    check_attention(trace)?;
    let block = trace.block(layer)?;
    if head >= trace.heads {
        return Err(Error::contract(format!("head {head} outside 0..{}", trace.heads)));
    }
    let (n, rows) = (trace.n, trace.batch * trace.seq);
    let kernel = |x: &Tensor| -> Result<Kernel> {
        Kernel::new(layer, token_index(trace.batch, trace.seq), gram(&head_columns(x, head, n), n as f64)?)
    };
    let s = trace.seq;
    let scores = Tensor::new(
        vec![rows, s],
        block.scores.data()[head * rows * s..(head + 1) * rows * s].to_vec(),
    )?;
    Ok(HeadKernels {
        head,
        keys: kernel(&block.k)?,
        queries: kernel(&block.q)?,
        values: kernel(&block.v)?,
        scores,
    })
}

/// `V^σ = Σ_h v^σ_h·v^σ_h / (N·H)` for the attended values `v^σ`.
pub fn head_avg_value_kernel(trace: &ActivationTrace, layer: usize) -> Result<Kernel> {
    check_attention(trace)?;
    let mixed = &trace.block(layer)?.mixed;
    Kernel::new(layer, token_index(trace.batch, trace.seq), gram(mixed, trace.width() as f64)?)
}

pub fn head_stats(trace: &ActivationTrace, layer: usize) -> Result<HeadStats> {
    Ok(HeadStats {
        layer,
        heads: (0..trace.heads)
            .map(|h| head_kernels(trace, layer, h))
            .collect::<Result<_>>()?,
        avg_value: head_avg_value_kernel(trace, layer)?,
    })
}

/// Values of `𝒜[s, s']` for one sample across all heads.
pub fn attn_across_heads(trace: &ActivationTrace, layer: usize, s: usize, s2: usize, sample: usize) -> Result<Vec<f64>> {
    check_attention(trace)?;
    let block = trace.block(layer)?;
    let seq = trace.seq;
    if s >= seq || s2 >= seq || sample >= trace.batch {
        return Err(Error::contract(format!(
            "entry ({s}, {s2}) of sample {sample} outside a batch of {} sequences of {seq}",
            trace.batch
        )));
    }
    Ok((0..trace.heads)
        .map(|h| block.scores.at((h * trace.batch + sample) * seq + s, s2))
        .collect())
}

pub(crate) fn unbiased_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Unbiased variance over heads of `𝒜[s, s']` for one sample.
pub fn attn_head_variance(trace: &ActivationTrace, layer: usize, s: usize, s2: usize, sample: usize) -> Result<f64> {
    if trace.heads < 2 {
        return Err(Error::contract("head variance needs at least two heads"));
    }
    Ok(unbiased_variance(&attn_across_heads(trace, layer, s, s2, sample)?))
}

/// [`attn_head_variance`] averaged over every sample of the trace and every
/// `(s, s')` pair inside the attention support.
pub fn mean_attn_head_variance(trace: &ActivationTrace, layer: usize) -> Result<f64> {
    let causal = trace.mode == Mode::CausalLm;
    let (mut total, mut count) = (0.0, 0usize);
    for b in 0..trace.batch {
        for s in 0..trace.seq {
            let support = if causal { s + 1 } else { trace.seq };
            for s2 in 0..support {
                total += attn_head_variance(trace, layer, s, s2, b)?;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Normalized histogram over `[lo, hi]` in equal-width bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    /// Fraction of samples per bin; sums to 1.
    pub mass: Vec<f64>,
}

impl Histogram {
    /// Bins spanning the sample range. A constant sample fills the first bin.
    pub fn of(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 || values.is_empty() {
            return Err(Error::contract("histogram needs values and at least one bin"));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0usize; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        let total = values.len() as f64;
        Ok(Histogram {
            lo,
            hi,
            mass: counts.into_iter().map(|c| c as f64 / total).collect(),
        })
    }

    pub fn occupied_bins(&self) -> usize {
        self.mass.iter().filter(|&&m| m > 0.0).count()
    }
}

/// Histogram over heads of `𝒜[s, s']` for one sample.
pub fn attn_histogram(trace: &ActivationTrace, layer: usize, s: usize, s2: usize, sample: usize, bins: usize) -> Result<Histogram> {
    if trace.heads < bins {
        return Err(Error::contract(format!("{} heads cannot fill {bins} bins", trace.heads)));
    }
    Histogram::of(&attn_across_heads(trace, layer, s, s2, sample)?, bins)
}

/// Sample kurtosis `m₄/m₂²` (3 for a Gaussian).
pub fn kurtosis(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{attention_logits, forward, init_params, Inputs, ModelConfig, ParamId, ParamKind, Params};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn features(seed: u64, rows: usize, cols: usize) -> Inputs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Inputs::Features(Tensor::from_fn(&[rows, cols], |_| rng.random_range(-1.0..1.0)))
    }

    fn small(n: usize, heads: usize) -> ModelConfig {
        ModelConfig {
            n,
            heads,
            depth: 2,
            seq: 3,
            input_dim: 4,
            ..ModelConfig::default()
        }
    }

    fn trace(cfg: &ModelConfig, p: &Params, batch: usize, seed: u64) -> ActivationTrace {
        forward(p, cfg, &features(seed, batch * cfg.seq, cfg.input_dim)).unwrap().1
    }

    #[test]
    fn head_kernels_match_double_loop() {
        let cfg = small(3, 2);
        let p = init_params(&cfg, 1).unwrap();
        let tr = trace(&cfg, &p, 2, 2);
        let hk = head_kernels(&tr, 2, 1).unwrap();
        let b = tr.block(2).unwrap();
        let m = 6;
        for i in 0..m {
            for j in 0..m {
                let dot = |x: &Tensor| (0..3).map(|c| x.at(i, 3 + c) * x.at(j, 3 + c)).sum::<f64>() / 3.0;
                assert!((hk.keys.at(i, j) - dot(&b.k)).abs() < 1e-12);
                assert!((hk.queries.at(i, j) - dot(&b.q)).abs() < 1e-12);
                assert!((hk.values.at(i, j) - dot(&b.v)).abs() < 1e-12);
            }
        }
        assert!(hk.values.max_asymmetry() < 1e-12);
        // 𝒜[s, s'] = k_s·q_{s'} / N^{α_A}.
        for r in 0..m {
            let sample = r / 3;
            for s2 in 0..3 {
                let k = &b.k.row(r)[3..6];
                let q = &b.q.row(sample * 3 + s2)[3..6];
                let want = attention_logits(k, q, cfg.alpha_a).unwrap();
                assert!((hk.scores.at(r, s2) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_head_width_kernels_are_products() {
        let cfg = small(1, 2);
        let p = init_params(&cfg, 3).unwrap();
        let tr = trace(&cfg, &p, 1, 4);
        let hk = head_kernels(&tr, 1, 0).unwrap();
        let k = &tr.block(1).unwrap().k;
        assert_eq!(hk.keys.at(0, 2), k.at(0, 0) * k.at(2, 0));
    }

    #[test]
    fn avg_value_kernel_matches_double_loop() {
        let cfg = small(2, 3);
        let p = init_params(&cfg, 5).unwrap();
        let tr = trace(&cfg, &p, 2, 6);
        let kern = head_avg_value_kernel(&tr, 1).unwrap();
        let mixed = &tr.block(1).unwrap().mixed;
        for i in 0..6 {
            for j in 0..6 {
                let want = (0..6).map(|c| mixed.at(i, c) * mixed.at(j, c)).sum::<f64>() / 6.0;
                assert!((kern.at(i, j) - want).abs() < 1e-12);
            }
        }
        let one = ModelConfig { heads: 1, ..cfg.clone() };
        let p1 = init_params(&one, 5).unwrap();
        let tr1 = trace(&one, &p1, 2, 6);
        let a = head_avg_value_kernel(&tr1, 1).unwrap();
        let b = &tr1.block(1).unwrap().mixed;
        assert!((a.at(1, 4) - (b.at(1, 0) * b.at(4, 0) + b.at(1, 1) * b.at(4, 1)) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_attention_identical_tokens_rank_one() {
        let cfg = small(2, 2);
        let mut p = init_params(&cfg, 7).unwrap();
        for l in 0..cfg.depth {
            p.get_mut(ParamId::new(ParamKind::Key, l)).unwrap().data_mut().fill(0.0);
        }
        p.get_mut(ParamId::global(ParamKind::Positional)).unwrap().data_mut().fill(0.0);
        let row = [0.3, -0.2, 0.9, 0.1];
        let x = Tensor::from_fn(&[6, 4], |i| row[i % 4]);
        let (_, tr) = forward(&p, &cfg, &Inputs::Features(x)).unwrap();
        let k = head_avg_value_kernel(&tr, 1).unwrap();
        let first = k.at(0, 0);
        assert!(k.values.data().iter().all(|v| (v - first).abs() < 1e-12));
    }

    fn tied_heads(cfg: &ModelConfig, seed: u64) -> Params {
        let mut p = init_params(cfg, seed).unwrap();
        let (n, d) = (cfg.n, cfg.width());
        for l in 0..cfg.depth {
            for kind in [ParamKind::Key, ParamKind::Query, ParamKind::Value] {
                let w = p.get_mut(ParamId::new(kind, l)).unwrap();
                // Output rows of head h copy those of head 0.
                for r in n..d {
                    for c in 0..d {
                        w.data_mut()[r * d + c] = w.data()[(r % n) * d + c];
                    }
                }
            }
        }
        p
    }

    #[test]
    fn tied_heads_have_zero_variance() {
        let cfg = small(2, 4);
        let tr = trace(&cfg, &tied_heads(&cfg, 8), 2, 9);
        assert_eq!(attn_head_variance(&tr, 1, 1, 2, 1).unwrap(), 0.0);
        let h = attn_histogram(&tr, 1, 0, 0, 0, 3).unwrap();
        assert_eq!(h.occupied_bins(), 1);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(unbiased_variance(&[0.0, 2.0]), 2.0);
        let cfg = small(2, 1);
        let p = init_params(&cfg, 1).unwrap();
        let tr = trace(&cfg, &p, 1, 1);
        assert!(matches!(attn_head_variance(&tr, 1, 0, 0, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn variance_is_head_permutation_invariant() {
        let cfg = small(2, 3);
        let tr = trace(&cfg, &init_params(&cfg, 2).unwrap(), 2, 3);
        let mut vals = attn_across_heads(&tr, 2, 2, 0, 1).unwrap();
        let v = unbiased_variance(&vals);
        vals.rotate_left(1);
        assert!((unbiased_variance(&vals) - v).abs() < 1e-15);
        assert!((attn_head_variance(&tr, 2, 2, 0, 1).unwrap() - v).abs() < 1e-15);
    }

    #[test]
    fn histogram_mass_sums_to_one() {
        let h = Histogram::of(&[0.0, 0.1, 0.5, 1.0, 1.0], 4).unwrap();
        assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(h.mass, vec![0.4, 0.0, 0.2, 0.4]);
    }

    #[test]
    fn kurtosis_of_gaussian_products_is_heavy() {
        // Independent Gaussian product: E[x⁴]/E[x²]² = 9.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = rand_distr::StandardNormal;
        let x: Vec<f64> = (0..200_000)
            .map(|_| rng.sample::<f64, _>(g) * rng.sample::<f64, _>(g))
            .collect();
        assert!((kurtosis(&x) - 9.0).abs() < 0.5);
        let y: Vec<f64> = (0..200_000).map(|_| rng.sample::<f64, _>(g)).collect();
        assert!((kurtosis(&y) - 3.0).abs() < 0.1);
    }

    fn pooled_scores(n: usize, heads: usize, alpha_a: f64, seeds: u64) -> Vec<f64> {
        let cfg = ModelConfig {
            n,
            heads,
            depth: 1,
            seq: 8,
            input_dim: 4,
            alpha_a,
            ..ModelConfig::default()
        };
        let mut out = Vec::new();
        for seed in 0..seeds {
            let p = init_params(&cfg, seed).unwrap();
            let tr = trace(&cfg, &p, 8, 100 + seed);
            out.extend_from_slice(tr.block(1).unwrap().scores.data());
        }
        out
    }

    #[test]
    fn narrow_heads_give_heavy_tailed_attention() {
        // At N = 1 each entry is a product of two Gaussians across heads.
        // Entries are pooled over positions, samples and seeds.
        let k = kurtosis(&pooled_scores(1, 64, 1.0, 2));
        assert!(k - 3.0 > 3.0, "{k}");
    }

    #[test]
    fn wide_heads_give_gaussian_attention() {
        let k = kurtosis(&pooled_scores(256, 4, 0.5, 4));
        assert!((k - 3.0).abs() < 0.2, "{k}");
    }
}

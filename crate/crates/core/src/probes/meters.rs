use crate::diffcore::{gemm, AttnLayout, Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{ActivationTrace, ModelConfig, ParamId, ParamKind, Params};

/// Update sizes between two snapshots of one run on the same probe batch.
///
/// `rms_dk` and `rms_da` isolate the weight updates: the new key/query
/// weights are applied to the initial layernormed residual stream `h̄(0)`.
/// The `_total` meters compare the recorded keys and scores directly, so they
/// also pick up changes of the residual stream passing through the initial
/// weights.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateMeters {
    /// RMS over every layer of `(W_K(t) − W_K(0))·h̄(0)`, key scale applied.
    pub rms_dk: f64,
    /// RMS over every layer of `𝒜(W_K(t), W_Q(t); h̄(0)) − 𝒜(0)`.
    pub rms_da: f64,
    /// RMS of `k(t) − k(0)`.
    pub rms_dk_total: f64,
    /// RMS of `𝒜(t) − 𝒜(0)`.
    pub rms_da_total: f64,
    /// Root mean over layers of the squared Frobenius norm of `ΔW_K`.
    pub fro_dwk: f64,
    /// Same for `ΔW_Q`.
    pub fro_dwq: f64,
    /// RMS of the change in the final residual stream.
    pub rms_dh_last: f64,
}

fn rms_diff<'a>(pairs: impl Iterator<Item = (&'a Tensor, &'a Tensor)>) -> Result<f64> {
    let (mut ss, mut count) = (0.0, 0usize);
    for (a, b) in pairs {
        ss += b.sub(a)?.sum_squares();
        count += a.len();
    }
    Ok(if count == 0 { 0.0 } else { (ss / count as f64).sqrt() })
}

fn layer_fro(before: &Params, after: &Params, kind: ParamKind) -> Result<f64> {
    let mut ss = 0.0;
    let mut layers = 0usize;
    while let Some(a) = before.get(ParamId::new(kind, layers)) {
        let b = after.expect(ParamId::new(kind, layers))?;
        ss += b.sub(a)?.sum_squares();
        layers += 1;
    }
    Ok(if layers == 0 { 0.0 } else { (ss / layers as f64).sqrt() })
}

/// Rows `(head, sample, position)` of `k·qᵀ / N^{α_A}`, computed exactly as
/// the forward pass does.
fn scores(k: Tensor, q: Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (kv, qv) = (tape.constant(k), tape.constant(q));
    let layout = AttnLayout { heads: cfg.heads, seq: cfg.seq };
    let a = tape.attn_scores(kv, qv, layout, (cfg.n as f64).powf(-cfg.alpha_a))?;
    Ok(tape.value(a).clone())
}

/// Weight-driven key and score changes on the initial residual stream.
fn weight_driven(cfg: &ModelConfig, before: &Params, after: &Params, trace_before: &ActivationTrace) -> Result<(f64, f64)> {
    let scale = 1.0 / ((cfg.n as f64).powf(1.5 - cfg.alpha_a) * (cfg.heads as f64).sqrt());
    let (mut ssk, mut nk, mut ssa, mut na) = (0.0, 0usize, 0.0, 0usize);
    for (l, block) in trace_before.blocks.iter().enumerate() {
        let moved = |kind| -> Result<Tensor> {
            let id = ParamId::new(kind, l);
            gemm(scale, &block.h_norm, false, &after.expect(id)?.sub(before.expect(id)?)?, true)
        };
        let dk = moved(ParamKind::Key)?;
        let dq = moved(ParamKind::Query)?;
        ssk += dk.sum_squares();
        nk += dk.len();
        let a = scores(block.k.add(&dk)?, block.q.add(&dq)?, cfg)?;
        ssa += a.sub(&block.scores)?.sum_squares();
        na += a.len();
    }
    let rms = |ss: f64, n: usize| if n == 0 { 0.0 } else { (ss / n as f64).sqrt() };
    Ok((rms(ssk, nk), rms(ssa, na)))
}

/// Meters for a transformer whose parameters moved from `params_before` to
/// `params_after`, with both traces recorded on the same probe batch.
pub fn update_meters(
    cfg: &ModelConfig,
    params_before: &Params,
    params_after: &Params,
    trace_before: &ActivationTrace,
    trace_after: &ActivationTrace,
) -> Result<UpdateMeters> {
    if !params_before.same_layout(params_after) {
        return Err(Error::dim("parameter snapshots have different layouts"));
    }
    if trace_before.blocks.len() != trace_after.blocks.len() || trace_before.residual.len() != trace_after.residual.len() {
        return Err(Error::dim("traces come from different architectures"));
    }
    let blocks = || trace_before.blocks.iter().zip(&trace_after.blocks);
    let (rms_dk, rms_da) = weight_driven(cfg, params_before, params_after, trace_before)?;
    Ok(UpdateMeters {
        rms_dk,
        rms_da,
        rms_dk_total: rms_diff(blocks().map(|(a, b)| (&a.k, &b.k)))?,
        rms_da_total: rms_diff(blocks().map(|(a, b)| (&a.scores, &b.scores)))?,
        fro_dwk: layer_fro(params_before, params_after, ParamKind::Key)?,
        fro_dwq: layer_fro(params_before, params_after, ParamKind::Query)?,
        rms_dh_last: rms_diff(std::iter::once((
            trace_before.residual.last().unwrap(),
            trace_after.residual.last().unwrap(),
        )))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_params, Inputs, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(depth: usize) -> (ModelConfig, Params, Inputs) {
        let cfg = ModelConfig {
            n: 2,
            heads: 2,
            depth,
            seq: 3,
            input_dim: 3,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[6, 3], |_| rng.random_range(-1.0..1.0));
        (cfg.clone(), init_params(&cfg, 2).unwrap(), Inputs::Features(x))
    }

    #[test]
    fn identical_snapshots_read_zero() {
        let (cfg, p, x) = setup(2);
        let (_, tr) = forward(&p, &cfg, &x).unwrap();
        assert_eq!(update_meters(&cfg, &p, &p, &tr, &tr).unwrap(), UpdateMeters::default());
    }

    #[test]
    fn single_entry_key_perturbation() {
        let (cfg, p, x) = setup(1);
        let mut q = p.clone();
        q.get_mut(ParamId::new(ParamKind::Key, 0)).unwrap().data_mut()[3] += 0.25;
        let (_, ta) = forward(&p, &cfg, &x).unwrap();
        let (_, tb) = forward(&q, &cfg, &x).unwrap();
        let m = update_meters(&cfg, &p, &q, &ta, &tb).unwrap();
        assert!((m.fro_dwk - 0.25).abs() < 1e-15);
        assert_eq!(m.fro_dwq, 0.0);
    }

    #[test]
    fn random_perturbation_matches_recomputation() {
        let (cfg, p, x) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut q = p.clone();
        for t in q.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        }
        let (_, ta) = forward(&p, &cfg, &x).unwrap();
        let (_, tb) = forward(&q, &cfg, &x).unwrap();
        let m = update_meters(&cfg, &p, &q, &ta, &tb).unwrap();

        let mut ss = 0.0;
        let mut count = 0.0;
        for l in 0..2 {
            for (a, b) in ta.blocks[l].k.data().iter().zip(tb.blocks[l].k.data()) {
                ss += (a - b) * (a - b);
                count += 1.0;
            }
        }
        assert!((m.rms_dk_total - (ss / count).sqrt()).abs() < 1e-14);

        // Weight-driven part: k-scale · h̄(0) · ΔW_Kᵀ, entry by entry.
        let scale = 1.0 / (2f64.powf(1.5 - cfg.alpha_a) * 2f64.sqrt());
        let moved = |l: usize, kind: ParamKind| -> Tensor {
            let hn = &ta.blocks[l].h_norm;
            let a = p.get(ParamId::new(kind, l)).unwrap();
            let b = q.get(ParamId::new(kind, l)).unwrap();
            Tensor::from_fn(&[hn.rows(), 4], |i| {
                let (r, o) = (i / 4, i % 4);
                (0..4).map(|c| hn.at(r, c) * (b.at(o, c) - a.at(o, c))).sum::<f64>() * scale
            })
        };
        let (mut ssk, mut ssa, mut na) = (0.0, 0.0, 0.0);
        for l in 0..2 {
            let dk = moved(l, ParamKind::Key);
            let dq = moved(l, ParamKind::Query);
            ssk += dk.sum_squares();
            let (k, qq) = (&ta.blocks[l].k, &ta.blocks[l].q);
            // Rows (head, sample, position): two heads of width 2, two samples of 3.
            let dot = |h: usize, s: usize, s2: usize, moved: bool| -> f64 {
                let shift = |d: &Tensor, r: usize, c: usize| if moved { d.at(r, c) } else { 0.0 };
                (2 * h..2 * h + 2)
                    .map(|c| (k.at(s, c) + shift(&dk, s, c)) * (qq.at(s2, c) + shift(&dq, s2, c)))
                    .sum::<f64>()
                    / 2.0
            };
            for h in 0..2 {
                for s in 0..6 {
                    for j in 0..3 {
                        let s2 = s - s % 3 + j;
                        let old = ta.blocks[l].scores.at(h * 6 + s, j);
                        assert!((old - dot(h, s, s2, false)).abs() < 1e-12);
                        ssa += (dot(h, s, s2, true) - old).powi(2);
                        na += 1.0;
                    }
                }
            }
        }
        assert!((m.rms_dk - (ssk / count).sqrt()).abs() < 1e-14);
        assert!((m.rms_da - (ssa / na).sqrt()).abs() < 1e-14);

        let mut fro = 0.0;
        for l in 0..2 {
            let a = p.get(ParamId::new(ParamKind::Query, l)).unwrap();
            let b = q.get(ParamId::new(ParamKind::Query, l)).unwrap();
            fro += a.data().iter().zip(b.data()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        }
        assert!((m.fro_dwq - (fro / 2.0).sqrt()).abs() < 1e-14);

        let (a, b) = (&ta.residual[2], &tb.residual[2]);
        let want = (a.data().iter().zip(b.data()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64).sqrt();
        assert!((m.rms_dh_last - want).abs() < 1e-14);
    }
}

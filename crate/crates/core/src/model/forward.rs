use super::config::{Mode, ModelConfig};
use super::params::{check_layout, multipliers, ParamId, ParamKind, Params};
use crate::diffcore::{AttnLayout, Grads, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Network inputs for one batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Inputs {
    /// `(B·S) × D` features with rows ordered `(sample, position)`, or
    /// `B × D` vectors in deep-linear mode.
    Features(Tensor),
    /// `B·S` token ids in the same order.
    Tokens(Vec<usize>),
}

impl Inputs {
    /// Number of samples given the sequence length.
    pub fn batch_size(&self, cfg: &ModelConfig) -> usize {
        let rows = match self {
            Inputs::Features(t) => t.rows(),
            Inputs::Tokens(ids) => ids.len(),
        };
        if cfg.mode == Mode::DeepLinear {
            rows
        } else {
            rows / cfg.seq
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Real targets shaped like the logits.
    Values(Tensor),
    /// One class per logit row.
    Labels(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mse" => Some(LossKind::Mse),
            "cross_entropy" => Some(LossKind::CrossEntropy),
            _ => None,
        }
    }
}

/// Intermediate fields of one residual block. Token tensors are
/// `(B·S) × (N·H)`; attention tensors are `(H·B·S) × S` with rows ordered
/// `(head, sample, position)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTrace {
    pub h_norm: Tensor,
    pub k: Tensor,
    pub q: Tensor,
    pub v: Tensor,
    pub scores: Tensor,
    pub attn: Tensor,
    pub mixed: Tensor,
    pub h_tilde: Tensor,
    pub mlp_hidden: Tensor,
}

/// Everything a forward pass produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub n: usize,
    pub mode: Mode,
    /// `h¹, h², …`: block inputs followed by the final block output for the
    /// transformer, hidden layers for the deep linear network.
    pub residual: Vec<Tensor>,
    pub blocks: Vec<BlockTrace>,
    /// Final layernormed features fed to the readout (transformer only).
    pub features: Option<Tensor>,
    pub logits: Tensor,
    /// Per-sample error signal `−∂ℓ/∂f`, present after a loss evaluation.
    pub delta: Option<Tensor>,
    /// Backward signals `γ₀·N·H·∂f/∂h^ℓ` aligned with `residual`.
    pub backward: Option<Vec<Tensor>>,
}

impl ActivationTrace {
    /// Residual stream at layer `ℓ`, counted from 1.
    pub fn residual_at(&self, layer: usize) -> Result<&Tensor> {
        if layer == 0 || layer > self.residual.len() {
            return Err(Error::contract(format!(
                "layer {layer} outside 1..={}",
                self.residual.len()
            )));
        }
        Ok(&self.residual[layer - 1])
    }

    pub fn block(&self, layer: usize) -> Result<&BlockTrace> {
        if layer == 0 || layer > self.blocks.len() {
            return Err(Error::contract(format!(
                "block {layer} outside 1..={}",
                self.blocks.len()
            )));
        }
        Ok(&self.blocks[layer - 1])
    }

    pub fn width(&self) -> usize {
        self.residual[0].cols()
    }
}

/// Pre-attention entry `k·q / N^{α_A}`.
pub fn attention_logits(k: &[f64], q: &[f64], alpha_a: f64) -> Result<f64> {
    if k.len() != q.len() || k.is_empty() {
        return Err(Error::dim(format!("key length {} vs query length {}", k.len(), q.len())));
    }
    let dot: f64 = k.iter().zip(q).map(|(a, b)| a * b).sum();
    Ok(dot / (k.len() as f64).powf(alpha_a))
}

struct BlockVars {
    h_norm: Var,
    k: Var,
    q: Var,
    v: Var,
    scores: Var,
    attn: Var,
    mixed: Var,
    h_tilde: Var,
    mlp_hidden: Var,
}

struct Graph {
    params: Vec<(ParamId, Var)>,
    residual: Vec<Var>,
    blocks: Vec<BlockVars>,
    features: Option<Var>,
    logits: Var,
}

fn one_hot(ids: &[usize], vocab: usize) -> Result<Tensor> {
    if let Some(&bad) = ids.iter().find(|&&t| t >= vocab) {
        return Err(Error::contract(format!("token {bad} outside vocabulary of {vocab}")));
    }
    let mut t = Tensor::zeros(&[ids.len(), vocab]);
    for (r, &id) in ids.iter().enumerate() {
        t.data_mut()[r * vocab + id] = 1.0;
    }
    Ok(t)
}

fn check_finite(tape: &Tape<'_>, v: Var, location: impl FnOnce() -> String) -> Result<()> {
    if tape.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::numeric(location()))
    }
}

fn input_tensor(cfg: &ModelConfig, inputs: &Inputs) -> Result<Tensor> {
    let t = match (cfg.mode, inputs) {
        (Mode::CausalLm, Inputs::Tokens(ids)) => one_hot(ids, cfg.input_dim)?,
        (Mode::CausalLm, Inputs::Features(_)) => {
            return Err(Error::contract("language-model mode takes token ids"))
        }
        (_, Inputs::Tokens(_)) => return Err(Error::contract("this mode takes dense features")),
        (_, Inputs::Features(x)) => x.clone().reshape(vec![x.rows(), x.cols()])?,
    };
    if t.cols() != cfg.input_dim {
        return Err(Error::dim(format!(
            "input width {} but config expects {}",
            t.cols(),
            cfg.input_dim
        )));
    }
    if cfg.mode != Mode::DeepLinear && t.rows() % cfg.seq != 0 {
        return Err(Error::dim(format!(
            "{} input rows do not split into sequences of {}",
            t.rows(),
            cfg.seq
        )));
    }
    Ok(t)
}

fn build_transformer<'p>(
    tape: &mut Tape<'p>,
    params: &'p Params,
    cfg: &ModelConfig,
    x: Tensor,
) -> Result<Graph> {
    let d = cfg.width();
    let (n, heads) = (cfg.n as f64, cfg.heads as f64);
    let mult = multipliers(cfg);
    let mut pvars = Vec::with_capacity(params.len());
    let mut leaf = |tape: &mut Tape<'p>, id: ParamId| -> Result<Var> {
        let v = tape.param(params.expect(id)?);
        pvars.push((id, v));
        Ok(v)
    };

    let xv = tape.constant(x);
    let w0 = leaf(tape, ParamId::global(ParamKind::ReadIn))?;
    let read_in = match cfg.mode {
        Mode::CausalLm => mult.read_in,
        _ => mult.read_in / (cfg.input_dim as f64).sqrt(),
    };
    let h_in = tape.gemm(xv, false, w0, true, read_in)?;
    let pos = leaf(tape, ParamId::global(ParamKind::Positional))?;
    let pos = tape.scale(pos, mult.positional);
    let mut h = tape.add_tiled(h_in, pos)?;
    check_finite(tape, h, || "read-in".to_string())?;

    let layout = AttnLayout {
        heads: cfg.heads,
        seq: cfg.seq,
    };
    let qk_scale = 1.0 / (n.powf(1.5 - cfg.alpha_a) * heads.sqrt());
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let branch = cfg.branch_scale();
    let mut residual = vec![h];
    let mut blocks = Vec::with_capacity(cfg.depth);
    for l in 0..cfg.depth {
        let wk = leaf(tape, ParamId::new(ParamKind::Key, l))?;
        let wq = leaf(tape, ParamId::new(ParamKind::Query, l))?;
        let wv = leaf(tape, ParamId::new(ParamKind::Value, l))?;
        let wo = leaf(tape, ParamId::new(ParamKind::Output, l))?;
        let w1 = leaf(tape, ParamId::new(ParamKind::Mlp1, l))?;
        let w2 = leaf(tape, ParamId::new(ParamKind::Mlp2, l))?;

        let h_norm = tape.layernorm_rows(h, cfg.eps_ln)?;
        let k = tape.gemm(h_norm, false, wk, true, qk_scale)?;
        let q = tape.gemm(h_norm, false, wq, true, qk_scale)?;
        let v = tape.gemm(h_norm, false, wv, true, inv_sqrt_d)?;
        let scores = tape.attn_scores(k, q, layout, n.powf(-cfg.alpha_a))?;
        let attn = tape.softmax_rows(scores, cfg.causal());
        let mixed = tape.attn_mix(attn, v, layout)?;
        let mhsa = tape.gemm(mixed, false, wo, true, inv_sqrt_d)?;
        let h_tilde = tape.axpy(h, branch, mhsa)?;

        let hn2 = tape.layernorm_rows(h_tilde, cfg.eps_ln)?;
        let mlp_hidden = tape.gemm(hn2, false, w1, true, inv_sqrt_d)?;
        let act = tape.gelu(mlp_hidden);
        let mlp = tape.gemm(act, false, w2, true, inv_sqrt_d)?;
        h = tape.axpy(h_tilde, branch, mlp)?;
        check_finite(tape, h, || format!("layer {}", l + 1))?;

        residual.push(h);
        blocks.push(BlockVars {
            h_norm,
            k,
            q,
            v,
            scores,
            attn,
            mixed,
            h_tilde,
            mlp_hidden,
        });
    }

    let features = tape.layernorm_rows(h, cfg.eps_ln)?;
    let wl = leaf(tape, ParamId::global(ParamKind::ReadOut))?;
    let out_scale = mult.read_out / (cfg.gamma0 * d as f64);
    let logits = match cfg.mode {
        Mode::CausalLm => tape.gemm(features, false, wl, false, out_scale)?,
        _ => {
            let pooled = tape.mean_blocks(features, cfg.seq)?;
            tape.gemm(pooled, false, wl, false, out_scale)?
        }
    };
    check_finite(tape, logits, || "readout".to_string())?;
    Ok(Graph {
        params: pvars,
        residual,
        blocks,
        features: Some(features),
        logits,
    })
}

fn normalize_rows(mut x: Tensor) -> Result<Tensor> {
    let c = x.cols();
    for row in x.data_mut().chunks_mut(c) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::contract("deep-linear input has zero norm"));
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(x)
}

fn build_deep_linear<'p>(
    tape: &mut Tape<'p>,
    params: &'p Params,
    cfg: &ModelConfig,
    x: Tensor,
) -> Result<Graph> {
    let d = cfg.width() as f64;
    let mut pvars = Vec::new();
    let xv = tape.constant(normalize_rows(x)?);
    let w0 = tape.param(params.expect(ParamId::global(ParamKind::ReadIn))?);
    pvars.push((ParamId::global(ParamKind::ReadIn), w0));
    let mut h = tape.gemm(xv, false, w0, true, 1.0)?;
    let mut residual = vec![h];
    for l in 0..cfg.depth - 1 {
        let id = ParamId::new(ParamKind::Hidden, l);
        let w = tape.param(params.expect(id)?);
        pvars.push((id, w));
        h = tape.gemm(h, false, w, true, 1.0 / d.sqrt())?;
        check_finite(tape, h, || format!("layer {}", l + 2))?;
        residual.push(h);
    }
    let id = ParamId::global(ParamKind::ReadOut);
    let wl = tape.param(params.expect(id)?);
    pvars.push((id, wl));
    let logits = tape.gemm(h, false, wl, false, 1.0 / (cfg.gamma0 * d))?;
    Ok(Graph {
        params: pvars,
        residual,
        blocks: Vec::new(),
        features: None,
        logits,
    })
}

fn build<'p>(tape: &mut Tape<'p>, params: &'p Params, cfg: &ModelConfig, inputs: &Inputs) -> Result<Graph> {
    cfg.validate()?;
    check_layout(cfg, params)?;
    let x = input_tensor(cfg, inputs)?;
    match cfg.mode {
        Mode::DeepLinear => build_deep_linear(tape, params, cfg, x),
        _ => build_transformer(tape, params, cfg, x),
    }
}

fn collect_trace(tape: &Tape<'_>, g: &Graph, cfg: &ModelConfig, batch: usize) -> ActivationTrace {
    let val = |v: Var| tape.value(v).clone();
    ActivationTrace {
        batch,
        seq: if cfg.mode == Mode::DeepLinear { 1 } else { cfg.seq },
        heads: cfg.heads,
        n: cfg.n,
        mode: cfg.mode,
        residual: g.residual.iter().map(|&v| val(v)).collect(),
        blocks: g
            .blocks
            .iter()
            .map(|b| BlockTrace {
                h_norm: val(b.h_norm),
                k: val(b.k),
                q: val(b.q),
                v: val(b.v),
                scores: val(b.scores),
                attn: val(b.attn),
                mixed: val(b.mixed),
                h_tilde: val(b.h_tilde),
                mlp_hidden: val(b.mlp_hidden),
            })
            .collect(),
        features: g.features.map(val),
        logits: val(g.logits),
        delta: None,
        backward: None,
    }
}

fn backward_signals(tape: &mut Tape<'_>, g: &Graph, cfg: &ModelConfig) -> Result<Vec<Tensor>> {
    let total = tape.sum(g.logits);
    let grads = tape.backward(total)?;
    let scale = cfg.gamma0 * cfg.width() as f64;
    g.residual
        .iter()
        .map(|&v| {
            grads
                .get(v)
                .map(|t| t.scale(scale))
                .ok_or_else(|| Error::contract("residual stream has no adjoint"))
        })
        .collect()
}

/// Forward pass returning the logits and the full activation trace.
///
/// Pooled mode gives `B × O` logits, LM mode `(B·S) × O`.
pub fn forward(params: &Params, cfg: &ModelConfig, inputs: &Inputs) -> Result<(Tensor, ActivationTrace)> {
    forward_traced(params, cfg, inputs, false)
}

/// [`forward`], optionally also filling in the backward signals `g^ℓ`.
pub fn forward_traced(
    params: &Params,
    cfg: &ModelConfig,
    inputs: &Inputs,
    with_backward: bool,
) -> Result<(Tensor, ActivationTrace)> {
    let mut tape = Tape::new();
    let g = build(&mut tape, params, cfg, inputs)?;
    let mut trace = collect_trace(&tape, &g, cfg, inputs.batch_size(cfg));
    if with_backward {
        trace.backward = Some(backward_signals(&mut tape, &g, cfg)?);
    }
    Ok((trace.logits.clone(), trace))
}

/// Deep linear network output and hidden layers `h¹..h^L` for unit-normalized
/// inputs.
pub fn forward_deep_linear(params: &Params, cfg: &ModelConfig, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    if cfg.mode != Mode::DeepLinear {
        return Err(Error::contract("forward_deep_linear needs deep_linear mode"));
    }
    let (f, trace) = forward(params, cfg, &Inputs::Features(x.clone()))?;
    Ok((f, trace.residual))
}

fn collect_grads(grads: &mut Grads, g: &Graph, params: &Params) -> Params {
    let mut out = Params::new();
    for (id, t) in params.iter() {
        let var = g.params.iter().find(|(pid, _)| *pid == id).map(|&(_, v)| v);
        let grad = var
            .and_then(|v| grads.take(v))
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        out.push(id, grad);
    }
    out
}

fn evaluate(
    params: &Params,
    cfg: &ModelConfig,
    inputs: &Inputs,
    targets: &Targets,
    loss_kind: LossKind,
    want_trace: bool,
) -> Result<(f64, Params, Option<ActivationTrace>)> {
    let mut tape = Tape::new();
    let g = build(&mut tape, params, cfg, inputs)?;
    let loss = match (loss_kind, targets) {
        (LossKind::Mse, Targets::Values(y)) => tape.mse(g.logits, y.clone())?,
        (LossKind::CrossEntropy, Targets::Labels(l)) => tape.cross_entropy(g.logits, l.clone())?,
        (LossKind::Mse, Targets::Labels(_)) => {
            return Err(Error::contract("mse loss needs real-valued targets"))
        }
        (LossKind::CrossEntropy, Targets::Values(_)) => {
            return Err(Error::contract("cross-entropy loss needs class labels"))
        }
    };
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::numeric("loss"));
    }
    let mut grads = tape.backward(loss)?;
    let trace = if want_trace {
        let rows = tape.value(g.logits).rows() as f64;
        let delta = grads
            .get(g.logits)
            .map(|t| t.scale(-rows))
            .ok_or_else(|| Error::contract("logits have no adjoint"))?;
        let mut trace = collect_trace(&tape, &g, cfg, inputs.batch_size(cfg));
        trace.delta = Some(delta);
        Some(trace)
    } else {
        None
    };
    Ok((value, collect_grads(&mut grads, &g, params), trace))
}

/// Mean loss over the batch (and positions in LM mode), exact gradients for
/// every parameter, and the trace with `delta` filled in.
pub fn loss_and_grads(
    params: &Params,
    cfg: &ModelConfig,
    inputs: &Inputs,
    targets: &Targets,
    loss_kind: LossKind,
) -> Result<(f64, Params, ActivationTrace)> {
    let (value, grads, trace) = evaluate(params, cfg, inputs, targets, loss_kind, true)?;
    Ok((value, grads, trace.expect("trace requested")))
}

/// Loss and gradients only, skipping the trace copy.
pub fn loss_and_grads_lite(
    params: &Params,
    cfg: &ModelConfig,
    inputs: &Inputs,
    targets: &Targets,
    loss_kind: LossKind,
) -> Result<(f64, Params)> {
    let (value, grads, _) = evaluate(params, cfg, inputs, targets, loss_kind, false)?;
    Ok((value, grads))
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{Mode, ModelConfig};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::optim::{group_multipliers, GroupMultipliers, ParamGroup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKind {
    ReadIn,
    Positional,
    Key,
    Query,
    Value,
    Output,
    Mlp1,
    Mlp2,
    /// Hidden-to-hidden matrix of the deep linear network.
    Hidden,
    ReadOut,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            ParamKind::ReadIn => "read_in",
            ParamKind::Positional => "positional",
            ParamKind::Key => "key",
            ParamKind::Query => "query",
            ParamKind::Value => "value",
            ParamKind::Output => "output",
            ParamKind::Mlp1 => "mlp1",
            ParamKind::Mlp2 => "mlp2",
            ParamKind::Hidden => "hidden",
            ParamKind::ReadOut => "read_out",
        }
    }

    pub fn group(self) -> ParamGroup {
        match self {
            ParamKind::ReadIn => ParamGroup::ReadIn,
            ParamKind::Positional => ParamGroup::Positional,
            ParamKind::ReadOut => ParamGroup::ReadOut,
            _ => ParamGroup::Bulk,
        }
    }
}

/// A tensor's role and, for per-block tensors, its block index (from 0).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    pub kind: ParamKind,
    pub layer: usize,
}

impl ParamId {
    pub fn new(kind: ParamKind, layer: usize) -> Self {
        ParamId { kind, layer }
    }

    pub fn global(kind: ParamKind) -> Self {
        ParamId { kind, layer: 0 }
    }

    /// Stable name such as `key.3`, used in checkpoints.
    pub fn name(&self) -> String {
        format!("{}.{}", self.kind.name(), self.layer)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (kind, layer) = s.rsplit_once('.')?;
        let layer = layer.parse().ok()?;
        let kind = [
            ParamKind::ReadIn,
            ParamKind::Positional,
            ParamKind::Key,
            ParamKind::Query,
            ParamKind::Value,
            ParamKind::Output,
            ParamKind::Mlp1,
            ParamKind::Mlp2,
            ParamKind::Hidden,
            ParamKind::ReadOut,
        ]
        .into_iter()
        .find(|k| k.name() == kind)?;
        Some(ParamId { kind, layer })
    }

    pub fn group(&self) -> ParamGroup {
        self.kind.group()
    }
}

/// Ordered collection of named tensors. Gradients use the same type.
///
/// Matrices are stored `out × in`. Key, query and value rows `hN..(h+1)N`
/// belong to head `h`, as do output columns `hN..(h+1)N`. The readout is
/// `width × O`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    ids: Vec<ParamId>,
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Params {
            ids: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, id: ParamId, t: Tensor) {
        assert!(self.index_of(id).is_none(), "duplicate parameter {}", id.name());
        self.ids.push(id);
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn index_of(&self, id: ParamId) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.index_of(id).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.index_of(id).map(move |i| &mut self.tensors[i])
    }

    /// Tensor lookup that reports a missing entry as a contract error.
    pub fn expect(&self, id: ParamId) -> Result<&Tensor> {
        self.get(id)
            .ok_or_else(|| Error::contract(format!("missing parameter {}", id.name())))
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.ids.iter().copied().zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor)> {
        self.ids.iter().copied().zip(self.tensors.iter_mut())
    }

    /// Same ids, all-zero tensors.
    pub fn zeros_like(&self) -> Params {
        Params {
            ids: self.ids.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn same_layout(&self, other: &Params) -> bool {
        self.ids == other.ids
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

/// Forward multipliers implied by the config.
pub fn multipliers(cfg: &ModelConfig) -> GroupMultipliers {
    match cfg.mode {
        Mode::DeepLinear => GroupMultipliers::UNIT,
        _ => group_multipliers(cfg.adam_scale, cfg.width(), cfg.depth, cfg.beta0, cfg.alpha_l),
    }
}

/// Ids and shapes of every tensor, in canonical order.
pub fn layout(cfg: &ModelConfig) -> Vec<(ParamId, Vec<usize>)> {
    let d = cfg.width();
    let mut out = vec![(ParamId::global(ParamKind::ReadIn), vec![d, cfg.input_dim])];
    if cfg.mode == Mode::DeepLinear {
        for l in 0..cfg.depth.saturating_sub(1) {
            out.push((ParamId::new(ParamKind::Hidden, l), vec![d, d]));
        }
    } else {
        out.push((ParamId::global(ParamKind::Positional), vec![cfg.seq, d]));
        for l in 0..cfg.depth {
            for kind in [
                ParamKind::Key,
                ParamKind::Query,
                ParamKind::Value,
                ParamKind::Output,
                ParamKind::Mlp1,
                ParamKind::Mlp2,
            ] {
                out.push((ParamId::new(kind, l), vec![d, d]));
            }
        }
    }
    out.push((ParamId::global(ParamKind::ReadOut), vec![d, cfg.output_dim]));
    out
}

/// Init standard deviation of one tensor.
pub fn init_std(cfg: &ModelConfig, kind: ParamKind) -> f64 {
    match kind {
        ParamKind::Key | ParamKind::Query => cfg.qk_init_std(),
        _ => multipliers(cfg).init_std(kind.group()),
    }
}

/// Gaussian initialization. Tensor `i` of the canonical layout draws from its
/// own ChaCha stream `i` under `seed`, so a tensor's values depend only on the
/// seed and its position.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<Params> {
    cfg.validate()?;
    let mut params = Params::new();
    for (stream, (id, shape)) in layout(cfg).into_iter().enumerate() {
        let std = init_std(cfg, id.kind);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        let t = Tensor::from_fn(&shape, |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        });
        params.push(id, t);
    }
    Ok(params)
}

/// Checks that `params` has exactly the tensors `cfg` calls for.
pub fn check_layout(cfg: &ModelConfig, params: &Params) -> Result<()> {
    let want = layout(cfg);
    if want.len() != params.len() {
        return Err(Error::dim(format!(
            "config needs {} tensors, params hold {}",
            want.len(),
            params.len()
        )));
    }
    for ((id, shape), (pid, t)) in want.iter().zip(params.iter()) {
        if *id != pid || shape.as_slice() != t.shape() {
            return Err(Error::dim(format!(
                "expected {} {:?}, found {} {:?}",
                id.name(),
                shape,
                pid.name(),
                t.shape()
            )));
        }
    }
    Ok(())
}

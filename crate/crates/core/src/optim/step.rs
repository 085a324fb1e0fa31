use super::scaling::{scaled_lr, OptimizerKind};
use crate::error::{Error, Result};
use crate::model::{Mode, ModelConfig, Params};

/// Optimizer hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Base rate `η₀` before width/depth scaling.
    pub eta0: f64,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub steps: usize,
    /// Multiplies the scaled rate by `γ₀²`.
    pub lr_includes_gamma0: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            eta0: 0.05,
            momentum: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            steps: 200,
            lr_includes_gamma0: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::config("eta0", "must be positive"));
        }
        for (key, v) in [
            ("momentum", self.momentum),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key, format!("{v} is outside [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        Ok(())
    }

    /// Raw learning rate applied to every parameter tensor.
    ///
    /// Transformers use [`scaled_lr`]. The deep linear network uses the
    /// mean-field rate `η₀·width`.
    pub fn lr_for(&self, model: &ModelConfig) -> f64 {
        let base = match model.mode {
            Mode::DeepLinear => self.eta0 * model.width() as f64,
            _ => scaled_lr(self.kind, self.eta0, model.n, model.heads, model.depth, model.alpha_l),
        };
        if self.lr_includes_gamma0 {
            base * model.gamma0 * model.gamma0
        } else {
            base
        }
    }
}

/// Per-run optimizer memory.
#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerState {
    Sgd { velocity: Option<Params> },
    Adam { m: Params, v: Params, t: u64 },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &Params) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd { velocity: None },
            OptimizerKind::Adam => OptimizerState::Adam {
                m: params.zeros_like(),
                v: params.zeros_like(),
                t: 0,
            },
        }
    }
}

fn check_grads(params: &Params, grads: &Params) -> Result<()> {
    if !params.same_layout(grads) {
        return Err(Error::dim("gradients do not match parameter layout"));
    }
    for (id, g) in grads.iter() {
        if !g.all_finite() {
            return Err(Error::numeric(format!("gradient of {}", id.name())));
        }
    }
    Ok(())
}

/// One SGD step on the raw parameters, `θ ← θ − lr·b` with the classical
/// momentum buffer `b ← μ·b + g`.
///
/// Gradients are taken with respect to the raw tensors, so for a tensor used
/// in the forward pass as `c·θ` the effective weight moves by `lr·c²` times
/// the gradient with respect to that effective weight.
pub fn sgd_step(params: &mut Params, grads: &Params, lr: f64, momentum: f64, state: &mut OptimizerState) -> Result<()> {
    check_grads(params, grads)?;
    let OptimizerState::Sgd { velocity } = state else {
        return Err(Error::contract("sgd_step needs SGD state"));
    };
    if momentum == 0.0 {
        for (p, g) in params.tensors_mut().iter_mut().zip(grads.tensors()) {
            for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                *x -= lr * d;
            }
        }
        return Ok(());
    }
    let buf = velocity.get_or_insert_with(|| params.zeros_like());
    for ((p, g), b) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .zip(buf.tensors_mut())
    {
        for ((x, d), v) in p.data_mut().iter_mut().zip(g.data()).zip(b.data_mut()) {
            *v = momentum * *v + d;
            *x -= lr * *v;
        }
    }
    Ok(())
}

/// One bias-corrected Adam step with rate `lr`.
pub fn adam_step(params: &mut Params, grads: &Params, lr: f64, cfg: &OptimizerConfig, state: &mut OptimizerState) -> Result<()> {
    check_grads(params, grads)?;
    let OptimizerState::Adam { m, v, t } = state else {
        return Err(Error::contract("adam_step needs Adam state"));
    };
    *t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(*t as i32);
    let c2 = 1.0 - b2.powi(*t as i32);
    for (((p, g), mt), vt) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .zip(m.tensors_mut())
        .zip(v.tensors_mut())
    {
        for (((x, &d), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(mt.data_mut())
            .zip(vt.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * d;
            *vi = b2 * *vi + (1.0 - b2) * d * d;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *x -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Dispatches on the state's optimizer.
pub fn apply_step(params: &mut Params, grads: &Params, lr: f64, cfg: &OptimizerConfig, state: &mut OptimizerState) -> Result<()> {
    match state {
        OptimizerState::Sgd { .. } => sgd_step(params, grads, lr, cfg.momentum, state),
        OptimizerState::Adam { .. } => adam_step(params, grads, lr, cfg, state),
    }
}

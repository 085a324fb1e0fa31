use crate::error::{Error, Result};

/// How inputs enter the network and what the readout produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Dense token features, outputs averaged over positions.
    PooledClassifier,
    /// Token ids, per-position logits, causal attention.
    CausalLm,
    /// Plain linear MLP without residual stream, attention or layernorm.
    DeepLinear,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::PooledClassifier => "pooled_classifier",
            Mode::CausalLm => "causal_lm",
            Mode::DeepLinear => "deep_linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pooled_classifier" => Some(Mode::PooledClassifier),
            "causal_lm" => Some(Mode::CausalLm),
            "deep_linear" => Some(Mode::DeepLinear),
            _ => None,
        }
    }
}

/// Architecture and scaling knobs.
///
/// In deep-linear mode the hidden width is `n·heads`, `depth` counts the
/// hidden layers `h¹..h^L`, and `seq`, the exponents and `beta0` are unused.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Key/query dimension per head.
    pub n: usize,
    pub heads: usize,
    /// Number of residual blocks, each attention followed by an MLP.
    pub depth: usize,
    pub seq: usize,
    /// Input feature dimension, or vocabulary size in LM mode.
    pub input_dim: usize,
    pub output_dim: usize,
    pub alpha_a: f64,
    pub alpha_l: f64,
    pub beta0: f64,
    pub gamma0: f64,
    pub eps_ln: f64,
    pub mode: Mode,
    /// Selects the Adam-style first/last-layer rescaling.
    pub adam_scale: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: 4,
            heads: 4,
            depth: 2,
            seq: 4,
            input_dim: 8,
            output_dim: 1,
            alpha_a: 1.0,
            alpha_l: 1.0,
            beta0: 1.0,
            gamma0: 1.0,
            eps_ln: 1e-6,
            mode: Mode::PooledClassifier,
            adam_scale: false,
        }
    }
}

impl ModelConfig {
    /// Residual-stream width `N·H`.
    pub fn width(&self) -> usize {
        self.n * self.heads
    }

    pub fn causal(&self) -> bool {
        self.mode == Mode::CausalLm
    }

    /// Multiplier `β₀ / L^{α_L}` on each residual branch.
    pub fn branch_scale(&self) -> f64 {
        self.beta0 / (self.depth as f64).powf(self.alpha_l)
    }

    /// Init standard deviation of key and query weights, `N^{1−α_A}`.
    pub fn qk_init_std(&self) -> f64 {
        (self.n as f64).powf(1.0 - self.alpha_a)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n),
            ("heads", self.heads),
            ("depth", self.depth),
            ("seq", self.seq),
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        for (key, v) in [("alpha_a", self.alpha_a), ("alpha_l", self.alpha_l)] {
            if !(0.5..=1.0).contains(&v) {
                return Err(Error::config(key, format!("{v} is outside [0.5, 1]")));
            }
        }
        for (key, v) in [("beta0", self.beta0), ("gamma0", self.gamma0), ("eps_ln", self.eps_ln)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("{v} must be positive")));
            }
        }
        Ok(())
    }
}

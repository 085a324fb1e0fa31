//! Width and depth learning-rate rules and first/last-layer multipliers.

/// Which update rule drives training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

/// Bulk learning rate for a model of `n` dims per head, `heads` heads and
/// `depth` blocks.
///
/// SGD: `η₀·N·H·L^{2α_L−1}`. Adam: `η₀·N^{−1/2}·H^{−1/2}·L^{α_L−1}`.
pub fn scaled_lr(kind: OptimizerKind, eta0: f64, n: usize, heads: usize, depth: usize, alpha_l: f64) -> f64 {
    let (n, h, l) = (n as f64, heads as f64, depth as f64);
    match kind {
        OptimizerKind::Sgd => eta0 * n * h * l.powf(2.0 * alpha_l - 1.0),
        OptimizerKind::Adam => eta0 / (n * h).sqrt() * l.powf(alpha_l - 1.0),
    }
}

/// Every parameter tensor belongs to exactly one group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    ReadIn,
    Positional,
    Bulk,
    ReadOut,
}

/// Forward multipliers per group. The matching init standard deviation is
/// the reciprocal, so the effective weight `c·W` starts at unit scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupMultipliers {
    pub read_in: f64,
    pub positional: f64,
    pub bulk: f64,
    pub read_out: f64,
}

impl GroupMultipliers {
    pub const UNIT: GroupMultipliers = GroupMultipliers {
        read_in: 1.0,
        positional: 1.0,
        bulk: 1.0,
        read_out: 1.0,
    };

    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::ReadIn => self.read_in,
            ParamGroup::Positional => self.positional,
            ParamGroup::Bulk => self.bulk,
            ParamGroup::ReadOut => self.read_out,
        }
    }

    pub fn init_std(&self, group: ParamGroup) -> f64 {
        1.0 / self.get(group)
    }
}

/// First/last-layer multipliers for a residual model of width `N·H`.
///
/// The depth factor is `(L/β₀)^{1/2−α_L}` for the SGD-style rescale and
/// `(L/β₀)^{1−α_L}` for the Adam-style one, which additionally carries
/// `(N·H)^{1/2}`. At `α_L = 1` these are `(L/β₀)^{−1/2}` and `1`.
pub fn group_multipliers(adam_scale: bool, width: usize, depth: usize, beta0: f64, alpha_l: f64) -> GroupMultipliers {
    let ratio = depth as f64 / beta0;
    let c = if adam_scale {
        ratio.powf(1.0 - alpha_l) * (width as f64).sqrt()
    } else {
        ratio.powf(0.5 - alpha_l)
    };
    GroupMultipliers {
        read_in: c,
        positional: c,
        bulk: 1.0,
        read_out: c,
    }
}

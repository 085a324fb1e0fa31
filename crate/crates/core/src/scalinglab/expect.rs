/// Where in a run a fitted exponent is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Init,
    /// The last measured step.
    Final,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    Within { expected: f64, tolerance: f64 },
    Above(f64),
}

impl Bound {
    pub fn accepts(self, exponent: f64) -> bool {
        match self {
            Bound::Within { expected, tolerance } => (exponent - expected).abs() <= tolerance,
            Bound::Above(b) => exponent > b,
        }
    }

    pub fn describe(self) -> String {
        match self {
            Bound::Within { expected, tolerance } => format!("{expected} ± {tolerance}"),
            Bound::Above(b) => format!("> {b}"),
        }
    }
}

/// Expected exponent of one fitted series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Expectation {
    /// Experiment column, including the variant suffix.
    pub experiment: &'static str,
    pub metric: &'static str,
    pub stage: Stage,
    pub bound: Bound,
}

const fn within(experiment: &'static str, metric: &'static str, stage: Stage, expected: f64, tolerance: f64) -> Expectation {
    Expectation {
        experiment,
        metric,
        stage,
        bound: Bound::Within { expected, tolerance },
    }
}

pub const EXPECTATIONS: &[Expectation] = &[
    within("head_collapse/alpha_a=1", "head_variance", Stage::Init, -1.0, 0.3),
    within("head_collapse/alpha_a=0.5", "head_variance", Stage::Init, 0.0, 0.2),
    within("head_collapse/alpha_a=1", "rms_k", Stage::Init, 0.0, 0.15),
    within("head_collapse/alpha_a=0.5", "rms_k", Stage::Init, 0.0, 0.15),
    within("head_collapse/alpha_a=1", "head_variance", Stage::Final, -2.0, 0.5),
    within("head_collapse/alpha_a=0.5", "head_variance", Stage::Final, 0.0, 0.3),
    within("update_scaling/alpha_a=1", "rms_dk", Stage::Final, 0.0, 0.2),
    within("update_scaling/alpha_a=0.5", "rms_dk", Stage::Final, -0.5, 0.2),
    within("update_scaling/alpha_a=1", "rms_da", Stage::Final, 0.0, 0.25),
    within("update_scaling/alpha_a=0.5", "rms_da", Stage::Final, 0.0, 0.25),
    within("kernel_convergence", "kernel_distance", Stage::Init, -1.0, 0.3),
    within("logit_convergence", "logit_mse", Stage::Final, -1.0, 0.4),
    within("depth/alpha_l=0.5", "fro_dwk", Stage::Final, -0.5, 0.2),
    within("depth/alpha_l=1", "fro_dwk", Stage::Final, 0.0, 0.2),
    within("depth/alpha_l=1", "kernel_deviation", Stage::Init, -2.0, 0.5),
    within("depth/alpha_l=0.5", "kernel_deviation", Stage::Init, 0.0, 0.3),
    Expectation {
        experiment: "stability/alpha_a=0.5",
        metric: "backward_rms",
        stage: Stage::Final,
        bound: Bound::Above(0.25),
    },
    within("stability/alpha_a=1", "backward_rms", Stage::Final, 0.0, 0.2),
];

/// The expectation for a fitted series. `step` is the fit's step and
/// `last_step` the largest step measured for that series.
pub fn expectation_for(experiment: &str, metric: &str, step: usize, last_step: usize) -> Option<&'static Expectation> {
    EXPECTATIONS.iter().find(|e| {
        e.experiment == experiment
            && e.metric == metric
            && match e.stage {
                Stage::Init => step == 0,
                Stage::Final => step == last_step && step > 0,
            }
    })
}

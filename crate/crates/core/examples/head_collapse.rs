//! Head variance versus width at fixed head count, with a power-law fit per
//! attention exponent.

use attnscale::model::ModelConfig;
use attnscale::optim::OptimizerConfig;
use attnscale::scalinglab::{head_collapse_experiment, Lab};
use attnscale::tasks::TaskSpec;

fn main() -> attnscale::Result<()> {
    for alpha_a in [1.0, 0.5] {
        let lab = Lab {
            base: ModelConfig { heads: 8, depth: 1, alpha_a, ..ModelConfig::default() },
            optim: OptimizerConfig { eta0: 0.05, steps: 20, ..OptimizerConfig::default() },
            task: TaskSpec::default(),
            seeds: (0..4).collect(),
        };
        let table = head_collapse_experiment(&lab, &[4, 16, 64])?;
        for f in &table.fits {
            if let Ok(r) = &f.fit {
                println!("{} {} t={}: exponent {:+.3} (R² {:.3})", f.experiment, f.metric, f.step, r.exponent, r.r_squared);
            }
        }
    }
    Ok(())
}

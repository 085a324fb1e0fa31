//! Sizes of the key and attention-variable updates after a few steps as the
//! width grows.

use attnscale::model::ModelConfig;
use attnscale::optim::OptimizerConfig;
use attnscale::scalinglab::{update_scaling_experiment, Lab};
use attnscale::tasks::TaskSpec;

fn main() -> attnscale::Result<()> {
    for alpha_a in [1.0, 0.5] {
        let lab = Lab {
            base: ModelConfig { heads: 1, depth: 1, alpha_a, ..ModelConfig::default() },
            optim: OptimizerConfig { eta0: 1.5, steps: 5, ..OptimizerConfig::default() },
            task: TaskSpec::default(),
            seeds: (0..4).collect(),
        };
        let table = update_scaling_experiment(&lab, &[16, 64, 256])?;
        for f in table.fits.iter().filter(|f| f.step == 5) {
            if let Ok(r) = &f.fit {
                println!("{} {}: exponent {:+.3}", f.experiment, f.metric, r.exponent);
            }
        }
    }
    Ok(())
}

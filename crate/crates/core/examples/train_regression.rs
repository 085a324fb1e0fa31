//! Trains a small transformer on the teacher regression task and prints the
//! loss curve.

use attnscale::model::{init_params, ModelConfig};
use attnscale::optim::{train, OptimizerConfig};
use attnscale::tasks::TaskSpec;

fn main() -> attnscale::Result<()> {
    let cfg = ModelConfig { n: 16, heads: 4, depth: 2, ..ModelConfig::default() };
    let task = TaskSpec { n_samples: 32, batch_size: 8, ..TaskSpec::default() };
    let (data, loss) = task.build(&cfg)?;
    let mut params = init_params(&cfg, 0)?;
    let optim = OptimizerConfig { eta0: 0.05, steps: 200, ..OptimizerConfig::default() };
    let log = train(&mut params, &cfg, &optim, &data, loss)?;
    for (t, l) in log.losses.iter().enumerate().step_by(20) {
        println!("step {t:>4}  loss {l:.6}");
    }
    match log.diverged_at {
        Some(t) => println!("diverged at step {t}"),
        None => println!("final loss {:.6}", log.losses.last().unwrap()),
    }
    Ok(())
}

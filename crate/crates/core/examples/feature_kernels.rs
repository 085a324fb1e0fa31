//! Residual-stream and gradient kernels of a freshly initialized model, and
//! how far two seeds' kernels sit from each other as the head count grows.

use attnscale::model::{forward, forward_traced, init_params, ModelConfig};
use attnscale::probes::{gradient_kernel, kernel_distance, residual_kernel};
use attnscale::tasks::TaskSpec;

fn main() -> attnscale::Result<()> {
    let task = TaskSpec { n_samples: 6, batch_size: 6, ..TaskSpec::default() };
    let cfg = ModelConfig { n: 8, heads: 4, depth: 3, ..ModelConfig::default() };
    let data = task.build(&cfg)?.0;
    let (_, trace) = forward_traced(&init_params(&cfg, 0)?, &cfg, &data.full().0, true)?;
    for layer in 1..=cfg.depth + 1 {
        let h = residual_kernel(&trace, layer, true)?;
        let g = gradient_kernel(&trace, layer)?;
        println!("layer {layer}: tr H = {:.4}, tr G = {:.4}", h.trace(), g.trace());
    }
    println!("{}", residual_kernel(&trace, cfg.depth + 1, true)?.to_text());

    for heads in [1, 4, 16, 64] {
        let cfg = ModelConfig { n: 4, heads, ..cfg.clone() };
        let data = task.build(&cfg)?.0;
        let k = |seed| -> attnscale::Result<_> {
            let (_, t) = forward(&init_params(&cfg, seed)?, &cfg, &data.full().0)?;
            residual_kernel(&t, cfg.depth + 1, true)
        };
        println!("H = {heads:>3}: seed-to-seed distance {:.3e}", kernel_distance(&k(1)?, &k(2)?)?);
    }
    Ok(())
}

//! Spread of the attention variables across heads at initialization for both
//! attention exponents: variance, kurtosis and a histogram of one entry.

use attnscale::model::{forward, init_params, ModelConfig};
use attnscale::probes::{attn_across_heads, attn_histogram, kurtosis, mean_attn_head_variance};
use attnscale::tasks::TaskSpec;

fn main() -> attnscale::Result<()> {
    let task = TaskSpec { n_samples: 4, batch_size: 4, ..TaskSpec::default() };
    for alpha_a in [1.0, 0.5] {
        println!("alpha_a = {alpha_a}");
        for n in [8, 32, 128] {
            let cfg = ModelConfig { n, heads: 64, depth: 1, alpha_a, ..ModelConfig::default() };
            let data = task.build(&cfg)?.0;
            let (_, trace) = forward(&init_params(&cfg, 0)?, &cfg, &data.full().0)?;
            let across = attn_across_heads(&trace, 1, 0, 1, 0)?;
            println!(
                "  N = {n:>3}: head variance {:.3e}, kurtosis {:.2}",
                mean_attn_head_variance(&trace, 1)?,
                kurtosis(&across)
            );
            if n == 128 {
                let h = attn_histogram(&trace, 1, 0, 1, 0, 8)?;
                let bars: Vec<String> = h.mass.iter().map(|m| "#".repeat((m * 40.0).round() as usize)).collect();
                println!("  histogram of A[0,1] over [{:.2}, {:.2}]:", h.lo, h.hi);
                for b in bars {
                    println!("    |{b}");
                }
            }
        }
    }
    Ok(())
}

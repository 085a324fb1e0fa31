//! Saves a trained model, loads it back against its config and checks that
//! the logits are unchanged.

use attnscale::cli::{checkpoint, RunConfig};
use attnscale::model::{forward, init_params};
use attnscale::optim::train;

fn main() -> attnscale::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(&["n=8".into(), "steps=10".into(), "eta0=0.05".into()])?;
    let (data, loss) = cfg.task.build(&cfg.model)?;
    let mut params = init_params(&cfg.model, cfg.seed)?;
    train(&mut params, &cfg.model, &cfg.optim, &data, loss)?;

    let path = std::env::temp_dir().join("attnscale_example.ckpt");
    checkpoint::save(&path, &cfg, &params)?;
    let loaded = checkpoint::load(&path, &cfg)?;
    let before = forward(&params, &cfg.model, &data.full().0)?.0;
    let after = forward(&loaded, &cfg.model, &data.full().0)?.0;
    println!("{} bytes, max logit change {:e}", std::fs::metadata(&path).unwrap().len(), before.sub(&after)?.max_abs());
    Ok(())
}

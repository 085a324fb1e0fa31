//! Central finite differences against the tape gradients of the full
//! transformer loss, for both task modes and both attention exponents. The
//! step is 1e-4: at 1e-5 rounding noise swamps coordinates whose gradient is
//! near 1e-7.

use attnscale::diffcore::{finite_diff_check, Tensor};
use attnscale::model::{init_params, loss_and_grads_lite, Inputs, LossKind, Mode, ModelConfig, Params, Targets};

fn check(cfg: &ModelConfig, inputs: &Inputs, targets: &Targets, kind: LossKind) -> attnscale::Result<f64> {
    let p = init_params(cfg, 1)?;
    let ids = p.ids().to_vec();
    let f = |ts: &[Tensor]| {
        let mut q = Params::new();
        for (id, t) in ids.iter().zip(ts) {
            q.push(*id, t.clone());
        }
        let (loss, g) = loss_and_grads_lite(&q, cfg, inputs, targets, kind)?;
        Ok((loss, g.tensors().to_vec()))
    };
    finite_diff_check(f, p.tensors(), 1e-4)
}

fn main() -> attnscale::Result<()> {
    for alpha_a in [0.5, 1.0] {
        let pooled = ModelConfig { n: 2, heads: 2, depth: 2, seq: 3, input_dim: 3, alpha_a, ..ModelConfig::default() };
        let x = Inputs::Features(Tensor::from_fn(&[3, 3], |i| ((i * 7 % 5) as f64 - 2.0) / 2.0));
        let y = Targets::Values(Tensor::from_vec(vec![0.7]).reshape(vec![1, 1])?);
        println!("pooled   alpha_a={alpha_a}: max rel err {:.2e}", check(&pooled, &x, &y, LossKind::Mse)?);

        let lm = ModelConfig { input_dim: 4, output_dim: 4, mode: Mode::CausalLm, ..pooled };
        let x = Inputs::Tokens(vec![3, 1, 2]);
        let y = Targets::Labels(vec![1, 2, 0]);
        println!("causal   alpha_a={alpha_a}: max rel err {:.2e}", check(&lm, &x, &y, LossKind::CrossEntropy)?);
    }
    Ok(())
}

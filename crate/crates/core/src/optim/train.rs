use super::step::{apply_step, OptimizerConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::model::{loss_and_grads_lite, LossKind, ModelConfig, Params};
use crate::tasks::Dataset;

/// Per-step losses of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// `losses[t]` is the minibatch loss seen by update `t`.
    pub losses: Vec<f64>,
    /// First step whose loss, gradient or update was non-finite.
    pub diverged_at: Option<usize>,
}

impl TrainLog {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// Runs `optim.steps` updates on the dataset's fixed minibatch schedule.
pub fn train(params: &mut Params, cfg: &ModelConfig, optim: &OptimizerConfig, data: &Dataset, loss: LossKind) -> Result<TrainLog> {
    train_with_probes(params, cfg, optim, data, loss, &[], |_, _| Ok(()))
}

/// [`train`], calling `probe(t, params)` after `t` updates for every `t` in
/// `probe_steps` (0 is the initialization). A divergence stops the run; later
/// probes are skipped and the step is recorded in the log.
pub fn train_with_probes<F>(
    params: &mut Params,
    cfg: &ModelConfig,
    optim: &OptimizerConfig,
    data: &Dataset,
    loss: LossKind,
    probe_steps: &[usize],
    mut probe: F,
) -> Result<TrainLog>
where
    F: FnMut(usize, &Params) -> Result<()>,
{
    optim.validate()?;
    let lr = optim.lr_for(cfg);
    let mut state = OptimizerState::new(optim.kind, params);
    let mut log = TrainLog::default();
    for t in 0..=optim.steps {
        if probe_steps.contains(&t) {
            probe(t, params)?;
        }
        if t == optim.steps {
            break;
        }
        let (inputs, targets) = data.batch(t);
        let outcome = loss_and_grads_lite(params, cfg, &inputs, &targets, loss).and_then(|(value, grads)| {
            if !value.is_finite() {
                return Err(Error::numeric("loss"));
            }
            apply_step(params, &grads, lr, optim, &mut state)?;
            if params.all_finite() {
                Ok(value)
            } else {
                Err(Error::numeric("parameters"))
            }
        });
        match outcome {
            Ok(value) => log.losses.push(value),
            Err(Error::Numeric { .. }) => {
                log.losses.push(f64::NAN);
                log.diverged_at = Some(t);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Tape, Tensor};
    use crate::model::{init_params, Mode, ParamId, ParamKind};
    use crate::optim::{sgd_step, OptimizerKind};
    use crate::tasks::make_regression;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> (ModelConfig, Dataset) {
        let cfg = ModelConfig {
            n: 4,
            heads: 2,
            depth: 2,
            seq: 3,
            input_dim: 5,
            ..ModelConfig::default()
        };
        let data = make_regression(1, 8, 3, 5, 1.0).unwrap().with_batch_size(4).unwrap();
        (cfg, data)
    }

    #[test]
    fn zero_steps_leave_params_untouched() {
        let (cfg, data) = small();
        let mut p = init_params(&cfg, 0).unwrap();
        let before = p.clone();
        let o = OptimizerConfig { steps: 0, ..OptimizerConfig::default() };
        let log = train(&mut p, &cfg, &o, &data, LossKind::Mse).unwrap();
        assert!(log.losses.is_empty());
        assert_eq!(p, before);
    }

    #[test]
    fn training_is_deterministic() {
        let (cfg, data) = small();
        let o = OptimizerConfig { steps: 5, ..OptimizerConfig::default() };
        let run = || {
            let mut p = init_params(&cfg, 2).unwrap();
            let log = train(&mut p, &cfg, &o, &data, LossKind::Mse).unwrap();
            (p, log)
        };
        let (pa, la) = run();
        let (pb, lb) = run();
        assert_eq!(la.losses.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), lb.losses.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(pa, pb);
    }

    #[test]
    fn probes_fire_at_requested_steps() {
        let (cfg, data) = small();
        let o = OptimizerConfig { steps: 4, ..OptimizerConfig::default() };
        let mut p = init_params(&cfg, 3).unwrap();
        let init = p.clone();
        let mut seen = Vec::new();
        train_with_probes(&mut p, &cfg, &o, &data, LossKind::Mse, &[0, 2, 4], |t, q| {
            if t == 0 {
                assert_eq!(q, &init);
            }
            seen.push(t);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![0, 2, 4]);
    }

    #[test]
    fn runaway_rate_is_recorded_as_divergence() {
        let (cfg, data) = small();
        let o = OptimizerConfig { steps: 50, eta0: 1e200, ..OptimizerConfig::default() };
        let mut p = init_params(&cfg, 4).unwrap();
        let log = train(&mut p, &cfg, &o, &data, LossKind::Mse).unwrap();
        assert!(log.diverged(), "{:?}", log.losses);
        assert_eq!(log.losses.len(), log.diverged_at.unwrap() + 1);
    }

    #[test]
    fn effective_weight_moves_by_squared_multiplier() {
        // The readout enters as c·w; its raw gradient carries one factor of c,
        // so a raw step of lr moves c·w by lr·c² times the effective gradient.
        let cfg = ModelConfig { depth: 16, beta0: 4.0, ..small().0 };
        let c = crate::model::multipliers(&cfg).read_out;
        assert!((c - 0.5).abs() < 1e-15);
        let data = make_regression(5, 4, cfg.seq, cfg.input_dim, 1.0).unwrap();
        let (x, y) = data.full();
        let p = init_params(&cfg, 6).unwrap();
        let (_, g) = loss_and_grads_lite(&p, &cfg, &x, &y, LossKind::Mse).unwrap();
        let id = ParamId::global(ParamKind::ReadOut);

        // Gradient with respect to the effective readout by finite differences.
        let h = 1e-6;
        let mut up = p.clone();
        up.get_mut(id).unwrap().data_mut()[0] += h / c;
        let mut down = p.clone();
        down.get_mut(id).unwrap().data_mut()[0] -= h / c;
        let l = |q: &Params| loss_and_grads_lite(q, &cfg, &x, &y, LossKind::Mse).unwrap().0;
        let g_eff = (l(&up) - l(&down)) / (2.0 * h);

        let lr = 0.3;
        let mut q = p.clone();
        let mut s = OptimizerState::new(OptimizerKind::Sgd, &q);
        sgd_step(&mut q, &g, lr, 0.0, &mut s).unwrap();
        let moved = c * (q.get(id).unwrap().data()[0] - p.get(id).unwrap().data()[0]);
        assert!((moved + lr * c * c * g_eff).abs() < 1e-7 * (lr * c * c * g_eff).abs().max(1e-3));
    }

    #[test]
    fn least_squares_descent_is_monotone_below_stability_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, d) = (12, 4);
        let x = Tensor::from_fn(&[n, d], |_| rng.random_range(-1.0..1.0));
        let y = Tensor::from_fn(&[n, 1], |_| rng.random_range(-1.0..1.0));
        // Hessian of ½|Xθ − y|²/n is XᵀX/n; power iteration for λ_max.
        let gram = crate::diffcore::matmul(&x.transpose(), &x).unwrap().scale(1.0 / n as f64);
        let mut v = Tensor::filled(&[d, 1], 1.0);
        let mut lam = 0.0;
        for _ in 0..500 {
            let w = crate::diffcore::matmul(&gram, &v).unwrap();
            lam = w.frobenius_norm() / v.frobenius_norm();
            v = w.scale(1.0 / w.frobenius_norm());
        }
        let lr = 1.9 / lam;
        let mut p = Params::new();
        p.push(ParamId::global(ParamKind::ReadOut), Tensor::zeros(&[d, 1]));
        let mut s = OptimizerState::new(OptimizerKind::Sgd, &p);
        let mut prev = f64::INFINITY;
        for _ in 0..60 {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let w = tape.param(p.get(ParamId::global(ParamKind::ReadOut)).unwrap());
            let f = tape.matmul(xv, w).unwrap();
            let loss = tape.mse(f, y.clone()).unwrap();
            let value = tape.value(loss).item();
            assert!(value < prev, "loss went up: {value} after {prev}");
            prev = value;
            let mut gr = tape.backward(loss).unwrap();
            let mut g = Params::new();
            g.push(ParamId::global(ParamKind::ReadOut), gr.take(w).unwrap());
            drop(tape);
            sgd_step(&mut p, &g, lr, 0.0, &mut s).unwrap();
        }
    }

    #[test]
    fn deep_linear_rate_is_mean_field() {
        let cfg = ModelConfig { n: 32, heads: 1, mode: Mode::DeepLinear, gamma0: 2.0, ..ModelConfig::default() };
        let o = OptimizerConfig { eta0: 0.1, lr_includes_gamma0: true, ..OptimizerConfig::default() };
        assert!((o.lr_for(&cfg) - 0.1 * 4.0 * 32.0).abs() < 1e-12);
    }
}

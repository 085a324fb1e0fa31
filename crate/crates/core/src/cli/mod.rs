//! Config files, the `train`/`sweep`/`probe`/`report` commands and every
//! file they write.

pub mod checkpoint;
mod config;
pub mod csv;
pub mod report;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use config::{RunConfig, KEYS};

use crate::error::{Error, Result};
use crate::model::{forward_traced, init_params, Mode, Params};
use crate::optim::train_with_probes;
use crate::probes::{attn_histogram, gradient_kernel, kurtosis, mean_attn_head_variance, residual_kernel};
use crate::scalinglab::{
    deep_linear_response_check, depth_experiment, head_collapse_experiment, kernel_convergence_experiment,
    logit_convergence_experiment, stability_probe, update_scaling_experiment, Lab, SweepTable, EXPERIMENTS,
};
use crate::tasks::Dataset;

/// Exit status for an error: 2 for bad input (config, files, formats,
/// violated preconditions), 1 for failures during a run.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Format { .. } | Error::Io { .. } | Error::Contract(_) => 2,
        Error::Dimension(_) | Error::Numeric { .. } => 1,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn build_data(cfg: &RunConfig) -> Result<(Dataset, crate::model::LossKind)> {
    cfg.task.build(&cfg.model)
}

/// Residual kernels, plus gradient kernels when available, for every
/// configured layer.
fn dump_kernels(cfg: &RunConfig, params: &Params, data: &Dataset, dir: &Path, tag: &str) -> Result<()> {
    if cfg.kernel_layers.is_empty() {
        return Ok(());
    }
    let (inputs, _) = data.full();
    let (_, trace) = forward_traced(params, &cfg.model, &inputs, true)?;
    let pooled = cfg.model.mode == Mode::PooledClassifier;
    for &l in &cfg.kernel_layers {
        write(&dir.join(format!("kernel_l{l}_{tag}.txt")), residual_kernel(&trace, l, pooled)?.to_text())?;
        if (1..=cfg.model.depth + 1).contains(&l) && pooled {
            write(&dir.join(format!("grad_kernel_l{l}_{tag}.txt")), gradient_kernel(&trace, l)?.to_text())?;
        }
    }
    Ok(())
}

/// Trains one model. Writes `config.txt`, `loss.csv` (`step,loss,diverged`),
/// kernel dumps at the probe steps and at the end, and `model.ckpt`.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let (data, loss) = build_data(cfg)?;
    let out = &cfg.out;
    make_dir(out)?;
    write(&out.join("config.txt"), cfg.emit())?;
    let mut params = init_params(&cfg.model, cfg.seed)?;
    let probe_steps: Vec<usize> = cfg.probe_steps.iter().copied().filter(|&t| t < cfg.optim.steps).collect();
    let log = train_with_probes(&mut params, &cfg.model, &cfg.optim, &data, loss, &probe_steps, |t, p| {
        dump_kernels(cfg, p, &data, out, &format!("t{t}"))
    })?;
    let mut csv = String::from("step,loss,diverged\n");
    for (t, l) in log.losses.iter().enumerate() {
        writeln!(csv, "{t},{},{}", csv::float(*l), log.diverged_at == Some(t)).unwrap();
    }
    write(&out.join("loss.csv"), csv)?;
    if let Some(t) = log.diverged_at {
        eprintln!("diverged at step {t}; skipping final kernels");
    } else {
        dump_kernels(cfg, &params, &data, out, "final")?;
    }
    checkpoint::save(&out.join("model.ckpt"), cfg, &params)
}

fn lab(cfg: &RunConfig) -> Lab {
    Lab {
        base: cfg.model.clone(),
        optim: cfg.optim.clone(),
        task: cfg.task.clone(),
        seeds: cfg.seeds.clone(),
    }
}

/// Runs the experiment named by `cfg.experiment` over `cfg.values`.
pub fn run_experiment(cfg: &RunConfig) -> Result<SweepTable> {
    if !EXPERIMENTS.contains(&cfg.experiment.as_str()) {
        return Err(Error::config(
            "experiment",
            format!("unknown experiment `{}`; valid names: {}", cfg.experiment, EXPERIMENTS.join(", ")),
        ));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::contract("seeds must not be empty"));
    }
    cfg.model.validate()?;
    cfg.optim.validate()?;
    let lab = lab(cfg);
    let v = &cfg.values;
    match cfg.experiment.as_str() {
        "head_collapse" => head_collapse_experiment(&lab, v),
        "kernel_convergence" => kernel_convergence_experiment(&lab, v, cfg.probe_layer, &cfg.reference_seeds),
        "logit_convergence" => logit_convergence_experiment(&lab, v, cfg.early_step, &cfg.proxy_seeds),
        "depth" => depth_experiment(&lab, v),
        "update_scaling" => update_scaling_experiment(&lab, v),
        "deep_linear_response" => {
            let width = cfg.model.width();
            deep_linear_response_check(width, v, cfg.optim.eta0, cfg.model.gamma0, &cfg.seeds).map(|(_, t)| t)
        }
        "stability" => stability_probe(&lab, v),
        _ => unreachable!(),
    }
}

/// Writes `sweep.csv` and prints one line per fitted series.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepTable> {
    let table = run_experiment(cfg)?;
    make_dir(&cfg.out)?;
    write(&cfg.out.join("sweep.csv"), csv::write_table(&table))?;
    for f in &table.fits {
        match &f.fit {
            Ok(r) => println!(
                "{} {} t={}: exponent {:.4} (R² {:.3})",
                f.experiment, f.metric, f.step, r.exponent, r.r_squared
            ),
            Err(e) => println!("{} {} t={}: {e}", f.experiment, f.metric, f.step),
        }
    }
    Ok(table)
}

/// Probes a checkpoint, or a fresh init when none is configured, on the
/// full dataset without training. Writes kernels, `heads.csv`
/// (`layer,metric,value`) and `histograms.csv`
/// (`layer,sample,s,s2,bin,lo,hi,mass`).
pub fn cmd_probe(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.model.mode == Mode::DeepLinear {
        return Err(Error::config("mode", "probe needs a transformer"));
    }
    let params = match &cfg.checkpoint {
        Some(path) => checkpoint::load(path, cfg)?,
        None => init_params(&cfg.model, cfg.seed)?,
    };
    let (data, _) = build_data(cfg)?;
    make_dir(&cfg.out)?;
    dump_kernels(cfg, &params, &data, &cfg.out, "probe")?;
    let (inputs, _) = data.full();
    let (_, trace) = forward_traced(&params, &cfg.model, &inputs, false)?;
    let mut heads = String::from("layer,metric,value\n");
    let mut hist = String::from("layer,sample,s,s2,bin,lo,hi,mass\n");
    let bins = cfg.histogram_bins;
    for l in 1..=cfg.model.depth {
        let scores = trace.block(l)?.scores.data();
        if cfg.model.heads >= 2 {
            writeln!(heads, "{l},head_variance,{}", csv::float(mean_attn_head_variance(&trace, l)?)).unwrap();
        }
        writeln!(heads, "{l},score_kurtosis,{}", csv::float(kurtosis(scores))).unwrap();
        if cfg.model.heads < bins {
            continue;
        }
        for s in 0..cfg.model.seq {
            let upto = if cfg.model.causal() { s + 1 } else { cfg.model.seq };
            for s2 in 0..upto {
                let h = attn_histogram(&trace, l, s, s2, 0, bins)?;
                let width = (h.hi - h.lo) / bins as f64;
                for (b, m) in h.mass.iter().enumerate() {
                    let lo = h.lo + width * b as f64;
                    writeln!(hist, "{l},0,{s},{s2},{b},{},{},{}", csv::float(lo), csv::float(lo + width), csv::float(*m)).unwrap();
                }
            }
        }
    }
    if cfg.model.heads < bins {
        eprintln!("{} heads cannot fill {bins} histogram bins; histograms skipped", cfg.model.heads);
    }
    write(&cfg.out.join("heads.csv"), heads)?;
    write(&cfg.out.join("histograms.csv"), hist)
}

/// Reads sweep CSVs and writes `report.md` plus one SVG per experiment.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::contract("report needs at least one sweep CSV"));
    }
    let mut rows = Vec::new();
    for path in inputs {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for rec in csv::read_table(&text, path)? {
            if let csv::Record::Measurement(r) = rec {
                rows.push(r);
            }
        }
    }
    make_dir(out)?;
    let series = report::collect_series(&rows);
    let mut experiments: Vec<&str> = series.iter().map(|s| s.experiment.as_str()).collect();
    experiments.dedup();
    for e in experiments {
        let mine: Vec<_> = series.iter().filter(|s| s.experiment == e).cloned().collect();
        let file = e.replace(['/', '='], "_");
        write(&out.join(format!("{file}.svg")), report::svg_plot(e, &mine))?;
    }
    let dl: Vec<_> = rows.iter().filter(|r| r.seed.is_none() && r.experiment == "deep_linear_response").cloned().collect();
    write(&out.join("report.md"), report::markdown(&series, &dl))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model.n = 2;
        cfg.model.heads = 4;
        cfg.model.depth = 1;
        cfg.optim.steps = 3;
        cfg.kernel_layers = vec![1, 2];
        cfg.probe_steps = vec![0];
        cfg.out = dir.to_path_buf();
        cfg
    }

    #[test]
    fn train_writes_its_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke(dir.path());
        cmd_train(&cfg).unwrap();
        let loss = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        assert_eq!(loss.lines().count(), 4);
        for f in ["kernel_l1_t0.txt", "kernel_l2_final.txt", "grad_kernel_l2_final.txt", "model.ckpt", "config.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn zero_steps_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke(dir.path());
        cfg.optim.steps = 0;
        cmd_train(&cfg).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("loss.csv")).unwrap(), "step,loss,diverged\n");
    }

    #[test]
    fn unknown_experiment_lists_names() {
        let mut cfg = RunConfig::default();
        cfg.experiment = "nope".into();
        let err = run_experiment(&cfg).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        let msg = err.to_string();
        assert!(EXPERIMENTS.iter().all(|e| msg.contains(e)), "{msg}");
    }

    #[test]
    fn empty_seeds_are_a_contract_error() {
        let mut cfg = RunConfig::default();
        cfg.seeds.clear();
        assert!(matches!(run_experiment(&cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn probe_histograms_sum_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke(dir.path());
        cfg.histogram_bins = 2;
        cmd_probe(&cfg).unwrap();
        let text = std::fs::read_to_string(dir.path().join("histograms.csv")).unwrap();
        let mut sums = std::collections::BTreeMap::new();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            *sums.entry((f[2].to_string(), f[3].to_string())).or_insert(0.0) += f[7].parse::<f64>().unwrap();
        }
        assert_eq!(sums.len(), 16);
        assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn probe_of_missing_checkpoint_exits_2() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke(dir.path());
        cfg.checkpoint = Some(dir.path().join("absent.ckpt"));
        assert_eq!(exit_code(&cmd_probe(&cfg).unwrap_err()), 2);
    }
}

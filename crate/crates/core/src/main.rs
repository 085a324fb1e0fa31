use std::path::PathBuf;
use std::process::ExitCode;

use attnscale::cli::{self, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attnscale", about = "Scaling-limit experiments for parameterized transformers")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    Train(Common),
    Sweep(Common),
    Probe(Common),
    /// Summarizes sweep CSVs into SVG plots and a markdown table.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

fn load(config: Option<&PathBuf>, set: &[String], out: Option<PathBuf>) -> attnscale::Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(set)?;
    if let Some(o) = out {
        cfg.out = o;
    }
    Ok(cfg)
}

fn run(args: Args) -> attnscale::Result<()> {
    match args.command {
        Command::Train(c) => cli::cmd_train(&load(Some(&c.config), &c.set, c.out)?),
        Command::Sweep(c) => cli::cmd_sweep(&load(Some(&c.config), &c.set, c.out)?).map(|_| ()),
        Command::Probe(c) => cli::cmd_probe(&load(Some(&c.config), &c.set, c.out)?),
        Command::Report { config, set, out, csv } => {
            let cfg = load(config.as_ref(), &set, out)?;
            cli::cmd_report(&csv, &cfg.out)
        }
    }
}

fn main() -> ExitCode {
    if let Ok(n) = std::env::var("ATTNSCALE_THREADS") {
        let threads = n.parse().unwrap_or(0);
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
    }
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}

//! Runs a small depth sweep through the same path as `attnscale sweep`, then
//! renders the markdown summary and SVG plots into a directory.
//!
//! Usage: `cargo run --example sweep_and_report [OUT_DIR]`

use std::path::PathBuf;

use attnscale::cli::{cmd_report, cmd_sweep, RunConfig};

fn main() -> attnscale::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/example_report".into()));
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(&[
        "experiment=depth".into(),
        "n=8".into(),
        "heads=2".into(),
        "steps=5".into(),
        "eta0=0.05".into(),
        "values=2,4,8,16".into(),
        "seeds=0,1,2,3".into(),
        format!("out={}", out.display()),
    ])?;
    cmd_sweep(&cfg)?;
    cmd_report(&[out.join("sweep.csv")], &out)?;
    println!("{}", std::fs::read_to_string(out.join("report.md")).unwrap());
    Ok(())
}

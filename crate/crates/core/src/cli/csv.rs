//! Sweep tables as CSV.
//!
//! Columns: `experiment,axis,value,seed,step,metric,metric_value,diverged`.
//! Measurement rows carry the swept size in `value`. Each fitted series adds
//! a row with `value = fit` holding the exponent and one with
//! `value = fit_r2` holding the R². An empty `seed` marks rows not tied to
//! one seed. Floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalinglab::{Axis, Row, SweepTable};

pub const HEADER: &str = "experiment,axis,value,seed,step,metric,metric_value,diverged";

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn seed_text(seed: Option<u64>) -> String {
    seed.map(|s| s.to_string()).unwrap_or_default()
}

pub fn write_table(table: &SweepTable) -> String {
    let mut s = String::new();
    writeln!(s, "{HEADER}").unwrap();
    for r in &table.rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.experiment,
            r.axis.name(),
            r.value,
            seed_text(r.seed),
            r.step,
            r.metric,
            float(r.metric_value),
            r.diverged
        )
        .unwrap();
    }
    for f in &table.fits {
        let (exponent, r2) = match &f.fit {
            Ok(fit) => (fit.exponent, fit.r_squared),
            Err(_) => (f64::NAN, f64::NAN),
        };
        for (tag, v) in [("fit", exponent), ("fit_r2", r2)] {
            writeln!(
                s,
                "{},{},{tag},,{},{},{},false",
                f.experiment,
                f.axis.name(),
                f.step,
                f.metric,
                float(v)
            )
            .unwrap();
        }
    }
    s
}

/// One parsed CSV record.
#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    Measurement(Row),
    Fit {
        experiment: String,
        axis: Axis,
        step: usize,
        metric: String,
        exponent: f64,
    },
    FitR2 {
        experiment: String,
        metric: String,
        step: usize,
        r_squared: f64,
    },
}

pub fn read_table(text: &str, path: &Path) -> Result<Vec<Record>> {
    let fail = |line: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == HEADER => {}
        _ => return Err(fail(1, format!("expected header `{HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 8 {
            return Err(fail(ln, format!("expected 8 fields, found {}", f.len())));
        }
        let axis = Axis::parse(f[1]).ok_or_else(|| fail(ln, format!("unknown axis `{}`", f[1])))?;
        let step = f[4].parse().map_err(|_| fail(ln, format!("bad step `{}`", f[4])))?;
        let v: f64 = f[6].parse().map_err(|_| fail(ln, format!("bad metric_value `{}`", f[6])))?;
        let experiment = f[0].to_string();
        let metric = f[5].to_string();
        out.push(match f[2] {
            "fit" => Record::Fit {
                experiment,
                axis,
                step,
                metric,
                exponent: v,
            },
            "fit_r2" => Record::FitR2 {
                experiment,
                metric,
                step,
                r_squared: v,
            },
            size => {
                let value = size.parse().map_err(|_| fail(ln, format!("bad value `{size}`")))?;
                let seed = match f[3] {
                    "" => None,
                    s => Some(s.parse().map_err(|_| fail(ln, format!("bad seed `{s}`")))?),
                };
                let diverged = match f[7] {
                    "true" => true,
                    "false" => false,
                    d => return Err(fail(ln, format!("bad diverged flag `{d}`"))),
                };
                Record::Measurement(Row {
                    experiment,
                    axis,
                    value,
                    seed,
                    step,
                    metric,
                    metric_value: v,
                    diverged,
                })
            }
        });
    }
    Ok(out)
}

//! Log-log SVG panels and the markdown exponent table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::scalinglab::{expectation_for, fit_power_law, FitResult, Row};

/// One plotted series: every positive, finite, non-diverged measurement of a
/// metric at one step, across sizes and seeds.
#[derive(Clone, Debug)]
pub struct Series {
    pub experiment: String,
    pub metric: String,
    pub step: usize,
    pub axis: String,
    pub points: Vec<(f64, f64)>,
    pub fit: Result<FitResult, String>,
    /// Largest step measured for this experiment and metric.
    pub last_step: usize,
}

impl Series {
    pub fn label(&self) -> String {
        format!("{} @ t={}", self.metric, self.step)
    }
}

/// Groups per-seed rows into series and fits each, seed-averaged.
pub fn collect_series(rows: &[Row]) -> Vec<Series> {
    let mut groups: BTreeMap<(String, String, usize), (String, Vec<(f64, f64)>)> = BTreeMap::new();
    let mut last: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.seed.is_some()) {
        let e = last.entry((r.experiment.clone(), r.metric.clone())).or_insert(0);
        *e = (*e).max(r.step);
        let g = groups
            .entry((r.experiment.clone(), r.metric.clone(), r.step))
            .or_insert_with(|| (r.axis.name().to_string(), Vec::new()));
        if !r.diverged && r.metric_value.is_finite() && r.metric_value > 0.0 {
            g.1.push((r.value as f64, r.metric_value));
        }
    }
    groups
        .into_iter()
        .map(|((experiment, metric, step), (axis, points))| {
            let fit = fit_power_law(&points, true).map_err(|e| match e {
                crate::Error::Contract(m) => m,
                other => other.to_string(),
            });
            let last_step = last[&(experiment.clone(), metric.clone())];
            Series {
                experiment,
                metric,
                step,
                axis,
                points,
                fit,
                last_step,
            }
        })
        .collect()
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

fn decade_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let (lo, hi) = (lo.log10(), hi.log10());
    let pad = ((hi - lo) * 0.08).max(0.1);
    (lo - pad, hi + pad)
}

fn tick_label(e: f64) -> String {
    let v = 10f64.powf(e);
    if (1e-3..1e4).contains(&v) {
        format!("{}", (v * 1e6).round() / 1e6)
    } else {
        format!("1e{}", e.round())
    }
}

/// Log-log scatter of every series with its fitted line and slope.
pub fn svg_plot(title: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 460.0);
    let (left, right, top, bottom) = (70.0, 250.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let all = || series.iter().flat_map(|s| s.points.iter().copied());
    let (x0, x1) = decade_range(all().map(|p| p.0));
    let (y0, y1) = decade_range(all().map(|p| p.1));
    let px = |x: f64| left + (x.log10() - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + (1.0 - (y.log10() - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{left}" y="24" font-size="15">{}</text>"#, escape(title)).unwrap();
    writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for e in (x0.ceil() as i64)..=(x1.floor() as i64) {
        let x = px(10f64.powi(e as i32));
        writeln!(s, r##"<line x1="{x:.1}" y1="{top}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/>"##, top + ph).unwrap();
        writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            top + ph + 16.0,
            tick_label(e as f64)
        )
        .unwrap();
    }
    for e in (y0.ceil() as i64)..=(y1.floor() as i64) {
        let y = py(10f64.powi(e as i32));
        writeln!(s, r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, left + pw).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, y + 4.0, tick_label(e as f64)).unwrap();
    }
    let axis = series.first().map(|s| s.axis.as_str()).unwrap_or("size");
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{axis}</text>"#,
        left + pw / 2.0,
        h - 12.0
    )
    .unwrap();

    for (i, ser) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        for &(x, y) in &ser.points {
            writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{c}" fill-opacity="0.7"/>"#, px(x), py(y)).unwrap();
        }
        let legend = match &ser.fit {
            Ok(fit) => {
                let (a, b) = ser.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
                writeln!(
                    s,
                    r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{c}" stroke-dasharray="5,3"/>"#,
                    px(a),
                    py(fit.predict(a)),
                    px(b),
                    py(fit.predict(b))
                )
                .unwrap();
                format!("{}: slope {:.2}", ser.label(), fit.exponent)
            }
            Err(_) => format!("{}: no fit", ser.label()),
        };
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 14.0;
        writeln!(s, r#"<circle cx="{lx}" cy="{:.1}" r="4" fill="{c}"/>"#, ly - 4.0).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 10.0, escape(&legend)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Markdown table of fitted exponents against the expectation table.
pub fn markdown(series: &[Series], deep_linear: &[Row]) -> String {
    let mut s = String::from("# Scaling exponents\n\n");
    s.push_str("| experiment | metric | step | exponent | R² | expected | result |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    let mut notes = Vec::new();
    for ser in series {
        let exp = expectation_for(&ser.experiment, &ser.metric, ser.step, ser.last_step);
        let expected = exp.map(|e| e.bound.describe()).unwrap_or_else(|| "-".into());
        match &ser.fit {
            Ok(fit) => {
                let verdict = match exp {
                    Some(e) if e.bound.accepts(fit.exponent) => "pass",
                    Some(_) => "FAIL",
                    None => "-",
                };
                writeln!(
                    s,
                    "| {} | {} | {} | {:.3} | {:.3} | {expected} | {verdict} |",
                    ser.experiment, ser.metric, ser.step, fit.exponent, fit.r_squared
                )
                .unwrap();
            }
            Err(why) => {
                let verdict = if exp.is_some() { "FAIL" } else { "-" };
                writeln!(s, "| {} | {} | {} | - | - | {expected} | {verdict} |", ser.experiment, ser.metric, ser.step).unwrap();
                let what = if ser.points.len() == 1 { "single point, no fit line".to_string() } else { why.clone() };
                notes.push(format!("- {} {} at t={}: {what}", ser.experiment, ser.metric, ser.step));
            }
        }
    }
    if let Some(ser) = series.iter().find(|x| x.experiment.starts_with("head_collapse") && x.last_step > 0) {
        notes.push(format!(
            "- head_collapse trains {} synthetic steps; how many steps match the regime of long real-data runs is not known.",
            ser.last_step
        ));
    }
    if !deep_linear.is_empty() {
        s.push_str("\n## Deep linear response\n\n| L | measured | stderr | DMFT | response-free | result |\n|---|---|---|---|---|---|\n");
        let get = |depth: usize, metric: &str| {
            deep_linear
                .iter()
                .find(|r| r.value == depth && r.metric == metric)
                .map(|r| r.metric_value)
        };
        let mut depths: Vec<usize> = deep_linear.iter().map(|r| r.value).collect();
        depths.dedup();
        for d in depths {
            let (Some(m), Some(se), Some(dmft), Some(naive)) =
                (get(d, "h_last_mean"), get(d, "h_last_stderr"), get(d, "dmft_prediction"), get(d, "naive_prediction"))
            else {
                continue;
            };
            let ok = ((m - dmft) / dmft).abs() <= 0.1 && (m - naive).abs() > 10.0 * se;
            writeln!(
                s,
                "| {d} | {m:.4} | {se:.4} | {dmft:.4} | {naive:.4} | {} |",
                if ok { "pass" } else { "FAIL" }
            )
            .unwrap();
        }
    }
    if !notes.is_empty() {
        s.push_str("\n## Notes\n\n");
        for n in notes {
            writeln!(s, "{n}").unwrap();
        }
    }
    s
}

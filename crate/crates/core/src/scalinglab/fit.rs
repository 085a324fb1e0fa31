use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitResult {
    pub exponent: f64,
    pub log_intercept: f64,
    pub r_squared: f64,
    /// Distinct `x` values used.
    pub points: usize,
}

impl FitResult {
    pub fn predict(&self, x: f64) -> f64 {
        (self.log_intercept + self.exponent * x.ln()).exp()
    }
}

/// Fits `y ≈ e^b·x^a`. With `average_seeds`, repeated `x` values are first
/// replaced by the arithmetic mean of their `y`.
pub fn fit_power_law(points: &[(f64, f64)], average_seeds: bool) -> Result<FitResult> {
    let bad: Vec<String> = points
        .iter()
        .filter(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite()))
        .map(|(x, y)| format!("({x}, {y})"))
        .collect();
    if !bad.is_empty() {
        return Err(Error::contract(format!(
            "power-law fit needs positive finite points, got {}",
            bad.join(", ")
        )));
    }
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if average_seeds {
        let mut merged: Vec<(f64, f64, usize)> = Vec::new();
        for (x, y) in pts {
            match merged.last_mut() {
                Some(last) if last.0 == x => {
                    last.1 += y;
                    last.2 += 1;
                }
                _ => merged.push((x, y, 1)),
            }
        }
        pts = merged.into_iter().map(|(x, s, c)| (x, s / c as f64)).collect();
    }
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::contract(format!(
            "power-law fit needs at least 3 distinct sizes, got {}",
            distinct.len()
        )));
    }
    let m = pts.len() as f64;
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(FitResult {
        exponent: slope,
        log_intercept: my - slope * mx,
        r_squared,
        points: distinct.len(),
    })
}

/// Arithmetic mean of member logits, summed in the given order.
pub fn ensemble_proxy(members: &[Tensor]) -> Result<Tensor> {
    let Some(first) = members.first() else {
        return Err(Error::contract("ensemble needs at least one member"));
    };
    let mut acc = Tensor::zeros(first.shape());
    for m in members {
        acc = acc.add(m)?;
    }
    Ok(acc.scale(1.0 / members.len() as f64))
}

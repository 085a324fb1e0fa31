use super::Tensor;
use crate::error::{Error, Result};

/// Compares analytic gradients against central differences.
///
/// `f` maps a parameter list to its value and analytic gradient (one tensor
/// per parameter). Returns the largest `|analytic − numeric| / (|numeric| + 1e−12)`
/// over all coordinates.
pub fn finite_diff_check<F>(mut f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    if !(step > 0.0) {
        return Err(Error::contract(format!("finite-difference step must be positive, got {step}")));
    }
    let (_, analytic) = f(params)?;
    if analytic.len() != params.len() {
        return Err(Error::contract(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for (p, grad) in analytic.iter().enumerate() {
        params[p].expect_same_shape(grad)?;
        for i in 0..params[p].len() {
            let x0 = params[p].data()[i];
            work[p].data_mut()[i] = x0 + step;
            let (up, _) = f(&work)?;
            work[p].data_mut()[i] = x0 - step;
            let (down, _) = f(&work)?;
            work[p].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * step);
            let rel = (grad.data()[i] - numeric).abs() / (numeric.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

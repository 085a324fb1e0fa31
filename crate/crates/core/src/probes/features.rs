use super::kernel::{gram, Kernel, KernelIndex};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::ActivationTrace;

/// Rows of a `(B·S) × d` token tensor, optionally averaged over positions.
fn rows_with_index(x: &Tensor, batch: usize, seq: usize, pooled: bool, time: usize) -> (Tensor, Vec<KernelIndex>) {
    if !pooled {
        let index = (0..batch * seq)
            .map(|r| KernelIndex {
                sample: r / seq,
                position: Some(r % seq),
                time,
            })
            .collect();
        return (x.clone(), index);
    }
    let d = x.cols();
    let mut out = Tensor::zeros(&[batch, d]);
    for (b, dst) in out.data_mut().chunks_mut(d).enumerate() {
        for s in 0..seq {
            for (o, v) in dst.iter_mut().zip(x.row(b * seq + s)) {
                *o += v;
            }
        }
        dst.iter_mut().for_each(|o| *o /= seq as f64);
    }
    let index = (0..batch)
        .map(|b| KernelIndex {
            sample: b,
            position: None,
            time,
        })
        .collect();
    (out, index)
}

fn stacked_gram(layer: usize, parts: Vec<(Tensor, Vec<KernelIndex>)>, width: usize) -> Result<Kernel> {
    let cols = parts[0].0.cols();
    let mut data = Vec::new();
    let mut index = Vec::new();
    for (x, ix) in parts {
        data.extend_from_slice(x.data());
        index.extend(ix);
    }
    let x = Tensor::new(vec![index.len(), cols], data)?;
    Kernel::new(layer, index, gram(&x, width as f64)?)
}

/// Feature kernel `h^ℓ·h^ℓ / (N·H)` at layer `ℓ` (counted from 1).
///
/// With `pooled`, each sample's features are first averaged over positions.
pub fn residual_kernel(trace: &ActivationTrace, layer: usize, pooled: bool) -> Result<Kernel> {
    residual_kernel_over_time(&[(0, trace)], layer, pooled)
}

/// Two-time feature kernel over traces of the same probe batch taken at the
/// given training steps.
pub fn residual_kernel_over_time(traces: &[(usize, &ActivationTrace)], layer: usize, pooled: bool) -> Result<Kernel> {
    let Some(&(_, first)) = traces.first() else {
        return Err(Error::contract("no traces given"));
    };
    let parts = traces
        .iter()
        .map(|&(t, tr)| Ok(rows_with_index(tr.residual_at(layer)?, tr.batch, tr.seq, pooled, t)))
        .collect::<Result<Vec<_>>>()?;
    stacked_gram(layer, parts, first.width())
}

/// Gradient kernel `g^ℓ·g^ℓ / (N·H)` with `g^ℓ = γ₀·N·H·∂f/∂h^ℓ`.
pub fn gradient_kernel(trace: &ActivationTrace, layer: usize) -> Result<Kernel> {
    let back = trace
        .backward
        .as_ref()
        .ok_or_else(|| Error::contract("trace was recorded without a backward pass"))?;
    if layer == 0 || layer > back.len() {
        return Err(Error::contract(format!("layer {layer} outside 1..={}", back.len())));
    }
    let part = rows_with_index(&back[layer - 1], trace.batch, trace.seq, false, 0);
    stacked_gram(layer, vec![part], trace.width())
}

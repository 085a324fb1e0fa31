//! Dense kernels shared by the tape and the free-function API.

use super::Tensor;
use crate::error::{Error, Result};

/// Strided view of a row-major buffer, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'s> {
    pub data: &'s [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'s> MatRef<'s> {
    /// The `rows × cols` block starting at `offset` of a row-major matrix with
    /// leading dimension `ld`.
    pub fn block(data: &'s [f64], offset: usize, rows: usize, cols: usize, ld: usize) -> Self {
        MatRef {
            data: &data[offset..],
            rows,
            cols,
            rs: ld,
            cs: 1,
        }
    }

    pub fn of(t: &'s Tensor) -> Self {
        let (rows, cols) = t.matrix_dims();
        Self::block(t.data(), 0, rows, cols, cols)
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn maybe_t(self, flag: bool) -> Self {
        if flag {
            self.t()
        } else {
            self
        }
    }

    fn last_index(&self) -> usize {
        (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
    }
}

/// Mutable strided destination block.
pub(crate) struct MatMut<'s> {
    pub data: &'s mut [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
}

impl<'s> MatMut<'s> {
    pub fn block(data: &'s mut [f64], offset: usize, rows: usize, cols: usize, ld: usize) -> Self {
        MatMut {
            data: &mut data[offset..],
            rows,
            cols,
            rs: ld,
        }
    }
}

/// `c ← alpha·a·b + beta·c` for strided views.
pub(crate) fn gemm_into(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    assert!(a.last_index() < a.data.len());
    assert!(b.last_index() < b.data.len());
    assert!((c.rows - 1) * c.rs + c.cols - 1 < c.data.len());
    // SAFETY: the asserts above keep every strided access inside its slice,
    // and `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            1,
        );
    }
}

/// `alpha · op(a) · op(b)` as a fresh tensor.
pub(crate) fn gemm(alpha: f64, a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
    let av = MatRef::of(a).maybe_t(ta);
    let bv = MatRef::of(b).maybe_t(tb);
    if av.cols != bv.rows {
        return Err(Error::dim(format!(
            "matmul inner dimensions differ: {}×{} by {}×{}",
            av.rows, av.cols, bv.rows, bv.cols
        )));
    }
    let mut out = Tensor::zeros(&[av.rows, bv.cols]);
    let cols = bv.cols;
    gemm_into(alpha, av, bv, 0.0, MatMut::block(out.data_mut(), 0, av.rows, cols, cols));
    Ok(out)
}

/// Exact matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::dim(format!(
            "matmul needs matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    gemm(1.0, a, false, b, false)
}

pub(crate) fn softmax_row_in_place(row: &mut [f64], support: usize) {
    let (live, masked) = row.split_at_mut(support);
    let m = live.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut z = 0.0;
    for x in live.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in live.iter_mut() {
        *x /= z;
    }
    masked.fill(0.0);
}

/// Row-wise softmax of a stack of `S × S` blocks. With `causal`, row `r`
/// normalizes over columns `0..=r mod S` and the rest are exactly zero.
pub fn softmax_rows(a: &Tensor, causal: bool) -> Tensor {
    let mut out = a.clone();
    let cols = a.cols();
    for (r, row) in out.data_mut().chunks_mut(cols).enumerate() {
        let support = if causal { r % cols + 1 } else { cols };
        softmax_row_in_place(row, support);
    }
    out
}

/// Writes the normalized rows into `out` and returns each row's `1/√(σ²+eps)`.
pub(crate) fn layernorm_rows_into(x: &Tensor, eps: f64, out: &mut [f64]) -> Vec<f64> {
    let d = x.cols();
    let mut inv = Vec::with_capacity(x.rows());
    for (src, dst) in x.data().chunks(d).zip(out.chunks_mut(d)) {
        let mu = src.iter().sum::<f64>() / d as f64;
        let spread = src.iter().fold(0.0f64, |m, v| m.max((v - mu).abs()));
        let r = if spread > 1e100 {
            // Rescale so the squares cannot overflow.
            let ms = src.iter().map(|v| ((v - mu) / spread).powi(2)).sum::<f64>() / d as f64;
            (1.0 / spread) / (ms + eps / spread / spread).sqrt()
        } else {
            let var = src.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            1.0 / (var + eps).sqrt()
        };
        for (o, v) in dst.iter_mut().zip(src) {
            *o = (v - mu) * r;
        }
        inv.push(r);
    }
    inv
}

/// Fixed (non-affine) layernorm of each row.
pub fn layernorm_fixed(h: &Tensor, eps: f64) -> Result<Tensor> {
    if h.cols() < 2 {
        return Err(Error::contract("layernorm needs at least two entries per row"));
    }
    if eps <= 0.0 {
        return Err(Error::contract("layernorm eps must be positive"));
    }
    let mut out = Tensor::zeros(h.shape());
    layernorm_rows_into(h, eps, out.data_mut());
    Ok(out)
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    normal_cdf(x) + x * pdf
}

/// Exact-erf GELU, `x·Φ(x)`.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

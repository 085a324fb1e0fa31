//! Dense tensors, a reverse-mode tape and a finite-difference oracle.

mod finite_diff;
mod linalg;
mod tape;
mod tensor;

pub use finite_diff::finite_diff_check;
pub use linalg::{gelu, layernorm_fixed, matmul, softmax_rows};
pub(crate) use linalg::gemm;
pub use tape::{AttnLayout, Grads, Tape, Var};
pub use tensor::Tensor;

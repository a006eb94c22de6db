//! Dense tensor arithmetic with reverse-mode differentiation.
//!
//! Everything the transformer and the probe classifier need: a flat
//! row-major [`Tensor`], a set of 2-D kernels, a recording [`Tape`] whose
//! backward pass routes gradients only into grad-requiring tensors, and a
//! central finite-difference oracle used to validate the backward pass.

mod functions;
mod tape;
mod tensor;

pub use functions::{
    add, add_row_broadcast, causal_softmax, concat_cols, cross_entropy, cross_entropy_batch,
    finite_diff_gradient, gelu, layer_norm_rows, matmul, matmul_nt, matmul_tn, mse_mean, mul_elem, relative_error, relu,
    rows_range, scale, select_row, slice_cols, softmax, softmax_xent_mean, sum_all, sum_rows,
    transpose, LOG_CLAMP,
};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

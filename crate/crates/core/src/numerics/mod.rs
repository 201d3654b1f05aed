//! Small dense linear algebra with hand-written adjoints.

mod gradcheck;
mod matrix;
mod ops;
mod tape;

pub use gradcheck::{check_gradient, relative_error, GRADIENT_CHECK_FLOOR};
pub use matrix::{dot, Matrix};
pub use ops::{
    l2_normalize_rows, l2_normalize_rows_backward, l2_normalize_rows_with_norms, log_softmax_rows,
    logsumexp, matmul, matmul_backward, matmul_nt, matmul_tn, softmax_rows, softmax_rows_backward,
    DEFAULT_NORM_EPS,
};
pub use tape::{GradientTape, ParamId};

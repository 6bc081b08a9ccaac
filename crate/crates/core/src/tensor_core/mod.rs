//! Dense `f64` tensors and tape-based reverse-mode differentiation for the
//! operation set a residual network needs.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckEntry, GradCheckReport};
pub use tape::{softmax_rows, BatchNormOptions, Mode, PoolKind, RunningStats, Tape, Var};
pub use tensor::Tensor;

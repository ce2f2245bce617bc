//! Dense reverse-mode automatic differentiation over `f64`.

mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, param_grad_check, relative_error, GradCheckReport, FD_STEP, REL_FLOOR};
pub use param::Parameter;
pub use tape::{scatter_aggregate, stack, ElementwiseOp, Gradients, ReduceKind, Tape, Var};
pub use tensor::Tensor;

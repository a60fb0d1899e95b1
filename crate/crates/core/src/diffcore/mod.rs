//! Dense tensors, reverse-mode differentiation and the finite-difference
//! gradient checker.

mod gradcheck;
pub mod io;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_coords, relative_error, GradCheckReport};
pub use io::{AnyTensor, TensorFile};
pub use scalar::{DType, Scalar};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! The operator set is closed: element-wise arithmetic (with one-directional
//! broadcasting of the right operand), `sin`/`exp`/`log`/`abs`, `sigmoid`,
//! `relu`, cumulative sum, matmul, dilated 1-D convolution, linear upsampling,
//! STFT magnitude, reductions, L2 norm, dropout, slice/concat, affine
//! `scale_shift`, reshape and FFT causal convolution. Each one has a
//! finite-difference check in [`gradcheck`].

mod graph;
pub mod gradcheck;
mod params;
mod tensor;

pub use gradcheck::{gradient_check, OpKind};
pub use graph::{Gradients, Graph, Var};
pub use params::{Bound, ParamSet};
pub use tensor::Tensor;

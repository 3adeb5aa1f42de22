//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! The engine is intentionally small: a [`Tape`] records one closure per
//! differentiable operation, [`Var`] carries a shared value plus an optional
//! tape node, and [`Tape::backward`] replays the closures in reverse order.
//! Everything is generic over [`Real`] so the same model code runs in `f32`
//! for training and in `f64` for finite-difference checks.

mod gemm;
pub mod gradcheck;
mod ops;
mod param;
mod real;
mod tape;
mod tensor;

pub use gemm::gemm;
pub use ops::conv::{col2im, im2col, Conv2dSpec};
pub use ops::fft::{fft2_forward, ifft2_real_part};
pub use ops::BatchStats;

/// Numerically stable scalar helpers shared with kernels outside this crate.
pub mod scalar {
    pub use crate::ops::elementwise::{scalar_sigmoid as sigmoid, scalar_softplus as softplus};
}
pub use param::{Param, ParamId};
pub use real::Real;
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;

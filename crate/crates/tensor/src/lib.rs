//! Minimal reverse-mode automatic differentiation.
//!
//! Values live in [`Tensor`]s (row-major, dense). A [`Tape`] records every
//! operation applied to its [`Var`] handles and can replay them backwards to
//! accumulate gradients. Convolutions are lowered to im2col + GEMM so that a
//! single matrix-multiply kernel carries all heavy work.
//!
//! Everything is generic over [`Float`] so the same graph can be built in
//! `f32` for training and in `f64` for finite-difference checking.
//!
//! ```
//! use lvp_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[6.0]);
//! ```

pub mod check;
mod error;
mod float;
mod kernels;
mod ops;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use float::Float;
pub use kernels::{col2im, gemm, im2col, ConvGeometry};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

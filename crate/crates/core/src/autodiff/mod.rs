//! Dense tensors with reverse-mode differentiation, sized for the VAE.
//!
//! Values live in [`Tensor`]s; a [`Tape`] records operations while tracing
//! and [`Tape::backward`] walks them in reverse to produce [`Gradients`].
//! The heavy lifting (GEMM, im2col convolutions) is in [`kernels`] so that
//! inference can call it without a tape.

mod adam;
pub mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

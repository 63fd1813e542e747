//! Bit-exact, differentiable emulation of HLS `ap_fixed` arithmetic for
//! quantization-aware training.
//!
//! The crate is layered bottom-up:
//!
//! * [`fxcore`] - pure fixed-point formats, round/overflow modes and casting.
//! * [`autograd`] - a small reverse-mode tape with straight-through gradients.
//! * [`qfxlayers`] - differentiable casts, learnable binary points and the
//!   quantized element-wise operations built from them.
//! * [`khot`] - K-hot (few set bits) constants, shift-add multiplication and
//!   the multiply/shift/add cost model.
//! * [`baselines`] - integer quantization and the PTQ binary-point sweep.
//! * [`conformance`] - an exact integer oracle and golden-vector corpus.
//! * [`harness`] - desk-scale models, datasets and training loops.
//!
//! Data-parallel loops run on rayon when the `parallel` feature (default) is
//! enabled; see [`par::Exec`].

pub mod autograd;
pub mod baselines;
pub mod conformance;
mod error;
pub mod fxcore;
pub mod harness;
pub mod khot;
pub mod par;
pub mod qfxlayers;
pub mod tensor;

pub use error::{Error, Result};
pub use fxcore::{FxFormat, FxScalar, OverflowMode, RoundMode};
pub use tensor::Tensor;

//! Minimal reverse-mode automatic differentiation.
//!
//! Model code is written once against [`Ops`]. [`Tape`] records every
//! operation for [`Tape::backward`]; [`Eval`] runs the identical forward
//! kernels without recording anything (inference/deployment mode).
//!
//! `floor`, `ceil`, `round` and `trunc` use the straight-through estimator:
//! their derivative is defined as 1. `clamp` and the overflow step follow
//! [`ClampGrad`].

mod eval;
pub(crate) mod kernels;
mod optim;
mod tape;

pub use eval::{Eval, Record};
pub use kernels::StepKind;
pub use optim::{Adam, AdamConfig, Optimizer, Sgd};
pub use tape::{ClampGrad, GradHook, Gradients, Primitive, Tape, Var};

use std::collections::BTreeMap;

use crate::fxcore::{FxFormat, RoundMode};
use crate::{Result, Tensor};

/// Named trainable tensors.
pub type ParamStore = BTreeMap<String, Tensor>;

/// Differentiable tensor operations, implemented with and without a tape.
pub trait Ops {
    type T: Clone;

    /// A non-trainable input.
    fn constant(&mut self, t: Tensor) -> Self::T;
    /// A trainable leaf registered under `name`.
    fn param(&mut self, name: &str, t: &Tensor) -> Self::T;
    fn value<'a>(&'a self, x: &'a Self::T) -> &'a Tensor;
    /// Called with the input of every named cast site; a no-op by default.
    fn observe(&mut self, _site: &str, _x: &Self::T) {}

    fn add(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn div(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn matmul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;

    fn add_scalar(&mut self, x: &Self::T, c: f64) -> Result<Self::T>;
    fn mul_scalar(&mut self, x: &Self::T, c: f64) -> Result<Self::T>;
    fn neg(&mut self, x: &Self::T) -> Result<Self::T>;
    fn relu(&mut self, x: &Self::T) -> Result<Self::T>;
    fn exp(&mut self, x: &Self::T) -> Result<Self::T>;
    fn log(&mut self, x: &Self::T) -> Result<Self::T>;
    fn log2(&mut self, x: &Self::T) -> Result<Self::T>;
    /// `2^x` element-wise.
    fn pow2(&mut self, x: &Self::T) -> Result<Self::T>;
    fn sqrt(&mut self, x: &Self::T) -> Result<Self::T>;
    fn sum(&mut self, x: &Self::T) -> Result<Self::T>;
    fn mean(&mut self, x: &Self::T) -> Result<Self::T>;
    /// Per-channel mean over every leading axis: `[.., C] -> [C]`.
    fn channel_mean(&mut self, x: &Self::T) -> Result<Self::T>;
    fn clamp(&mut self, x: &Self::T, lo: f64, hi: f64) -> Result<Self::T>;
    fn step(&mut self, x: &Self::T, kind: StepKind) -> Result<Self::T>;
    /// Overflow handling of `fmt` applied to integer-valued input.
    fn overflow(&mut self, x: &Self::T, fmt: &FxFormat) -> Result<Self::T>;
    /// Mean negative log-likelihood of `labels` under row-wise softmax.
    fn cross_entropy(&mut self, logits: &Self::T, labels: &[usize]) -> Result<Self::T>;

    fn floor(&mut self, x: &Self::T) -> Result<Self::T> {
        self.step(x, StepKind::Floor)
    }

    fn ceil(&mut self, x: &Self::T) -> Result<Self::T> {
        self.step(x, StepKind::Ceil)
    }

    fn round_half_even(&mut self, x: &Self::T) -> Result<Self::T> {
        self.step(x, StepKind::RoundHalfEven)
    }

    fn trunc(&mut self, x: &Self::T) -> Result<Self::T> {
        self.step(x, StepKind::Trunc)
    }

    fn round_mode(&mut self, x: &Self::T, mode: RoundMode) -> Result<Self::T> {
        self.step(x, StepKind::Mode(mode))
    }
}

//! Differentiable fixed-point casting and the quantized element-wise
//! operations built on it.
//!
//! Every quantized op is "cast the operands, do real arithmetic, cast the
//! result", with an independent [`CastSite`] per operand. Casts are composed
//! from tape primitives (scale by `2^fbit`, round, overflow, scale back), so
//! gradients follow from the straight-through rules of [`crate::autograd`].

mod arith;
mod batchnorm;
mod cast;

pub use arith::{qfx_add, qfx_div, qfx_mul, qfx_residual, qfx_sub, BinarySites};
pub use batchnorm::{fold_batchnorm, fold_batchnorm_op, qfx_batchnorm, BatchNormSites};
pub use cast::{effective_ibit, effective_ibit_values, initial_ibit, qfx_cast, CastSite};

use serde::{Deserialize, Serialize};

use crate::fxcore::{FxFormat, OverflowMode, RoundMode};
use crate::{Result, Tensor};

/// Scope of a learnable binary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerTensor,
    /// One binary point per entry of the last (channel) axis.
    PerChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryPoint {
    Fixed(u32),
    Learnable(Granularity),
}

/// Cast contract of one site; the integer bits are either fixed or read each
/// forward from a trainable `I` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffCastConfig {
    pub wbit: u32,
    pub signed: bool,
    pub round: RoundMode,
    pub overflow: OverflowMode,
    pub binary_point: BinaryPoint,
}

impl DiffCastConfig {
    /// Fixed binary point, taking every mode from `fmt`.
    pub fn fixed(fmt: FxFormat) -> Self {
        Self {
            wbit: fmt.wbit(),
            signed: fmt.is_signed(),
            round: fmt.round(),
            overflow: fmt.overflow(),
            binary_point: BinaryPoint::Fixed(fmt.ibit()),
        }
    }

    /// Learnable binary point with the modes of `fmt` (its ibit is ignored).
    pub fn learnable(fmt: FxFormat, granularity: Granularity) -> Self {
        Self {
            binary_point: BinaryPoint::Learnable(granularity),
            ..Self::fixed(fmt)
        }
    }

    /// The concrete format at a given number of integer bits.
    pub fn format(&self, ibit: u32) -> Result<FxFormat> {
        FxFormat::new(self.wbit, ibit, self.signed, self.round, self.overflow)
    }
}

/// A trainable integer-bit count `I` for word length `wbit`. The forward pass
/// uses `round(clamp(I, 0, wbit))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableBinaryPoint {
    pub i: Tensor,
    pub wbit: u32,
}

impl LearnableBinaryPoint {
    /// Starts with enough integer bits to cover `x` without saturation.
    pub fn init_from(x: &Tensor, wbit: u32, signed: bool, granularity: Granularity) -> Self {
        Self {
            i: initial_ibit(x, wbit, signed, granularity),
            wbit,
        }
    }

    pub fn granularity(&self) -> Granularity {
        if self.i.shape().is_empty() {
            Granularity::PerTensor
        } else {
            Granularity::PerChannel
        }
    }

    /// Effective integer bits, one per tensor or per channel.
    pub fn effective(&self) -> Vec<u32> {
        effective_ibit_values(&self.i, self.wbit)
    }
}

#[cfg(test)]
mod tests;

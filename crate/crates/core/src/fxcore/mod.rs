//! Pure, bit-exact fixed-point formats and casting.
//!
//! `cast(x) = overflow(round(x * 2^fbit)) * 2^-fbit`, with rounding applied
//! before overflow. Everything here is a pure function over `f64`; `wbit` is
//! capped at 32 so every scaled value and every tie test is exact.

mod cast;
mod format;
mod mode;

pub use cast::{
    cast, cast_tensor, cast_tensor_with, from_raw, overflow_scalar, round_scalar, to_raw, FxScalar,
};
pub(crate) use cast::{overflow_real, round_unchecked};
pub(crate) use format::pow2i;
pub use format::{FxFormat, MAX_WBIT};
pub use mode::{valid_mode_pairs, OverflowMode, RoundMode};

//! K-hot fixed-point constants: values with at most `K` set bits, so that a
//! multiplication becomes at most `K` shifts and adds.
//!
//! Encoding is greedy MSB-first on the magnitude after a fixed-point cast;
//! the sign is kept separately and folded into the adds.

mod code;
mod cost;
mod layer;

pub use code::{
    keep_top_bits, khot_decode, khot_encode, khot_mul, khot_mul_tensor, KHotCode, ShiftAdd,
};
pub use cost::{cost_report, CostReport, CostSite, OpCounts, SiteKind};
pub use layer::{khot_affine, khot_affine_op, qfx_khot_cast, KHotConfig, KHotSite};

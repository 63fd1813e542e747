use serde::{Deserialize, Serialize};

use crate::fxcore::{self, pow2i, FxFormat, FxScalar, MAX_WBIT};
use crate::{Error, Result, Tensor};

/// `sign * sum(2^p for p in positions)`, positions strictly decreasing and
/// already offset by `-fbit`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KHotCode {
    pub sign: i8,
    pub positions: Vec<i32>,
    pub fbit: u32,
    pub k: usize,
}

impl KHotCode {
    pub fn new(sign: i8, positions: Vec<i32>, fbit: u32, k: usize) -> Result<Self> {
        if sign != 1 && sign != -1 {
            return Err(Error::Domain(format!("sign must be +1 or -1, got {sign}")));
        }
        if positions.len() > k {
            return Err(Error::Domain(format!(
                "{} positions exceed budget {k}",
                positions.len()
            )));
        }
        if positions.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Domain(format!(
                "positions {positions:?} not strictly decreasing"
            )));
        }
        if positions
            .iter()
            .any(|&p| p < -(fbit as i32) || p > MAX_WBIT as i32)
        {
            return Err(Error::Domain(format!(
                "positions {positions:?} outside the format"
            )));
        }
        Ok(Self {
            sign,
            positions,
            fbit,
            k,
        })
    }

    pub fn zero(fbit: u32, k: usize) -> Self {
        Self {
            sign: 1,
            positions: Vec::new(),
            fbit,
            k,
        }
    }

    pub fn value(&self) -> f64 {
        khot_decode(self)
    }

    /// Smallest kept power, if any.
    pub fn last_position(&self) -> Option<i32> {
        self.positions.last().copied()
    }
}

/// Exact `floor(log2(v))` for positive finite `v`.
fn floor_log2(v: f64) -> i32 {
    if !v.is_normal() {
        return floor_log2(v * pow2i(64)) - 64;
    }
    ((v.to_bits() >> 52) & 0x7ff) as i32 - 1023
}

/// Greedy MSB-first decomposition of a nonnegative grid value into at most
/// `k` powers of two. Stops early once the residual is zero.
fn greedy(v: f64, k: usize) -> Vec<i32> {
    let mut residual = v;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        if residual <= 0.0 {
            break;
        }
        let p = floor_log2(residual);
        out.push(p);
        residual -= pow2i(p);
    }
    out
}

/// Keeps the `k` most significant set bits of `|v|`, preserving the sign.
pub fn keep_top_bits(v: f64, k: usize) -> f64 {
    let mag = greedy(v.abs(), k).into_iter().map(pow2i).sum::<f64>();
    if v < 0.0 {
        -mag
    } else {
        mag
    }
}

fn magnitude_format(w: u32, ibit: u32) -> Result<FxFormat> {
    FxFormat::unsigned(w, ibit)
}

/// K-hot encoding of `x`: cast `|x|` to an unsigned `w`-bit format with
/// `round(clamp(ibit, 0, w))` integer bits, then take the top `k` set bits.
pub fn khot_encode(x: f64, w: u32, ibit: f64, k: usize) -> Result<KHotCode> {
    if k == 0 {
        return Err(Error::Domain("K-hot budget must be at least 1".into()));
    }
    if !ibit.is_finite() {
        return Err(Error::NonFinite {
            index: 0,
            value: ibit,
        });
    }
    let i_hat = ibit.clamp(0.0, w as f64).round_ties_even() as u32;
    let fmt = magnitude_format(w, i_hat)?;
    let q = fxcore::cast(x.abs(), &fmt)?;
    Ok(KHotCode {
        sign: if x < 0.0 { -1 } else { 1 },
        positions: greedy(q, k),
        fbit: fmt.fbit(),
        k,
    })
}

pub fn khot_decode(c: &KHotCode) -> f64 {
    let mag: f64 = c.positions.iter().map(|&p| pow2i(p)).sum();
    if c.sign < 0 {
        -mag
    } else {
        mag
    }
}

/// Exact product as an integer over `2^fbit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftAdd {
    pub raw: i128,
    pub fbit: u32,
}

impl ShiftAdd {
    pub fn value(&self) -> f64 {
        self.raw as f64 * pow2i(-(self.fbit as i32))
    }
}

/// `c * x` by shifting and adding the raw integer of `x`; no multiplier.
pub fn khot_mul(c: &KHotCode, x: &FxScalar) -> ShiftAdd {
    let raw = x.raw as i128;
    let mut acc: i128 = 0;
    for &p in &c.positions {
        let term = raw << (p + c.fbit as i32) as u32;
        if c.sign < 0 {
            acc -= term;
        } else {
            acc += term;
        }
    }
    ShiftAdd {
        raw: acc,
        fbit: x.format.fbit() + c.fbit,
    }
}

/// Per-channel shift-add on real values: `y[.., c] = codes[c] * x[.., c]`.
pub fn khot_mul_tensor(codes: &[KHotCode], x: &Tensor) -> Result<Tensor> {
    let c = codes.len();
    if x.channels() != c && !(c == 1 && x.is_scalar()) {
        return Err(Error::Shape(format!(
            "{c} codes for {} channels",
            x.channels()
        )));
    }
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let code = &codes[i % c];
            code.positions.iter().fold(0.0, |acc, &p| {
                let term = v * pow2i(p);
                if code.sign < 0 {
                    acc - term
                } else {
                    acc + term
                }
            }) + 0.0
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

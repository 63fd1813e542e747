use serde::{Deserialize, Serialize};

use super::format::pow2i;
use super::{FxFormat, OverflowMode, RoundMode};
use crate::par::{self, Exec};
use crate::{Error, Result, Tensor};

/// Exact integer view of a representable value: `value = raw * 2^-fbit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FxScalar {
    pub raw: i64,
    pub format: FxFormat,
}

fn check_finite(index: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { index, value })
    }
}

// floor(x + 0.5) and ceil(x - 0.5) evaluated exactly. `x - floor(x)` is exact
// whenever it can land near 0.5, so the comparison decides the tie correctly
// even where the f64 sum `x + 0.5` would round.
fn floor_plus_half(x: f64) -> f64 {
    let f = x.floor();
    if x - f >= 0.5 {
        f + 1.0
    } else {
        f
    }
}

fn ceil_minus_half(x: f64) -> f64 {
    let c = x.ceil();
    if c - x >= 0.5 {
        c - 1.0
    } else {
        c
    }
}

pub(crate) fn round_unchecked(x: f64, mode: RoundMode) -> f64 {
    match mode {
        RoundMode::Rnd => floor_plus_half(x),
        RoundMode::RndZero => {
            if x < 0.0 {
                floor_plus_half(x)
            } else {
                ceil_minus_half(x)
            }
        }
        RoundMode::RndMinInf => ceil_minus_half(x),
        RoundMode::RndInf => {
            if x < 0.0 {
                ceil_minus_half(x)
            } else {
                floor_plus_half(x)
            }
        }
        RoundMode::RndConv => x.round_ties_even(),
        RoundMode::Trn => x.floor(),
        RoundMode::TrnZero => x.trunc(),
    }
}

/// Maps a finite real to an integer-valued real under `mode`.
pub fn round_scalar(x: f64, mode: RoundMode) -> Result<f64> {
    check_finite(0, x)?;
    Ok(round_unchecked(x, mode) + 0.0)
}

/// Overflow handling on an integer-valued real (possibly infinite, which
/// stands for an integer too large for any format).
pub(crate) fn overflow_real(v: f64, fmt: &FxFormat) -> f64 {
    let lo = fmt.min_raw() as f64;
    let hi = fmt.max_raw() as f64;
    match fmt.overflow() {
        OverflowMode::Sat => v.max(lo).min(hi),
        OverflowMode::SatZero => {
            if lo <= v && v <= hi {
                v
            } else {
                0.0
            }
        }
        OverflowMode::SatSymSigned => v.max(-hi).min(hi),
        OverflowMode::SatSymUnsigned => v.max(0.0).min(hi),
        OverflowMode::WrapSigned | OverflowMode::WrapUnsigned => {
            let rho = fmt.modulus() as f64;
            // An infinite scaled value is a multiple of every power of two we support.
            let r = if v.is_finite() {
                v.rem_euclid(rho)
            } else {
                0.0
            };
            if fmt.overflow() == OverflowMode::WrapSigned && r > hi {
                r - rho
            } else {
                r
            }
        }
    }
}

/// Table-driven overflow on an exact integer.
pub fn overflow_scalar(v: i64, fmt: &FxFormat) -> i64 {
    let (lo, hi) = (fmt.min_raw(), fmt.max_raw());
    match fmt.overflow() {
        OverflowMode::Sat => v.clamp(lo, hi),
        OverflowMode::SatZero => {
            if (lo..=hi).contains(&v) {
                v
            } else {
                0
            }
        }
        OverflowMode::SatSymSigned => v.clamp(-hi, hi),
        OverflowMode::SatSymUnsigned => v.clamp(0, hi),
        OverflowMode::WrapSigned => {
            let r = v.rem_euclid(fmt.modulus());
            if r > hi {
                r - fmt.modulus()
            } else {
                r
            }
        }
        OverflowMode::WrapUnsigned => v.rem_euclid(fmt.modulus()),
    }
}

pub(crate) fn cast_unchecked(x: f64, fmt: &FxFormat) -> f64 {
    let fbit = fmt.fbit() as i32;
    let scaled = x * pow2i(fbit);
    let rounded = round_unchecked(scaled, fmt.round());
    let kept = overflow_real(rounded, fmt);
    // `+ 0.0` folds -0.0 into +0.0 so results equal raw * 2^-fbit bitwise.
    kept * pow2i(-fbit) + 0.0
}

/// Casts one finite real into `fmt`.
pub fn cast(x: f64, fmt: &FxFormat) -> Result<f64> {
    check_finite(0, x)?;
    Ok(cast_unchecked(x, fmt))
}

/// Element-wise [`cast`] using the default execution strategy.
pub fn cast_tensor(x: &Tensor, fmt: &FxFormat) -> Result<Tensor> {
    cast_tensor_with(x, fmt, Exec::default())
}

const PAR_THRESHOLD: usize = 1 << 14;

pub fn cast_tensor_with(x: &Tensor, fmt: &FxFormat, exec: Exec) -> Result<Tensor> {
    if let Some((i, &v)) = x.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index: i, value: v });
    }
    let exec = if x.len() < PAR_THRESHOLD {
        Exec::Sequential
    } else {
        exec
    };
    let data = par::map(exec, x.data(), |&v| cast_unchecked(v, fmt));
    Tensor::new(x.shape().to_vec(), data)
}

/// Exact integer view of a value that is already representable in `fmt`.
pub fn to_raw(x: f64, fmt: &FxFormat) -> Result<FxScalar> {
    let not_rep = || Error::NotRepresentable {
        value: x,
        format: fmt.to_string(),
    };
    check_finite(0, x).map_err(|_| not_rep())?;
    if cast_unchecked(x, fmt).to_bits() != (x + 0.0).to_bits() {
        return Err(not_rep());
    }
    let raw = x * pow2i(fmt.fbit() as i32);
    Ok(FxScalar {
        raw: raw as i64,
        format: *fmt,
    })
}

pub fn from_raw(s: &FxScalar) -> f64 {
    s.raw as f64 * s.format.lsb() + 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fmt(w: u32, i: u32, signed: bool, r: RoundMode, o: OverflowMode) -> FxFormat {
        FxFormat::new(w, i, signed, r, o).unwrap()
    }

    #[test]
    fn round_examples() {
        assert_eq!(round_scalar(2.5, RoundMode::Rnd).unwrap(), 3.0);
        assert_eq!(round_scalar(2.5, RoundMode::RndConv).unwrap(), 2.0);
        assert_eq!(round_scalar(-2.4, RoundMode::Trn).unwrap(), -3.0);
        assert_eq!(round_scalar(-2.4, RoundMode::TrnZero).unwrap(), -2.0);
        for m in RoundMode::ALL {
            assert_eq!(round_scalar(7.0, m).unwrap(), 7.0);
        }
    }

    #[test]
    fn round_ties_per_mode() {
        use RoundMode::*;
        // (mode, round(2.5), round(-2.5), round(0.5), round(-0.5))
        let table = [
            (Rnd, 3.0, -2.0, 1.0, 0.0),
            (RndZero, 2.0, -2.0, 0.0, 0.0),
            (RndMinInf, 2.0, -3.0, 0.0, -1.0),
            (RndInf, 3.0, -3.0, 1.0, -1.0),
            (RndConv, 2.0, -2.0, 0.0, 0.0),
            (Trn, 2.0, -3.0, 0.0, -1.0),
            (TrnZero, 2.0, -2.0, 0.0, 0.0),
        ];
        for (m, a, b, c, d) in table {
            assert_eq!(round_scalar(2.5, m).unwrap(), a, "{m} 2.5");
            assert_eq!(round_scalar(-2.5, m).unwrap(), b, "{m} -2.5");
            assert_eq!(round_scalar(0.5, m).unwrap(), c, "{m} 0.5");
            assert_eq!(round_scalar(-0.5, m).unwrap(), d, "{m} -0.5");
        }
    }

    #[test]
    fn round_just_below_half() {
        // 0.49999999999999994 + 0.5 rounds to 1.0 in f64; the exact result is 0.
        let x = 0.5f64.next_down();
        assert_eq!(round_scalar(x, RoundMode::Rnd).unwrap(), 0.0);
        assert_eq!(round_scalar(-x, RoundMode::RndMinInf).unwrap(), 0.0);
    }

    #[test]
    fn round_rejects_non_finite() {
        for v in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            assert!(matches!(
                round_scalar(v, RoundMode::Rnd),
                Err(Error::NonFinite { .. })
            ));
            assert!(cast(v, &FxFormat::signed(8, 4).unwrap()).is_err());
        }
    }

    #[test]
    fn overflow_examples() {
        use OverflowMode::*;
        let s4 = |o| fmt(4, 4, true, RoundMode::Rnd, o);
        assert_eq!(overflow_scalar(9, &s4(WrapSigned)), -7);
        assert_eq!(overflow_scalar(9, &s4(Sat)), 7);
        assert_eq!(overflow_scalar(9, &s4(SatZero)), 0);
        assert_eq!(overflow_scalar(-8, &s4(SatSymSigned)), -7);
        for o in [Sat, SatZero, SatSymSigned, WrapSigned] {
            assert_eq!(overflow_scalar(3, &s4(o)), 3);
        }
        let u4 = |o| fmt(4, 4, false, RoundMode::Rnd, o);
        assert_eq!(overflow_scalar(-1, &u4(WrapUnsigned)), 15);
        assert_eq!(overflow_scalar(-1, &u4(SatSymUnsigned)), 0);
        assert_eq!(overflow_scalar(17, &u4(WrapUnsigned)), 1);
    }

    #[test]
    fn cast_examples() {
        use OverflowMode::*;
        use RoundMode::*;
        for r in RoundMode::ALL {
            assert_eq!(cast(13.3125, &fmt(8, 4, false, r, Sat)).unwrap(), 13.3125);
        }
        // Signed fx8.4 tops out at 127/16.
        assert_eq!(
            cast(13.3125, &FxFormat::signed(8, 4).unwrap()).unwrap(),
            7.9375
        );
        // 0.3 * 8 = 2.4 -> floor(2.9) = 2 -> 2/8
        assert_eq!(cast(0.3, &fmt(4, 1, true, Rnd, Sat)).unwrap(), 0.25);
        // 1.2 * 8 = 9.6 -> 9 -> 9 mod 16 = 9 > 7 -> -7 -> -7/8
        assert_eq!(
            cast(1.2, &fmt(4, 1, true, Trn, WrapSigned)).unwrap(),
            -0.875
        );
        for signed in [true, false] {
            for (r, o) in super::super::valid_mode_pairs(signed) {
                let z = cast(0.0, &fmt(5, 2, signed, r, o)).unwrap();
                assert_eq!(z.to_bits(), 0.0f64.to_bits());
            }
        }
    }

    #[test]
    fn negative_zero_is_normalized() {
        let f = fmt(8, 4, true, RoundMode::TrnZero, OverflowMode::Sat);
        assert_eq!(cast(-0.01, &f).unwrap().to_bits(), 0u64);
        assert_eq!(cast(-0.0, &f).unwrap().to_bits(), 0u64);
    }

    #[test]
    fn huge_inputs() {
        let f = fmt(8, 4, true, RoundMode::Rnd, OverflowMode::WrapSigned);
        assert_eq!(cast(f64::MAX, &f).unwrap(), 0.0);
        let s = fmt(8, 4, true, RoundMode::Rnd, OverflowMode::Sat);
        assert_eq!(cast(f64::MAX, &s).unwrap(), 7.9375);
        assert_eq!(cast(-f64::MAX, &s).unwrap(), -8.0);
    }

    #[test]
    fn tensor_cast() {
        let f = FxFormat::unsigned(8, 4).unwrap();
        let t = Tensor::vector(vec![0.0, 13.3125]);
        assert_eq!(cast_tensor(&t, &f).unwrap().data(), &[0.0, 13.3125]);
        let e = Tensor::vector(vec![]);
        assert!(cast_tensor(&e, &f).unwrap().is_empty());
        let g = FxFormat::signed(4, 1).unwrap();
        let t = Tensor::vector(vec![0.3, 1.2]);
        assert_eq!(cast_tensor(&t, &g).unwrap().data(), &[0.25, 0.875]);
        let t = Tensor::vector(vec![0.3, f64::NAN, 1.0]);
        assert!(matches!(
            cast_tensor(&t, &g),
            Err(Error::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn tensor_cast_strategies_agree() {
        let f = FxFormat::signed(10, 3).unwrap();
        let data: Vec<f64> = (0..40_000).map(|i| (i as f64 * 0.37).sin() * 9.0).collect();
        let t = Tensor::vector(data);
        let a = cast_tensor_with(&t, &f, Exec::Sequential).unwrap();
        let b = cast_tensor_with(&t, &f, Exec::Parallel).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn raw_views() {
        let u = FxFormat::unsigned(8, 4).unwrap();
        assert_eq!(to_raw(13.3125, &u).unwrap().raw, 213);
        assert_eq!(
            to_raw(0.0, &FxFormat::signed(3, 1).unwrap()).unwrap().raw,
            0
        );
        let s = FxFormat::signed(4, 1).unwrap();
        let r = to_raw(-0.875, &s).unwrap();
        assert_eq!(r.raw, -7);
        assert_eq!(from_raw(&r), -0.875);
        assert!(matches!(
            to_raw(0.3, &s),
            Err(Error::NotRepresentable { .. })
        ));
        assert!(to_raw(1.0, &s).is_err());
    }

    #[test]
    fn sign_symmetry() {
        use RoundMode::*;
        let ties = [0.5, 1.5, 2.5, 3.5, 1.25, 7.75];
        for m in [RndConv, RndZero, RndInf, TrnZero] {
            for &t in &ties {
                assert_eq!(
                    round_scalar(-t, m).unwrap(),
                    -round_scalar(t, m).unwrap(),
                    "{m} {t}"
                );
            }
        }
        // Asymmetric modes break symmetry at ties in at least one direction.
        for m in [Rnd, RndMinInf, Trn] {
            assert!(ties
                .iter()
                .any(|&t| round_scalar(-t, m).unwrap() != -round_scalar(t, m).unwrap()));
        }
    }

    fn any_format() -> impl Strategy<Value = FxFormat> {
        (1u32..=16, any::<bool>(), 0usize..7, 0usize..4).prop_flat_map(|(w, signed, r, o)| {
            (0..=w).prop_map(move |i| {
                let pairs = super::super::valid_mode_pairs(signed);
                let (rm, om) = pairs[r * 4 + o];
                FxFormat::new(w, i, signed, rm, om).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn idempotent(x in -1e6f64..1e6, f in any_format()) {
            let y = cast(x, &f).unwrap();
            prop_assert_eq!(cast(y, &f).unwrap().to_bits(), y.to_bits());
        }

        #[test]
        fn representable(x in -1e6f64..1e6, f in any_format()) {
            let y = cast(x, &f).unwrap();
            let raw = y * pow2i(f.fbit() as i32);
            prop_assert_eq!(raw.fract(), 0.0);
            prop_assert!(raw >= f.min_raw() as f64 && raw <= f.max_raw() as f64);
            prop_assert_eq!(from_raw(&to_raw(y, &f).unwrap()).to_bits(), y.to_bits());
        }

        #[test]
        fn integers_fixed_by_every_round_mode(k in -1_000_000i64..1_000_000) {
            for m in RoundMode::ALL {
                prop_assert_eq!(round_scalar(k as f64, m).unwrap(), k as f64);
            }
        }

        #[test]
        fn overflow_modes_agree_in_range(f in any_format(), t in 0.0f64..1.0) {
            let v = f.min_raw() + ((f.max_raw() - f.min_raw()) as f64 * t) as i64;
            // symmetric saturation also moves min_raw; exclude it
            prop_assume!(v != f.min_raw() || !f.is_signed());
            for o in OverflowMode::ALL.into_iter().filter(|o| o.allows(f.is_signed())) {
                let g = f.with_overflow(o).unwrap();
                prop_assert_eq!(overflow_scalar(v, &g), v);
                prop_assert_eq!(overflow_real(v as f64, &g), v as f64);
            }
        }
    }
}

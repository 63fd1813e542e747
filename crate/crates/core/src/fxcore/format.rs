use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{OverflowMode, RoundMode};
use crate::{Error, Result};

pub const MAX_WBIT: u32 = 32;

/// A complete `ap_fixed`/`ap_ufixed` casting contract.
///
/// Text form: `fx<w>.<i><s|u>:<ROUND>:<OVERFLOW>`, e.g. `fx8.4s:RND:SAT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FxFormat {
    wbit: u32,
    ibit: u32,
    signed: bool,
    round: RoundMode,
    overflow: OverflowMode,
}

impl FxFormat {
    pub fn new(
        wbit: u32,
        ibit: u32,
        signed: bool,
        round: RoundMode,
        overflow: OverflowMode,
    ) -> Result<Self> {
        if wbit == 0 || wbit > MAX_WBIT {
            return Err(Error::InvalidFormat(format!(
                "word length {wbit} outside 1..={MAX_WBIT}"
            )));
        }
        if ibit > wbit {
            return Err(Error::InvalidFormat(format!(
                "integer bits {ibit} exceed word length {wbit}"
            )));
        }
        if !overflow.allows(signed) {
            return Err(Error::SignednessMismatch {
                mode: overflow,
                signed,
            });
        }
        Ok(Self {
            wbit,
            ibit,
            signed,
            round,
            overflow,
        })
    }

    /// Signed format with the default RND/SAT modes.
    pub fn signed(wbit: u32, ibit: u32) -> Result<Self> {
        Self::new(wbit, ibit, true, RoundMode::Rnd, OverflowMode::Sat)
    }

    /// Unsigned format with the default RND/SAT modes.
    pub fn unsigned(wbit: u32, ibit: u32) -> Result<Self> {
        Self::new(wbit, ibit, false, RoundMode::Rnd, OverflowMode::Sat)
    }

    pub fn with_ibit(self, ibit: u32) -> Result<Self> {
        Self::new(self.wbit, ibit, self.signed, self.round, self.overflow)
    }

    pub fn with_round(self, round: RoundMode) -> Self {
        Self { round, ..self }
    }

    pub fn with_overflow(self, overflow: OverflowMode) -> Result<Self> {
        Self::new(self.wbit, self.ibit, self.signed, self.round, overflow)
    }

    pub fn wbit(&self) -> u32 {
        self.wbit
    }

    pub fn ibit(&self) -> u32 {
        self.ibit
    }

    pub fn fbit(&self) -> u32 {
        self.wbit - self.ibit
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn round(&self) -> RoundMode {
        self.round
    }

    pub fn overflow(&self) -> OverflowMode {
        self.overflow
    }

    /// Smallest raw integer: `-2^(w-1)` signed, `0` unsigned.
    pub fn min_raw(&self) -> i64 {
        if self.signed {
            -(1i64 << (self.wbit - 1))
        } else {
            0
        }
    }

    /// Largest raw integer: `2^(w-1)-1` signed, `2^w-1` unsigned.
    pub fn max_raw(&self) -> i64 {
        if self.signed {
            (1i64 << (self.wbit - 1)) - 1
        } else {
            (1i64 << self.wbit) - 1
        }
    }

    /// Wrap modulus `max_raw - min_raw + 1 = 2^w`.
    pub fn modulus(&self) -> i64 {
        1i64 << self.wbit
    }

    /// Weight of one raw unit, `2^-fbit`.
    pub fn lsb(&self) -> f64 {
        pow2i(-(self.fbit() as i32))
    }

    pub fn min_value(&self) -> f64 {
        self.min_raw() as f64 * self.lsb()
    }

    pub fn max_value(&self) -> f64 {
        self.max_raw() as f64 * self.lsb()
    }
}

/// Exact `2^e` for exponents in the normal range.
pub(crate) fn pow2i(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((1023 + e) as u64) << 52)
}

impl fmt::Display for FxFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "fx{}.{}{}:{}:{}",
            self.wbit,
            self.ibit,
            if self.signed { 's' } else { 'u' },
            self.round,
            self.overflow
        )
    }
}

impl FromStr for FxFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidFormat(format!(
                "expected fx<w>.<i><s|u>:<ROUND>:<OVERFLOW>, got `{s}`"
            ))
        };
        let mut parts = s.split(':');
        let head = parts.next().ok_or_else(bad)?;
        let round: RoundMode = parts.next().ok_or_else(bad)?.parse()?;
        let overflow: OverflowMode = parts.next().ok_or_else(bad)?.parse()?;
        if parts.next().is_some() {
            return Err(bad());
        }
        let body = head.strip_prefix("fx").ok_or_else(bad)?;
        let (body, signed) = match body.as_bytes().last() {
            Some(b's') => (&body[..body.len() - 1], true),
            Some(b'u') => (&body[..body.len() - 1], false),
            _ => return Err(bad()),
        };
        let (w, i) = body.split_once('.').ok_or_else(bad)?;
        let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
        if !digits(w) || !digits(i) {
            return Err(bad());
        }
        let wbit = w.parse().map_err(|_| bad())?;
        let ibit = i.parse().map_err(|_| bad())?;
        FxFormat::new(wbit, ibit, signed, round, overflow)
    }
}

impl TryFrom<String> for FxFormat {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FxFormat> for String {
    fn from(f: FxFormat) -> String {
        f.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        let s = FxFormat::signed(4, 1).unwrap();
        assert_eq!((s.min_raw(), s.max_raw(), s.modulus()), (-8, 7, 16));
        assert_eq!(s.fbit(), 3);
        assert_eq!(s.lsb(), 0.125);
        let u = FxFormat::unsigned(4, 4).unwrap();
        assert_eq!((u.min_raw(), u.max_raw()), (0, 15));
        let w32 = FxFormat::signed(32, 0).unwrap();
        assert_eq!(w32.max_raw(), i32::MAX as i64);
    }

    #[test]
    fn rejects_invalid() {
        assert!(FxFormat::signed(0, 0).is_err());
        assert!(FxFormat::signed(33, 0).is_err());
        assert!(FxFormat::signed(4, 5).is_err());
        assert!(matches!(
            FxFormat::new(8, 4, false, RoundMode::Rnd, OverflowMode::WrapSigned),
            Err(Error::SignednessMismatch { .. })
        ));
        assert!(matches!(
            FxFormat::new(8, 4, true, RoundMode::Rnd, OverflowMode::SatSymUnsigned),
            Err(Error::SignednessMismatch { .. })
        ));
    }

    #[test]
    fn edge_bit_splits_are_legal() {
        assert_eq!(FxFormat::signed(8, 8).unwrap().fbit(), 0);
        assert_eq!(FxFormat::signed(8, 0).unwrap().fbit(), 8);
    }

    #[test]
    fn text_form() {
        let f: FxFormat = "fx8.4s:RND:SAT".parse().unwrap();
        assert_eq!(f, FxFormat::signed(8, 4).unwrap());
        assert_eq!(f.to_string(), "fx8.4s:RND:SAT");
        let g: FxFormat = "fx12.0u:TRN_ZERO:WRAP_UNSIGNED".parse().unwrap();
        assert_eq!(g.to_string(), "fx12.0u:TRN_ZERO:WRAP_UNSIGNED");
        for bad in [
            "fx8.4:RND:SAT",
            "fx8.4s:RND",
            "8.4s:RND:SAT",
            "fx8.4s:RND:SAT:x",
            "fx.4s:RND:SAT",
            "fx8.+4s:RND:SAT",
            "fx8.4u:RND:WRAP_SIGNED",
        ] {
            assert!(bad.parse::<FxFormat>().is_err(), "{bad}");
        }
    }

    #[test]
    fn serde_uses_text_form() {
        let f = FxFormat::unsigned(6, 2).unwrap();
        let j = serde_json::to_string(&f).unwrap();
        assert_eq!(j, "\"fx6.2u:RND:SAT\"");
        assert_eq!(serde_json::from_str::<FxFormat>(&j).unwrap(), f);
    }
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rounding modes of `ap_fixed`, applied to the value already scaled by
/// `2^fbit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoundMode {
    /// Round half up: `floor(x + 0.5)`.
    #[serde(rename = "RND")]
    Rnd,
    /// Round half toward zero.
    #[serde(rename = "RND_ZERO")]
    RndZero,
    /// Round half down: `ceil(x - 0.5)`.
    #[serde(rename = "RND_MIN_INF")]
    RndMinInf,
    /// Round half away from zero.
    #[serde(rename = "RND_INF")]
    RndInf,
    /// Round half to even.
    #[serde(rename = "RND_CONV")]
    RndConv,
    /// Truncate toward minus infinity (`floor`).
    #[serde(rename = "TRN")]
    Trn,
    /// Truncate toward zero.
    #[serde(rename = "TRN_ZERO")]
    TrnZero,
}

impl RoundMode {
    pub const ALL: [RoundMode; 7] = [
        RoundMode::Rnd,
        RoundMode::RndZero,
        RoundMode::RndMinInf,
        RoundMode::RndInf,
        RoundMode::RndConv,
        RoundMode::Trn,
        RoundMode::TrnZero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RoundMode::Rnd => "RND",
            RoundMode::RndZero => "RND_ZERO",
            RoundMode::RndMinInf => "RND_MIN_INF",
            RoundMode::RndInf => "RND_INF",
            RoundMode::RndConv => "RND_CONV",
            RoundMode::Trn => "TRN",
            RoundMode::TrnZero => "TRN_ZERO",
        }
    }
}

impl fmt::Display for RoundMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RoundMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RoundMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidFormat(format!("unknown round mode `{s}`")))
    }
}

/// Overflow modes of `ap_fixed`, applied to the rounded integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OverflowMode {
    #[serde(rename = "SAT")]
    Sat,
    #[serde(rename = "SAT_ZERO")]
    SatZero,
    #[serde(rename = "SAT_SYM_SIGNED")]
    SatSymSigned,
    #[serde(rename = "SAT_SYM_UNSIGNED")]
    SatSymUnsigned,
    #[serde(rename = "WRAP_SIGNED")]
    WrapSigned,
    #[serde(rename = "WRAP_UNSIGNED")]
    WrapUnsigned,
}

impl OverflowMode {
    pub const ALL: [OverflowMode; 6] = [
        OverflowMode::Sat,
        OverflowMode::SatZero,
        OverflowMode::SatSymSigned,
        OverflowMode::SatSymUnsigned,
        OverflowMode::WrapSigned,
        OverflowMode::WrapUnsigned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OverflowMode::Sat => "SAT",
            OverflowMode::SatZero => "SAT_ZERO",
            OverflowMode::SatSymSigned => "SAT_SYM_SIGNED",
            OverflowMode::SatSymUnsigned => "SAT_SYM_UNSIGNED",
            OverflowMode::WrapSigned => "WRAP_SIGNED",
            OverflowMode::WrapUnsigned => "WRAP_UNSIGNED",
        }
    }

    /// Whether the mode may be paired with a format of the given signedness.
    pub fn allows(self, signed: bool) -> bool {
        match self {
            OverflowMode::SatSymSigned | OverflowMode::WrapSigned => signed,
            OverflowMode::SatSymUnsigned | OverflowMode::WrapUnsigned => !signed,
            OverflowMode::Sat | OverflowMode::SatZero => true,
        }
    }

    /// True for modes whose out-of-range behaviour is modular.
    pub fn is_wrap(self) -> bool {
        matches!(self, OverflowMode::WrapSigned | OverflowMode::WrapUnsigned)
    }
}

impl fmt::Display for OverflowMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OverflowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OverflowMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidFormat(format!("unknown overflow mode `{s}`")))
    }
}

/// Every (round, overflow) pair valid for the given signedness: 7 x 4 = 28.
pub fn valid_mode_pairs(signed: bool) -> Vec<(RoundMode, OverflowMode)> {
    RoundMode::ALL
        .into_iter()
        .flat_map(|r| {
            OverflowMode::ALL
                .into_iter()
                .filter(move |o| o.allows(signed))
                .map(move |o| (r, o))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in RoundMode::ALL {
            assert_eq!(m.name().parse::<RoundMode>().unwrap(), m);
        }
        for m in OverflowMode::ALL {
            assert_eq!(m.name().parse::<OverflowMode>().unwrap(), m);
        }
        assert!("RND_HALF".parse::<RoundMode>().is_err());
        assert!("SATURATE".parse::<OverflowMode>().is_err());
    }

    #[test]
    fn twenty_eight_pairs_each() {
        assert_eq!(valid_mode_pairs(true).len(), 28);
        assert_eq!(valid_mode_pairs(false).len(), 28);
        assert!(valid_mode_pairs(true)
            .iter()
            .all(|(_, o)| *o != OverflowMode::WrapUnsigned && *o != OverflowMode::SatSymUnsigned));
    }
}

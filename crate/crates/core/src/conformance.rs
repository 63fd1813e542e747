//! Exact integer-arithmetic oracle for fixed-point casting, and a golden
//! vector corpus for differential testing.
//!
//! The oracle never touches floating-point rounding: it splits the input into
//! significand and exponent, scales by `2^fbit` with integer shifts, and
//! applies the round and overflow rules with integer comparisons only.
//!
//! Corpus files are JSON lines; every real is stored as the hexadecimal bit
//! pattern of its `f64`, so files round-trip without decimal parsing.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fxcore::{self, valid_mode_pairs, FxFormat, FxScalar, OverflowMode, RoundMode};
use crate::par::{self, Exec};
use crate::{Error, Result};

/// The scaled input `x * 2^fbit` as an exact integer part plus fraction facts.
#[derive(Debug, Clone, Copy)]
enum Scaled {
    /// `|v| = mag + frac` with `frac` in `[0, 1)`.
    Exact {
        negative: bool,
        mag: i128,
        half: Ordering,
        frac_nonzero: bool,
    },
    /// `|v| >= 2^70`, an integer divisible by `2^70`.
    Huge { negative: bool },
}

fn decompose(x: f64) -> (bool, u64, i32) {
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (negative, frac, -1074)
    } else {
        (negative, frac | (1u64 << 52), exp - 1075)
    }
}

fn scale(x: f64, fbit: u32) -> Scaled {
    let (negative, m, e) = decompose(x);
    let k = e + fbit as i32;
    if m == 0 {
        return Scaled::Exact {
            negative,
            mag: 0,
            half: Ordering::Less,
            frac_nonzero: false,
        };
    }
    if k >= 0 {
        if k > 70 {
            return Scaled::Huge { negative };
        }
        return Scaled::Exact {
            negative,
            mag: (m as i128) << k,
            half: Ordering::Less,
            frac_nonzero: false,
        };
    }
    let s = (-k) as u32;
    if s > 100 {
        // m < 2^53, so the fraction is far below one half.
        return Scaled::Exact {
            negative,
            mag: 0,
            half: Ordering::Less,
            frac_nonzero: true,
        };
    }
    let m = m as u128;
    let q = m >> s;
    let r = m - (q << s);
    let half = 1u128 << (s - 1);
    Scaled::Exact {
        negative,
        mag: q as i128,
        half: r.cmp(&half),
        frac_nonzero: r != 0,
    }
}

/// Integer result of a round mode, or `None` for the huge case.
fn oracle_round(v: Scaled, mode: RoundMode) -> Option<i128> {
    let Scaled::Exact {
        negative,
        mag,
        half,
        frac_nonzero,
    } = v
    else {
        return None;
    };
    let above = half == Ordering::Greater;
    let at_or_above = half != Ordering::Less;
    let odd = mag & 1 == 1;
    let bump = match (mode, negative) {
        (RoundMode::Trn, false) | (RoundMode::TrnZero, _) => false,
        (RoundMode::Trn, true) => frac_nonzero,
        (RoundMode::Rnd, false) | (RoundMode::RndInf, _) => at_or_above,
        (RoundMode::Rnd, true) | (RoundMode::RndZero, _) => above,
        (RoundMode::RndMinInf, false) => above,
        (RoundMode::RndMinInf, true) => at_or_above,
        (RoundMode::RndConv, _) => above || (half == Ordering::Equal && odd),
    };
    let m = mag + bump as i128;
    Some(if negative { -m } else { m })
}

fn oracle_overflow(v: Option<i128>, negative: bool, fmt: &FxFormat) -> i64 {
    let lo = fmt.min_raw() as i128;
    let hi = fmt.max_raw() as i128;
    let rho = fmt.modulus() as i128;
    let r = match (fmt.overflow(), v) {
        (OverflowMode::Sat, Some(v)) => v.clamp(lo, hi),
        (OverflowMode::Sat, None) => {
            if negative {
                lo
            } else {
                hi
            }
        }
        (OverflowMode::SatZero, Some(v)) if (lo..=hi).contains(&v) => v,
        (OverflowMode::SatZero, _) => 0,
        (OverflowMode::SatSymSigned, Some(v)) => v.clamp(-hi, hi),
        (OverflowMode::SatSymSigned, None) => {
            if negative {
                -hi
            } else {
                hi
            }
        }
        (OverflowMode::SatSymUnsigned, Some(v)) => v.clamp(0, hi),
        (OverflowMode::SatSymUnsigned, None) => {
            if negative {
                0
            } else {
                hi
            }
        }
        // Huge values are multiples of 2^70 and rho <= 2^32: residue 0.
        (OverflowMode::WrapUnsigned, v) => v.map_or(0, |v| v.rem_euclid(rho)),
        (OverflowMode::WrapSigned, v) => {
            let r = v.map_or(0, |v| v.rem_euclid(rho));
            if r > hi {
                r - rho
            } else {
                r
            }
        }
    };
    r as i64
}

/// Reference cast computed entirely in integer arithmetic.
pub fn oracle_cast(x: f64, fmt: &FxFormat) -> Result<FxScalar> {
    if !x.is_finite() {
        return Err(Error::NonFinite { index: 0, value: x });
    }
    let scaled = scale(x, fmt.fbit());
    let negative = match scaled {
        Scaled::Exact { negative, .. } | Scaled::Huge { negative } => negative,
    };
    let rounded = oracle_round(scaled, fmt.round());
    Ok(FxScalar {
        raw: oracle_overflow(rounded, negative, fmt),
        format: *fmt,
    })
}

/// `raw * 2^-fbit` built from the integer without any rounding step.
pub fn raw_to_f64(raw: i64, fbit: u32) -> f64 {
    // |raw| < 2^33 and fbit <= 32: both factors and the product are exact.
    raw as f64 / (1u64 << fbit) as f64 + 0.0
}

/// One (input, format, expected output) triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenVector {
    pub input: f64,
    pub format: FxFormat,
    pub expected_raw: i64,
    pub expected_value: f64,
}

impl GoldenVector {
    pub fn from_oracle(input: f64, format: FxFormat) -> Result<Self> {
        let s = oracle_cast(input, &format)?;
        Ok(Self {
            input,
            format,
            expected_raw: s.raw,
            expected_value: raw_to_f64(s.raw, format.fbit()),
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    input: String,
    format: FxFormat,
    expected_raw: i64,
    expected_value: String,
}

pub fn f64_to_hex(v: f64) -> String {
    format!("0x{:016x}", v.to_bits())
}

pub fn hex_to_f64(s: &str) -> Option<f64> {
    let h = s.strip_prefix("0x")?;
    if h.len() != 16 {
        return None;
    }
    u64::from_str_radix(h, 16).ok().map(f64::from_bits)
}

impl Serialize for GoldenVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        Row {
            input: f64_to_hex(self.input),
            format: self.format,
            expected_raw: self.expected_raw,
            expected_value: f64_to_hex(self.expected_value),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GoldenVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let row = Row::deserialize(d)?;
        let hex = |s: &str| {
            hex_to_f64(s).ok_or_else(|| D::Error::custom(format!("bad hex bit pattern `{s}`")))
        };
        Ok(GoldenVector {
            input: hex(&row.input)?,
            format: row.format,
            expected_raw: row.expected_raw,
            expected_value: hex(&row.expected_value)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    /// Every half-LSB grid point over raw `[-2*2^w, 2*2^w]`.
    Exhaustive,
    /// `count` seeded random inputs per format.
    Random { count: usize },
}

/// What [`generate_corpus`] enumerates.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub max_w: u32,
    pub seed: u64,
    pub tier: Tier,
    /// Restrict to one format instead of every format with `w <= max_w`.
    pub format: Option<FxFormat>,
}

/// Every format (all ibit, both signedness values, all 28 valid mode pairs)
/// with word length `1..=max_w`.
pub fn all_formats(max_w: u32) -> Vec<FxFormat> {
    let mut out = Vec::new();
    for w in 1..=max_w {
        for i in 0..=w {
            for signed in [true, false] {
                for (r, o) in valid_mode_pairs(signed) {
                    out.push(FxFormat::new(w, i, signed, r, o).expect("valid by construction"));
                }
            }
        }
    }
    out
}

/// Number of half-LSB grid points for word length `w`: `8 * 2^w + 1`.
pub fn grid_len(w: u32) -> u64 {
    8 * (1u64 << w) + 1
}

/// Half-LSB grid input number `j` (0-based) for `fmt`.
pub fn grid_point(fmt: &FxFormat, j: u64) -> f64 {
    let rho = 1i64 << fmt.wbit();
    let halves = j as i64 - 4 * rho;
    halves as f64 * fxcore::pow2i(-(fmt.fbit() as i32) - 1)
}

/// Seeded inputs for one format: half random finite bit patterns, half
/// uniform over four times the representable range.
pub fn random_inputs(fmt: &FxFormat, count: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let span = 4.0 * (fmt.modulus() as f64) * fmt.lsb();
    (0..count)
        .map(|i| {
            if i % 2 == 0 {
                loop {
                    let v = f64::from_bits(rng.gen::<u64>());
                    if v.is_finite() {
                        break v;
                    }
                }
            } else {
                rng.gen_range(-span..span)
            }
        })
        .collect()
}

fn corpus_formats(spec: &CorpusSpec) -> Vec<FxFormat> {
    match spec.format {
        Some(f) => vec![f],
        None => all_formats(spec.max_w),
    }
}

/// Closed-form row count of the corpus described by `spec`.
pub fn corpus_len(spec: &CorpusSpec) -> u64 {
    corpus_formats(spec)
        .iter()
        .map(|f| match spec.tier {
            Tier::Exhaustive => grid_len(f.wbit()),
            Tier::Random { count } => count as u64,
        })
        .sum()
}

/// Deterministic stream of golden vectors for `spec`.
pub fn generate_corpus(spec: &CorpusSpec) -> impl Iterator<Item = GoldenVector> {
    let tier = spec.tier;
    let seed = spec.seed;
    corpus_formats(spec)
        .into_iter()
        .enumerate()
        .flat_map(move |(idx, fmt)| {
            let inputs: Box<dyn Iterator<Item = f64>> = match tier {
                Tier::Exhaustive => {
                    Box::new((0..grid_len(fmt.wbit())).map(move |j| grid_point(&fmt, j)))
                }
                Tier::Random { count } => {
                    Box::new(random_inputs(&fmt, count, seed, idx as u64).into_iter())
                }
            };
            inputs.map(move |x| GoldenVector::from_oracle(x, fmt).expect("finite by construction"))
        })
}

pub fn write_corpus<W: Write>(
    mut w: W,
    vectors: impl IntoIterator<Item = GoldenVector>,
) -> Result<u64> {
    let mut n = 0;
    for v in vectors {
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<GoldenVector>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: GoldenVector = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if raw_to_f64(v.expected_raw, v.format.fbit()).to_bits() != v.expected_value.to_bits() {
            return Err(Error::Corpus {
                line: i + 1,
                msg: "expected_value does not equal expected_raw * 2^-fbit".into(),
            });
        }
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub index: usize,
    pub format: FxFormat,
    pub input: String,
    pub expected: String,
    /// Hex bit pattern of the result, or the error message.
    pub actual: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Replays `corpus` through `implementation`, comparing bit patterns.
pub fn run_conformance<F>(corpus: &[GoldenVector], implementation: F) -> ConformanceReport
where
    F: Fn(f64, &FxFormat) -> Result<f64> + Sync + Send,
{
    run_conformance_with(corpus, implementation, Exec::default())
}

pub fn run_conformance_with<F>(
    corpus: &[GoldenVector],
    implementation: F,
    exec: Exec,
) -> ConformanceReport
where
    F: Fn(f64, &FxFormat) -> Result<f64> + Sync + Send,
{
    let results = par::map_range(exec, corpus.len(), |i| {
        let v = &corpus[i];
        let actual = implementation(v.input, &v.format);
        match actual {
            Ok(a) if a.to_bits() == v.expected_value.to_bits() => None,
            other => Some(Mismatch {
                index: i,
                format: v.format,
                input: f64_to_hex(v.input),
                expected: f64_to_hex(v.expected_value),
                actual: match other {
                    Ok(a) => f64_to_hex(a),
                    Err(e) => e.to_string(),
                },
            }),
        }
    });
    ConformanceReport {
        checked: corpus.len(),
        mismatches: results.into_iter().flatten().collect(),
    }
}

/// In-memory differential sweep of [`fxcore::cast`] against the oracle over
/// every format with `w <= max_w`: the full half-LSB grid plus
/// `random_per_format` seeded inputs per (w, ibit, signedness) class.
pub fn sweep(max_w: u32, random_per_format: usize, seed: u64, exec: Exec) -> ConformanceReport {
    // One task per (w, ibit, signed) class; the class shares its random inputs
    // across all 28 mode pairs.
    let mut classes = Vec::new();
    for w in 1..=max_w {
        for i in 0..=w {
            for signed in [true, false] {
                classes.push((w, i, signed));
            }
        }
    }
    let per_class = par::map(exec, &classes, |&(w, i, signed)| {
        let base = FxFormat::new(w, i, signed, RoundMode::Rnd, OverflowMode::Sat).expect("valid");
        let stream = ((w as u64) << 8) | ((i as u64) << 1) | signed as u64;
        let randoms = random_inputs(&base, random_per_format, seed, stream);
        let mut checked = 0usize;
        let mut bad = Vec::new();
        for (r, o) in valid_mode_pairs(signed) {
            let fmt = FxFormat::new(w, i, signed, r, o).expect("valid");
            let grid = (0..grid_len(w)).map(|j| grid_point(&fmt, j));
            for x in grid.chain(randoms.iter().copied()) {
                checked += 1;
                let expected = oracle_cast(x, &fmt).expect("finite");
                let want = raw_to_f64(expected.raw, fmt.fbit());
                let got = fxcore::cast(x, &fmt);
                match got {
                    Ok(g) if g.to_bits() == want.to_bits() => {}
                    other => bad.push(Mismatch {
                        index: 0,
                        format: fmt,
                        input: f64_to_hex(x),
                        expected: f64_to_hex(want),
                        actual: match other {
                            Ok(g) => f64_to_hex(g),
                            Err(e) => e.to_string(),
                        },
                    }),
                }
            }
        }
        (checked, bad)
    });
    let mut report = ConformanceReport::default();
    for (n, bad) in per_class {
        report.checked += n;
        report.mismatches.extend(bad);
    }
    for (k, m) in report.mismatches.iter_mut().enumerate() {
        m.index = k;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmt(w: u32, i: u32, signed: bool, r: RoundMode, o: OverflowMode) -> FxFormat {
        FxFormat::new(w, i, signed, r, o).unwrap()
    }

    #[test]
    fn oracle_examples() {
        let u = FxFormat::unsigned(8, 4).unwrap();
        assert_eq!(oracle_cast(13.3125, &u).unwrap().raw, 213);
        assert_eq!(
            oracle_cast(13.3125, &FxFormat::signed(8, 4).unwrap())
                .unwrap()
                .raw,
            127
        );
        assert_eq!(
            oracle_cast(0.3, &FxFormat::signed(4, 1).unwrap())
                .unwrap()
                .raw,
            2
        );
        let w = fmt(4, 1, true, RoundMode::Trn, OverflowMode::WrapSigned);
        assert_eq!(oracle_cast(1.2, &w).unwrap().raw, -7);
        for (r, o) in valid_mode_pairs(false) {
            assert_eq!(oracle_cast(0.0, &fmt(3, 1, false, r, o)).unwrap().raw, 0);
        }
        assert!(oracle_cast(f64::NAN, &u).is_err());
    }

    #[test]
    fn oracle_ties_hand_table() {
        use RoundMode::*;
        // Integer formats (fbit = 0) so the input is the scaled value itself.
        // columns: -2.5, -1.5, -0.5, 0.5, 1.5, 2.5
        let table: [(RoundMode, [i64; 6]); 7] = [
            (Rnd, [-2, -1, 0, 1, 2, 3]),
            (RndZero, [-2, -1, 0, 0, 1, 2]),
            (RndMinInf, [-3, -2, -1, 0, 1, 2]),
            (RndInf, [-3, -2, -1, 1, 2, 3]),
            (RndConv, [-2, -2, 0, 0, 2, 2]),
            (Trn, [-3, -2, -1, 0, 1, 2]),
            (TrnZero, [-2, -1, 0, 0, 1, 2]),
        ];
        let xs = [-2.5, -1.5, -0.5, 0.5, 1.5, 2.5];
        for (m, want) in table {
            let f = fmt(8, 8, true, m, OverflowMode::Sat);
            for (x, w) in xs.iter().zip(want) {
                assert_eq!(oracle_cast(*x, &f).unwrap().raw, w, "{m} {x}");
                assert_eq!(fxcore::cast(*x, &f).unwrap(), w as f64, "fxcore {m} {x}");
            }
        }
    }

    #[test]
    fn oracle_huge_and_tiny() {
        let s = FxFormat::signed(8, 4).unwrap();
        assert_eq!(oracle_cast(1e300, &s).unwrap().raw, 127);
        assert_eq!(oracle_cast(-1e300, &s).unwrap().raw, -128);
        let w = s.with_overflow(OverflowMode::WrapSigned).unwrap();
        assert_eq!(oracle_cast(1e300, &w).unwrap().raw, 0);
        let tiny = f64::from_bits(1);
        assert_eq!(oracle_cast(tiny, &s).unwrap().raw, 0);
        let up = s.with_round(RoundMode::RndInf);
        assert_eq!(oracle_cast(tiny, &up).unwrap().raw, 0);
        let trn = s.with_round(RoundMode::Trn);
        assert_eq!(oracle_cast(-tiny, &trn).unwrap().raw, -1);
    }

    #[test]
    fn max_w_two_covers_every_raw_value() {
        let spec = CorpusSpec {
            max_w: 2,
            seed: 0,
            tier: Tier::Exhaustive,
            format: None,
        };
        let rows: Vec<_> = generate_corpus(&spec).collect();
        let f = fmt(2, 1, true, RoundMode::Rnd, OverflowMode::Sat);
        let mut raws: Vec<i64> = rows
            .iter()
            .filter(|v| v.format == f)
            .map(|v| v.expected_raw)
            .collect();
        raws.sort();
        raws.dedup();
        assert_eq!(raws, vec![-2, -1, 0, 1]);
    }

    #[test]
    fn corpus_row_count_closed_form() {
        for max_w in 1..=3u32 {
            let spec = CorpusSpec {
                max_w,
                seed: 0,
                tier: Tier::Exhaustive,
                format: None,
            };
            // sum over w of (w+1) ibit values * 2 signedness * 28 mode pairs * (8*2^w + 1)
            let closed: u64 = (1..=max_w)
                .map(|w| (w as u64 + 1) * 56 * (8 * (1u64 << w) + 1))
                .sum();
            assert_eq!(corpus_len(&spec), closed);
            assert_eq!(generate_corpus(&spec).count() as u64, closed);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = CorpusSpec {
            max_w: 3,
            seed: 42,
            tier: Tier::Random { count: 20 },
            format: None,
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_corpus(&mut a, generate_corpus(&spec)).unwrap();
        write_corpus(&mut b, generate_corpus(&spec)).unwrap();
        assert_eq!(a, b);
        let other = CorpusSpec { seed: 43, ..spec };
        let mut c = Vec::new();
        write_corpus(&mut c, generate_corpus(&other)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn file_round_trip_and_replay() {
        let spec = CorpusSpec {
            max_w: 3,
            seed: 7,
            tier: Tier::Exhaustive,
            format: None,
        };
        let mut buf = Vec::new();
        let n = write_corpus(&mut buf, generate_corpus(&spec)).unwrap();
        let rows = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(rows.len() as u64, n);
        let mut again = Vec::new();
        write_corpus(&mut again, rows.iter().copied()).unwrap();
        assert_eq!(buf, again);
        let report = run_conformance(&rows, fxcore::cast);
        assert!(
            report.passed(),
            "{:?}",
            &report.mismatches[..report.mismatches.len().min(3)]
        );
    }

    #[test]
    fn fault_injection_reports_one_mismatch() {
        let f = FxFormat::signed(4, 2).unwrap();
        let spec = CorpusSpec {
            max_w: 4,
            seed: 0,
            tier: Tier::Exhaustive,
            format: Some(f),
        };
        let mut rows: Vec<_> = generate_corpus(&spec).collect();
        rows[17].expected_value += 0.25;
        let report = run_conformance(&rows, fxcore::cast);
        assert_eq!(report.mismatches.len(), 1);
        assert_eq!(report.mismatches[0].index, 17);
    }

    #[test]
    fn empty_corpus_passes() {
        let report = run_conformance(&[], fxcore::cast);
        assert!(report.passed());
        assert_eq!(report.checked, 0);
        assert!(read_corpus(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn unreadable_corpus_is_an_error() {
        let bad = b"{\"input\":\"0x3ff0000000000000\",\"format\":\"fx8.4s:RND:SAT\",\"expected_raw\":1,\"expected_value\":\"1.0\"}\n";
        assert!(matches!(
            read_corpus(&bad[..]),
            Err(Error::Corpus { line: 1, .. })
        ));
        let inconsistent = b"{\"input\":\"0x3ff0000000000000\",\"format\":\"fx8.4s:RND:SAT\",\"expected_raw\":1,\"expected_value\":\"0x3ff0000000000000\"}\n";
        assert!(read_corpus(&inconsistent[..]).is_err());
    }

    #[test]
    fn small_sweep_is_clean() {
        let r = sweep(4, 200, 1, Exec::default());
        assert!(r.passed(), "{:?}", r.mismatches.first());
        assert!(r.checked > 0);
    }
}

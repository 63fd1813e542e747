//! Forward kernels shared by the recording tape and the tape-free evaluator.
//! Both paths call exactly these functions, so their outputs are bitwise equal.

use crate::fxcore::{overflow_real, pow2i, round_unchecked, FxFormat, RoundMode};
use crate::{Error, Result, Tensor};

/// How the second operand of a binary op lines up with the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Bcast {
    Same,
    LeftScalar,
    RightScalar,
    LeftChannel,
    RightChannel,
}

pub(crate) fn broadcast(a: &[usize], b: &[usize]) -> Result<Bcast> {
    let len = |s: &[usize]| s.iter().product::<usize>();
    if a == b {
        Ok(Bcast::Same)
    } else if len(b) == 1 {
        Ok(Bcast::RightScalar)
    } else if len(a) == 1 {
        Ok(Bcast::LeftScalar)
    } else if b.len() == 1 && a.len() >= 2 && a.last() == b.first() {
        Ok(Bcast::RightChannel)
    } else if a.len() == 1 && b.len() >= 2 && b.last() == a.first() {
        Ok(Bcast::LeftChannel)
    } else {
        Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}")))
    }
}

pub(crate) fn binary(
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Tensor, Bcast)> {
    let mode = broadcast(a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let (shape, data): (&[usize], Vec<f64>) = match mode {
        Bcast::Same => (
            a.shape(),
            ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
        ),
        Bcast::RightScalar => (a.shape(), ad.iter().map(|&x| f(x, bd[0])).collect()),
        Bcast::LeftScalar => (b.shape(), bd.iter().map(|&y| f(ad[0], y)).collect()),
        Bcast::RightChannel => {
            let c = bd.len();
            (
                a.shape(),
                ad.iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bd[i % c]))
                    .collect(),
            )
        }
        Bcast::LeftChannel => {
            let c = ad.len();
            (
                b.shape(),
                bd.iter()
                    .enumerate()
                    .map(|(i, &y)| f(ad[i % c], y))
                    .collect(),
            )
        }
    };
    Ok((Tensor::new(shape.to_vec(), data)?, mode))
}

/// Sums a full-size gradient down to the shape of the operand it belongs to.
pub(crate) fn reduce_to(g: &Tensor, operand: &Tensor, is_left: bool, mode: Bcast) -> Tensor {
    let scalar = |g: &Tensor| {
        let s: f64 = g.data().iter().sum();
        Tensor::new(operand.shape().to_vec(), vec![s]).expect("one-element operand")
    };
    let channel = |g: &Tensor| {
        let c = operand.len();
        let mut acc = vec![0.0; c];
        for (i, v) in g.data().iter().enumerate() {
            acc[i % c] += v;
        }
        Tensor::new(operand.shape().to_vec(), acc).expect("channel operand")
    };
    match (mode, is_left) {
        (Bcast::Same, _) => g.clone(),
        (Bcast::LeftScalar, true) | (Bcast::RightScalar, false) => scalar(g),
        (Bcast::LeftChannel, true) | (Bcast::RightChannel, false) => channel(g),
        _ => g.clone(),
    }
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::Shape(format!("matmul of {sa:?} and {sb:?}")));
    }
    let (n, k, m) = (sa[0], sa[1], sb[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = ad[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&bd[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![n, m], out)
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (n, m) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a.data()[i * m + j];
        }
    }
    Tensor::new(vec![m, n], out).expect("transpose shape")
}

pub(crate) fn div(a: &Tensor, b: &Tensor) -> Result<(Tensor, Bcast)> {
    if let Some(i) = b.data().iter().position(|&v| v == 0.0) {
        return Err(Error::DivisionByZero(i));
    }
    binary(a, b, |x, y| x / y)
}

pub(crate) fn log(a: &Tensor, base2: bool) -> Result<Tensor> {
    if let Some(v) = a.data().iter().find(|v| v.is_nan() || **v <= 0.0) {
        return Err(Error::Domain(format!("log of non-positive value {v}")));
    }
    Ok(a.map(|v| if base2 { v.log2() } else { v.ln() }))
}

pub(crate) fn sqrt(a: &Tensor) -> Result<Tensor> {
    if let Some(v) = a.data().iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::Domain(format!("sqrt of negative value {v}")));
    }
    Ok(a.map(f64::sqrt))
}

/// `2^v`, exact for integer exponents in the normal range.
pub(crate) fn pow2(v: f64) -> f64 {
    if v.fract() == 0.0 && (-1022.0..=1023.0).contains(&v) {
        pow2i(v as i32)
    } else {
        v.exp2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepKind {
    Floor,
    Ceil,
    RoundHalfEven,
    Trunc,
    Mode(RoundMode),
    /// Keep the `k` most significant set bits of the magnitude.
    TopBits(usize),
}

pub(crate) fn step(a: &Tensor, kind: StepKind) -> Result<Tensor> {
    if let Some((i, &v)) = a.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index: i, value: v });
    }
    Ok(match kind {
        StepKind::Floor => a.map(f64::floor),
        StepKind::Ceil => a.map(f64::ceil),
        StepKind::RoundHalfEven => a.map(f64::round_ties_even),
        StepKind::Trunc => a.map(f64::trunc),
        StepKind::Mode(m) => a.map(|v| round_unchecked(v, m)),
        StepKind::TopBits(k) => a.map(|v| crate::khot::keep_top_bits(v, k)),
    })
}

pub(crate) fn channel_mean(a: &Tensor) -> Result<Tensor> {
    if a.shape().len() < 2 || a.is_empty() {
        return Err(Error::Shape(format!(
            "channel mean needs rank >= 2, got {:?}",
            a.shape()
        )));
    }
    let c = a.channels();
    let rows = (a.len() / c) as f64;
    let mut m = vec![0.0; c];
    for (i, v) in a.data().iter().enumerate() {
        m[i % c] += v;
    }
    Ok(Tensor::vector(m.into_iter().map(|s| s / rows).collect()))
}

pub(crate) fn overflow(a: &Tensor, fmt: &FxFormat) -> Tensor {
    a.map(|v| overflow_real(v, fmt))
}

pub(crate) fn in_overflow_range(v: f64, fmt: &FxFormat) -> bool {
    use crate::OverflowMode::*;
    let hi = fmt.max_raw() as f64;
    let lo = match fmt.overflow() {
        SatSymSigned => -hi,
        SatSymUnsigned => 0.0,
        _ => fmt.min_raw() as f64,
    };
    lo <= v && v <= hi
}

pub(crate) fn log_softmax_rows(logits: &Tensor) -> Result<Tensor> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "logits must be rank 2, got {:?}",
            logits.shape()
        )));
    }
    let c = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

pub(crate) fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let lsm = log_softmax_rows(logits)?;
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Shape(format!("label {y} out of {c} classes")));
        }
        total -= lsm.data()[i * c + y];
    }
    Ok(total / n.max(1) as f64)
}

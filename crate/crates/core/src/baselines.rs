//! Reference integer quantization and the post-training binary-point sweep
//! used as the comparison baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Record};
use crate::fxcore::{self, FxFormat, OverflowMode, RoundMode};
use crate::par::{self, Exec};
use crate::qfxlayers::{CastSite, DiffCastConfig};
use crate::{Error, Result, Tensor};

/// Affine integer quantizer `q = round(clip((r - zero_point) / scale))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntQuantParams {
    pub scale: f64,
    pub zero_point: f64,
    pub bitwidth: u32,
    pub signed: bool,
}

impl IntQuantParams {
    pub fn new(scale: f64, zero_point: f64, bitwidth: u32, signed: bool) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::Domain(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        if !zero_point.is_finite() {
            return Err(Error::Domain(format!(
                "zero point must be finite, got {zero_point}"
            )));
        }
        if !(1..=32).contains(&bitwidth) {
            return Err(Error::InvalidFormat(format!(
                "bitwidth {bitwidth} outside 1..=32"
            )));
        }
        Ok(Self {
            scale,
            zero_point,
            bitwidth,
            signed,
        })
    }

    pub fn qmin(&self) -> i64 {
        if self.signed {
            -(1i64 << (self.bitwidth - 1))
        } else {
            0
        }
    }

    pub fn qmax(&self) -> i64 {
        if self.signed {
            (1i64 << (self.bitwidth - 1)) - 1
        } else {
            (1i64 << self.bitwidth) - 1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i64>,
}

/// Clip to the integer range, then round half to even.
pub fn int_quant(r: &Tensor, p: &IntQuantParams) -> Result<IntTensor> {
    let (lo, hi) = (p.qmin() as f64, p.qmax() as f64);
    let data = r
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i, value: v });
            }
            Ok(((v - p.zero_point) / p.scale)
                .clamp(lo, hi)
                .round_ties_even() as i64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IntTensor {
        shape: r.shape().to_vec(),
        data,
    })
}

pub fn int_dequant(q: &IntTensor, p: &IntQuantParams) -> Result<Tensor> {
    Tensor::new(
        q.shape.clone(),
        q.data
            .iter()
            .map(|&v| v as f64 * p.scale + p.zero_point)
            .collect(),
    )
}

/// Modes shared by every candidate format of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepModes {
    pub signed: bool,
    pub round: RoundMode,
    pub overflow: OverflowMode,
}

impl Default for SweepModes {
    fn default() -> Self {
        Self {
            signed: true,
            round: RoundMode::Rnd,
            overflow: OverflowMode::Sat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtqSweep {
    pub best_ibit: u32,
    /// Mean squared cast error for ibit = 0..=w.
    pub mse: Vec<f64>,
}

impl PtqSweep {
    pub fn best_mse(&self) -> f64 {
        self.mse[self.best_ibit as usize]
    }
}

/// MSE of `cast(x)` against `x` for every ibit in `0..=w`; ties go to the
/// smaller ibit.
pub fn ptq_sweep(x: &Tensor, w: u32, modes: SweepModes) -> Result<PtqSweep> {
    ptq_sweep_with(x, w, modes, Exec::default())
}

pub fn ptq_sweep_with(x: &Tensor, w: u32, modes: SweepModes, exec: Exec) -> Result<PtqSweep> {
    if x.is_empty() {
        return Err(Error::Shape("PTQ sweep over an empty tensor".into()));
    }
    let formats = (0..=w)
        .map(|i| FxFormat::new(w, i, modes.signed, modes.round, modes.overflow))
        .collect::<Result<Vec<_>>>()?;
    let mse = par::try_map(exec, &formats, |_, fmt| {
        let q = fxcore::cast_tensor_with(x, fmt, Exec::Sequential)?;
        let sse: f64 = q
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok::<_, Error>(sse / x.len() as f64)
    })?;
    let mut best = 0;
    for (i, &m) in mse.iter().enumerate() {
        if m < mse[best] {
            best = i;
        }
    }
    Ok(PtqSweep {
        best_ibit: best as u32,
        mse,
    })
}

/// A model with reconfigurable cast sites.
pub trait CastSites: Clone {
    fn cast_sites_mut(&mut self) -> Vec<&mut CastSite>;
    /// Real-arithmetic forward over `x` through `o`, so site inputs are observed.
    fn run(&self, o: &mut Record, params: &ParamStore, x: &Tensor) -> Result<()>;
}

/// Input of every cast site of the unquantized model on `x`.
pub fn calibrate<M: CastSites>(
    model: &M,
    params: &ParamStore,
    x: &Tensor,
) -> Result<BTreeMap<String, Tensor>> {
    if x.is_empty() {
        return Err(Error::Config("empty calibration set".into()));
    }
    let mut real = model.clone();
    for s in real.cast_sites_mut() {
        s.cfg = None;
    }
    let mut rec = Record::default();
    real.run(&mut rec, params, x)?;
    Ok(rec.seen)
}

/// Sweeps each cast site independently on its real-model input and freezes
/// the best format. Parameters are untouched.
pub fn ptq_apply<M: CastSites>(
    model: &M,
    params: &ParamStore,
    w: u32,
    modes: SweepModes,
    calibration: &Tensor,
) -> Result<(M, BTreeMap<String, PtqSweep>)> {
    let seen = calibrate(model, params, calibration)?;
    let mut out = model.clone();
    let mut report = BTreeMap::new();
    for site in out.cast_sites_mut() {
        let x = seen.get(&site.name).ok_or_else(|| {
            Error::Config(format!(
                "site `{}` not reached during calibration",
                site.name
            ))
        })?;
        let sweep = ptq_sweep(x, w, modes)?;
        let fmt = FxFormat::new(
            w,
            sweep.best_ibit,
            modes.signed,
            modes.round,
            modes.overflow,
        )?;
        site.cfg = Some(DiffCastConfig::fixed(fmt));
        report.insert(site.name.clone(), sweep);
    }
    Ok((out, report))
}

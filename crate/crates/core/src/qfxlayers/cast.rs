use serde::{Deserialize, Serialize};

use super::{BinaryPoint, DiffCastConfig, Granularity};
use crate::autograd::{Eval, Ops, ParamStore};
use crate::fxcore::pow2i;
use crate::{Error, Result, Tensor};

/// `round_half_even(clamp(I, 0, wbit))` on the tape; both steps pass gradients
/// straight through (subject to the tape's clamp policy).
pub fn effective_ibit<O: Ops>(o: &mut O, i: &O::T, wbit: u32) -> Result<O::T> {
    let c = o.clamp(i, 0.0, wbit as f64)?;
    o.round_half_even(&c)
}

/// Non-differentiable [`effective_ibit`].
pub fn effective_ibit_values(i: &Tensor, wbit: u32) -> Vec<u32> {
    let t = effective_ibit(&mut Eval, i, wbit).expect("finite binary point");
    t.data().iter().map(|&v| v as u32).collect()
}

/// `clamp(ceil(log2(max|x|) + 1) + signed, 0, wbit)`, per tensor or per
/// channel (last axis).
pub fn initial_ibit(x: &Tensor, wbit: u32, signed: bool, granularity: Granularity) -> Tensor {
    let pick = |m: f64| -> f64 {
        let bits = (m.log2() + 1.0).ceil() + if signed { 1.0 } else { 0.0 };
        if bits.is_nan() {
            0.0
        } else {
            bits.clamp(0.0, wbit as f64)
        }
    };
    match granularity {
        Granularity::PerTensor => Tensor::scalar(pick(x.max_abs())),
        Granularity::PerChannel => {
            let c = x.channels();
            let mut m = vec![0.0f64; c];
            for (k, v) in x.data().iter().enumerate() {
                m[k % c] = m[k % c].max(v.abs());
            }
            Tensor::vector(m.into_iter().map(pick).collect())
        }
    }
}

/// Differentiable cast of `x`.
///
/// With a fixed binary point the scale factors are constants. With a learnable
/// one, `i` is the raw `I` tensor; `fbit = wbit - round(clamp(I))` flows into
/// `2^fbit` and `2^-fbit`, which yields `d cast/dI = ln2 * (cast(x) - x)`
/// under the straight-through rules.
pub fn qfx_cast<O: Ops>(
    o: &mut O,
    x: &O::T,
    cfg: &DiffCastConfig,
    i: Option<&O::T>,
) -> Result<O::T> {
    // ibit only selects the scale; the overflow step needs wbit/sign/mode.
    let word = cfg.format(0)?;
    match (cfg.binary_point, i) {
        (BinaryPoint::Fixed(ibit), _) => {
            let fbit = cfg.format(ibit)?.fbit() as i32;
            let scaled = o.mul_scalar(x, pow2i(fbit))?;
            let rounded = o.round_mode(&scaled, cfg.round)?;
            let kept = o.overflow(&rounded, &word)?;
            let back = o.mul_scalar(&kept, pow2i(-fbit))?;
            o.add_scalar(&back, 0.0)
        }
        (BinaryPoint::Learnable(_), Some(i)) => {
            let ibit = effective_ibit(o, i, cfg.wbit)?;
            let neg = o.neg(&ibit)?;
            let fbit = o.add_scalar(&neg, cfg.wbit as f64)?;
            let up = o.pow2(&fbit)?;
            let nf = o.neg(&fbit)?;
            let down = o.pow2(&nf)?;
            let scaled = o.mul(x, &up)?;
            let rounded = o.round_mode(&scaled, cfg.round)?;
            let kept = o.overflow(&rounded, &word)?;
            let back = o.mul(&kept, &down)?;
            o.add_scalar(&back, 0.0)
        }
        (BinaryPoint::Learnable(_), None) => Err(Error::Config(
            "learnable binary point needs its I tensor".into(),
        )),
    }
}

/// A named cast site. `cfg = None` is the identity (an unquantized site).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CastSite {
    pub name: String,
    pub cfg: Option<DiffCastConfig>,
}

impl CastSite {
    pub fn new(name: impl Into<String>, cfg: Option<DiffCastConfig>) -> Self {
        Self {
            name: name.into(),
            cfg,
        }
    }

    pub fn identity(name: impl Into<String>) -> Self {
        Self::new(name, None)
    }

    /// Parameter name of this site's `I` tensor.
    pub fn ibit_param(&self) -> String {
        format!("{}.I", self.name)
    }

    pub fn is_learnable(&self) -> bool {
        matches!(
            self.cfg,
            Some(DiffCastConfig {
                binary_point: BinaryPoint::Learnable(_),
                ..
            })
        )
    }

    pub fn forward<O: Ops>(&self, o: &mut O, params: &ParamStore, x: &O::T) -> Result<O::T> {
        o.observe(&self.name, x);
        let Some(cfg) = &self.cfg else {
            return Ok(x.clone());
        };
        if self.is_learnable() {
            let name = self.ibit_param();
            let t = params
                .get(&name)
                .ok_or_else(|| Error::Config(format!("missing binary-point parameter `{name}`")))?;
            let i = o.param(&name, t);
            qfx_cast(o, x, cfg, Some(&i))
        } else {
            qfx_cast(o, x, cfg, None)
        }
    }

    /// Effective integer bits at the current parameters (empty when unquantized).
    pub fn effective_ibits(&self, params: &ParamStore) -> Vec<u32> {
        match &self.cfg {
            None => Vec::new(),
            Some(DiffCastConfig {
                binary_point: BinaryPoint::Fixed(i),
                ..
            }) => vec![*i],
            Some(cfg) => params
                .get(&self.ibit_param())
                .map(|t| effective_ibit_values(t, cfg.wbit))
                .unwrap_or_default(),
        }
    }
}

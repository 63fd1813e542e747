use serde::{Deserialize, Serialize};

use super::code::{khot_encode, khot_mul_tensor, KHotCode};
use crate::autograd::{Ops, ParamStore, StepKind};
use crate::fxcore::{self, FxFormat, OverflowMode, RoundMode};
use crate::qfxlayers::{
    effective_ibit_values, qfx_add, qfx_cast, BinaryPoint, BinarySites, DiffCastConfig,
};
use crate::{Error, Result, Tensor};

/// K-hot quantizer of one site: a `wbit`-bit magnitude cast keeping `k` set
/// bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KHotConfig {
    pub wbit: u32,
    pub k: usize,
    pub binary_point: BinaryPoint,
}

impl KHotConfig {
    /// The unsigned RND/SAT magnitude cast applied before bit selection.
    pub fn magnitude(&self) -> DiffCastConfig {
        DiffCastConfig {
            wbit: self.wbit,
            signed: false,
            round: RoundMode::Rnd,
            overflow: OverflowMode::Sat,
            binary_point: self.binary_point,
        }
    }
}

/// Element-wise K-hot quantization with straight-through gradients.
///
/// `|x|` goes through the magnitude cast, then the top `k` set bits are kept
/// and the sign is reattached. With a learnable binary point, `i` is the raw
/// `I` tensor and its gradient follows the same chain as [`qfx_cast`].
pub fn qfx_khot_cast<O: Ops>(
    o: &mut O,
    x: &O::T,
    cfg: &KHotConfig,
    i: Option<&O::T>,
) -> Result<O::T> {
    if cfg.k == 0 {
        return Err(Error::Config("K-hot budget must be at least 1".into()));
    }
    let signs = o.value(x).map(|v| if v < 0.0 { -1.0 } else { 1.0 });
    let s = o.constant(signs);
    let mag = o.mul(x, &s)?;
    let q = qfx_cast(o, &mag, &cfg.magnitude(), i)?;
    let kept = o.step(&q, StepKind::TopBits(cfg.k))?;
    let y = o.mul(&kept, &s)?;
    o.add_scalar(&y, 0.0)
}

/// A named K-hot site; a learnable binary point lives at `<name>.I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KHotSite {
    pub name: String,
    pub cfg: KHotConfig,
}

impl KHotSite {
    pub fn new(name: impl Into<String>, cfg: KHotConfig) -> Self {
        Self {
            name: name.into(),
            cfg,
        }
    }

    pub fn ibit_param(&self) -> String {
        format!("{}.I", self.name)
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self.cfg.binary_point, BinaryPoint::Learnable(_))
    }

    pub fn forward<O: Ops>(&self, o: &mut O, params: &ParamStore, x: &O::T) -> Result<O::T> {
        o.observe(&self.name, x);
        if self.is_learnable() {
            let name = self.ibit_param();
            let t = params
                .get(&name)
                .ok_or_else(|| Error::Config(format!("missing binary-point parameter `{name}`")))?;
            let i = o.param(&name, t);
            qfx_khot_cast(o, x, &self.cfg, Some(&i))
        } else {
            qfx_khot_cast(o, x, &self.cfg, None)
        }
    }

    /// One code per channel of `a` at the current binary point.
    pub fn codes(&self, params: &ParamStore, a: &Tensor) -> Result<Vec<KHotCode>> {
        let ibits: Vec<u32> = match self.cfg.binary_point {
            BinaryPoint::Fixed(i) => vec![i],
            BinaryPoint::Learnable(_) => {
                let t = params.get(&self.ibit_param()).ok_or_else(|| {
                    Error::Config(format!(
                        "missing binary-point parameter `{}`",
                        self.ibit_param()
                    ))
                })?;
                effective_ibit_values(t, self.cfg.wbit)
            }
        };
        a.data()
            .iter()
            .enumerate()
            .map(|(c, &v)| khot_encode(v, self.cfg.wbit, ibits[c % ibits.len()] as f64, self.cfg.k))
            .collect()
    }
}

/// `qfx_add(khot(a) * x, b)` per channel, differentiable. The product is a
/// real multiply by a value with at most `k` set bits, equal to the shift-add
/// form.
#[allow(clippy::too_many_arguments)]
pub fn khot_affine_op<O: Ops>(
    o: &mut O,
    p: &ParamStore,
    mult: &KHotSite,
    add: &BinarySites,
    x: &O::T,
    a: &O::T,
    b: &O::T,
) -> Result<O::T> {
    let c = o.value(x).channels();
    if o.value(a).len() != c || o.value(b).len() != c {
        return Err(Error::Shape(format!(
            "affine over {c} channels got multiplier {:?}, bias {:?}",
            o.value(a).shape(),
            o.value(b).shape()
        )));
    }
    let aq = mult.forward(o, p, a)?;
    let prod = o.mul(x, &aq)?;
    qfx_add(o, p, add, &prod, b)
}

/// Deployed form: shift-add per channel, add the bias, cast to `out`.
pub fn khot_affine(x: &Tensor, codes: &[KHotCode], b: &Tensor, out: &FxFormat) -> Result<Tensor> {
    if codes.len() != x.channels() || b.len() != x.channels() {
        return Err(Error::Shape(format!(
            "affine over {} channels got {} codes, bias {:?}",
            x.channels(),
            codes.len(),
            b.shape()
        )));
    }
    let prod = khot_mul_tensor(codes, x)?;
    let c = codes.len();
    let sum = Tensor::new(
        prod.shape().to_vec(),
        prod.data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b.data()[i % c])
            .collect(),
    )?;
    fxcore::cast_tensor(&sum, out)
}

use serde::{Deserialize, Serialize};

use super::{qfx_add, qfx_mul, BinarySites};
use crate::autograd::{Eval, Ops, ParamStore};
use crate::{Error, Result, Tensor};

/// `alpha = gamma / sqrt(var + eps)`, `eta = beta - gamma * mean / sqrt(var + eps)`.
pub fn fold_batchnorm_op<O: Ops>(
    o: &mut O,
    gamma: &O::T,
    beta: &O::T,
    mean: &O::T,
    var: &O::T,
    eps: f64,
) -> Result<(O::T, O::T)> {
    let ve = o.add_scalar(var, eps)?;
    let sd = o.sqrt(&ve)?;
    let alpha = o.div(gamma, &sd)?;
    let shift = o.mul(&alpha, mean)?;
    let eta = o.sub(beta, &shift)?;
    Ok((alpha, eta))
}

/// Real-arithmetic fold of BatchNorm statistics into a per-channel affine map.
pub fn fold_batchnorm(
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: f64,
) -> Result<(Tensor, Tensor)> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let n = gamma.len();
    if [beta, mean, var].iter().any(|t| t.len() != n) {
        return Err(Error::Shape("BatchNorm statistics differ in length".into()));
    }
    fold_batchnorm_op(&mut Eval, gamma, beta, mean, var, eps)
}

/// Sites of `qfx_add(qfx_mul(alpha, x), eta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormSites {
    /// lhs = alpha, rhs = x, out = product.
    pub mul: BinarySites,
    /// lhs = product, rhs = eta, out = layer output.
    pub add: BinarySites,
}

impl BatchNormSites {
    pub fn identity(prefix: &str) -> Self {
        Self {
            mul: BinarySites::identity(&format!("{prefix}.mul")),
            add: BinarySites::identity(&format!("{prefix}.add")),
        }
    }
}

/// Quantized BatchNorm in folded form: `qfx_add(qfx_mul(alpha, x), eta)`.
pub fn qfx_batchnorm<O: Ops>(
    o: &mut O,
    p: &ParamStore,
    s: &BatchNormSites,
    x: &O::T,
    alpha: &O::T,
    eta: &O::T,
) -> Result<O::T> {
    let c = o.value(x).channels();
    if o.value(alpha).len() != c || o.value(eta).len() != c {
        return Err(Error::Shape(format!(
            "BatchNorm over {c} channels got alpha {:?}, eta {:?}",
            o.value(alpha).shape(),
            o.value(eta).shape()
        )));
    }
    let prod = qfx_mul(o, p, &s.mul, alpha, x)?;
    qfx_add(o, p, &s.add, &prod, eta)
}

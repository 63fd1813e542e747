use serde::{Deserialize, Serialize};

use super::CastSite;
use crate::autograd::{Ops, ParamStore};
use crate::Result;

/// Cast sites of a binary op: each operand and the result get their own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySites {
    pub lhs: CastSite,
    pub rhs: CastSite,
    pub out: CastSite,
}

impl BinarySites {
    /// `<prefix>.lhs`, `<prefix>.rhs`, `<prefix>.out`, all unquantized.
    pub fn identity(prefix: &str) -> Self {
        Self {
            lhs: CastSite::identity(format!("{prefix}.lhs")),
            rhs: CastSite::identity(format!("{prefix}.rhs")),
            out: CastSite::identity(format!("{prefix}.out")),
        }
    }

    pub fn sites(&self) -> [&CastSite; 3] {
        [&self.lhs, &self.rhs, &self.out]
    }

    pub fn sites_mut(&mut self) -> [&mut CastSite; 3] {
        [&mut self.lhs, &mut self.rhs, &mut self.out]
    }
}

fn binary<O: Ops>(
    o: &mut O,
    p: &ParamStore,
    s: &BinarySites,
    a: &O::T,
    b: &O::T,
    f: impl FnOnce(&mut O, &O::T, &O::T) -> Result<O::T>,
) -> Result<O::T> {
    let qa = s.lhs.forward(o, p, a)?;
    let qb = s.rhs.forward(o, p, b)?;
    let r = f(o, &qa, &qb)?;
    s.out.forward(o, p, &r)
}

/// `cast_out(cast_lhs(a) + cast_rhs(b))`.
pub fn qfx_add<O: Ops>(
    o: &mut O,
    p: &ParamStore,
    s: &BinarySites,
    a: &O::T,
    b: &O::T,
) -> Result<O::T> {
    binary(o, p, s, a, b, |o, x, y| o.add(x, y))
}

pub fn qfx_sub<O: Ops>(
    o: &mut O,
    p: &ParamStore,
    s: &BinarySites,
    a: &O::T,
    b: &O::T,
) -> Result<O::T> {
    binary(o, p, s, a, b, |o, x, y| o.sub(x, y))
}

pub fn qfx_mul<O: Ops>(
    o: &mut O,
    p: &ParamStore,
    s: &BinarySites,
    a: &O::T,
    b: &O::T,
) -> Result<O::T> {
    binary(o, p, s, a, b, |o, x, y| o.mul(x, y))
}

/// Fails eagerly if the cast divisor contains an exact zero.
pub fn qfx_div<O: Ops>(
    o: &mut O,
    p: &ParamStore,
    s: &BinarySites,
    a: &O::T,
    b: &O::T,
) -> Result<O::T> {
    binary(o, p, s, a, b, |o, x, y| o.div(x, y))
}

/// Residual join `x + shortcut`; independent casts on both branches.
pub fn qfx_residual<O: Ops>(
    o: &mut O,
    p: &ParamStore,
    s: &BinarySites,
    x: &O::T,
    shortcut: &O::T,
) -> Result<O::T> {
    qfx_add(o, p, s, x, shortcut)
}

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::kernels::{self, Bcast};
use super::{Eval, Ops, StepKind};
use crate::fxcore::FxFormat;
use crate::{Error, Result, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Gradient policy for `clamp` and for saturating overflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClampGrad {
    /// Pass the gradient through unchanged everywhere.
    #[default]
    Ste,
    /// Zero the gradient where the input was outside the kept range.
    Clipped,
}

/// Primitives whose backward rule can be replaced with a [`GradHook`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Floor,
    Ceil,
    Round,
    Trunc,
    Clamp,
    Overflow,
    TopBits,
}

/// Replacement backward rule: `(forward input, upstream grad) -> input grad`.
pub type GradHook = Box<dyn Fn(&Tensor, &Tensor) -> Tensor>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Neg(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Log2(Var),
    Pow2(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    ChannelMean(Var),
    Clamp(Var, f64, f64),
    Step(Var, StepKind),
    Overflow(Var, FxFormat),
    CrossEntropy(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records operations in execution order; backward walks them in reverse.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    clamp_grad: ClampGrad,
    hooks: HashMap<Primitive, GradHook>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("params", &self.params)
            .field("clamp_grad", &self.clamp_grad)
            .finish()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every registered parameter, keyed by name.
    pub fn by_param(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter_map(|(name, v)| self.get(*v).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            clamp_grad: ClampGrad::default(),
            hooks: HashMap::new(),
        }
    }

    pub fn with_clamp_grad(clamp_grad: ClampGrad) -> Self {
        Self {
            clamp_grad,
            ..Self::new()
        }
    }

    pub fn clamp_grad(&self) -> ClampGrad {
        self.clamp_grad
    }

    /// Replaces the backward rule of `prim` on this tape.
    pub fn register_hook(&mut self, prim: Primitive, hook: GradHook) {
        self.hooks.insert(prim, hook);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, requires_grad, Op::Leaf)
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::Shape(format!("variable {} is not on this tape", v.0)))
    }

    fn val(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.node(v)?.value)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, f: impl FnOnce(&Tensor) -> Result<Tensor>, op: Op) -> Result<Var> {
        let out = f(self.val(x)?)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, op))
    }

    fn binop(
        &mut self,
        a: Var,
        b: Var,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: Op,
    ) -> Result<Var> {
        let out = f(self.val(a)?, self.val(b)?)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, op))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.node(loss)?;
        if !root.value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(root.value.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (input, contrib) in self.local_grads(node, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn hook_or(
        &self,
        prim: Primitive,
        input: &Tensor,
        g: &Tensor,
        default: impl FnOnce() -> Tensor,
    ) -> Tensor {
        match self.hooks.get(&prim) {
            Some(h) => h(input, g),
            None => default(),
        }
    }

    fn masked(g: &Tensor, x: &Tensor, keep: impl Fn(f64) -> bool) -> Tensor {
        let data = g
            .data()
            .iter()
            .zip(x.data())
            .map(|(&gv, &xv)| if keep(xv) { gv } else { 0.0 })
            .collect();
        Tensor::new(g.shape().to_vec(), data).expect("same shape")
    }

    fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(a.shape().to_vec(), data).expect("same shape")
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let v = |x: &Var| &self.nodes[x.0].value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let mode = kernels::broadcast(v(a).shape(), v(b).shape())?;
                let ga = kernels::reduce_to(g, v(a), true, mode);
                let mut gb = kernels::reduce_to(g, v(b), false, mode);
                if matches!(node.op, Op::Sub(..)) {
                    gb = gb.map(|x| -x);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Mul(a, b) => {
                let mode = kernels::broadcast(v(a).shape(), v(b).shape())?;
                let ga_full =
                    Self::zip_map(g, &self.broadcast_full(v(a), v(b), mode, false)?, |x, y| {
                        x * y
                    });
                let gb_full =
                    Self::zip_map(g, &self.broadcast_full(v(a), v(b), mode, true)?, |x, y| {
                        x * y
                    });
                vec![
                    (*a, kernels::reduce_to(&ga_full, v(a), true, mode)),
                    (*b, kernels::reduce_to(&gb_full, v(b), false, mode)),
                ]
            }
            Op::Div(a, b) => {
                let mode = kernels::broadcast(v(a).shape(), v(b).shape())?;
                let bf = self.broadcast_full(v(a), v(b), mode, false)?;
                let af = self.broadcast_full(v(a), v(b), mode, true)?;
                let ga_full = Self::zip_map(g, &bf, |gv, bv| gv / bv);
                let t = Self::zip_map(&af, &bf, |av, bv| -av / (bv * bv));
                let gb_full = Self::zip_map(g, &t, |gv, tv| gv * tv);
                vec![
                    (*a, kernels::reduce_to(&ga_full, v(a), true, mode)),
                    (*b, kernels::reduce_to(&gb_full, v(b), false, mode)),
                ]
            }
            Op::MatMul(a, b) => {
                let ga = kernels::matmul(g, &kernels::transpose(v(b)))?;
                let gb = kernels::matmul(&kernels::transpose(v(a)), g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddScalar(x) => vec![(*x, g.clone())],
            Op::MulScalar(x, c) => vec![(*x, g.map(|gv| gv * c))],
            Op::Neg(x) => vec![(*x, g.map(|gv| -gv))],
            Op::Relu(x) => vec![(*x, Self::masked(g, v(x), |xv| xv > 0.0))],
            Op::Exp(x) => vec![(*x, Self::zip_map(g, &node.value, |gv, y| gv * y))],
            Op::Log(x) => vec![(*x, Self::zip_map(g, v(x), |gv, xv| gv / xv))],
            Op::Log2(x) => vec![(*x, Self::zip_map(g, v(x), |gv, xv| gv / (xv * LN_2)))],
            Op::Pow2(x) => vec![(*x, Self::zip_map(g, &node.value, |gv, y| gv * y * LN_2))],
            Op::Sqrt(x) => vec![(*x, Self::zip_map(g, &node.value, |gv, y| gv * 0.5 / y))],
            Op::Sum(x) => vec![(*x, Tensor::full(v(x).shape(), g.data()[0]))],
            Op::Mean(x) => {
                let n = v(x).len() as f64;
                vec![(*x, Tensor::full(v(x).shape(), g.data()[0] / n))]
            }
            Op::ChannelMean(x) => {
                let c = g.len();
                let rows = (v(x).len() / c) as f64;
                let data = (0..v(x).len()).map(|i| g.data()[i % c] / rows).collect();
                vec![(
                    *x,
                    Tensor::new(v(x).shape().to_vec(), data).expect("same length"),
                )]
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let gx = self.hook_or(Primitive::Clamp, v(x), g, || match self.clamp_grad {
                    ClampGrad::Ste => g.clone(),
                    ClampGrad::Clipped => Self::masked(g, v(x), |xv| lo <= xv && xv <= hi),
                });
                vec![(*x, gx)]
            }
            Op::Step(x, kind) => {
                let prim = match kind {
                    StepKind::Floor => Primitive::Floor,
                    StepKind::Ceil => Primitive::Ceil,
                    StepKind::Trunc => Primitive::Trunc,
                    StepKind::RoundHalfEven | StepKind::Mode(_) => Primitive::Round,
                    StepKind::TopBits(_) => Primitive::TopBits,
                };
                vec![(*x, self.hook_or(prim, v(x), g, || g.clone()))]
            }
            Op::Overflow(x, fmt) => {
                let gx = self.hook_or(Primitive::Overflow, v(x), g, || {
                    if self.clamp_grad == ClampGrad::Ste || fmt.overflow().is_wrap() {
                        g.clone()
                    } else {
                        Self::masked(g, v(x), |xv| kernels::in_overflow_range(xv, fmt))
                    }
                });
                vec![(*x, gx)]
            }
            Op::CrossEntropy(x, labels) => {
                let lsm = kernels::log_softmax_rows(v(x))?;
                let c = v(x).shape()[1];
                let n = labels.len().max(1) as f64;
                let scale = g.data()[0] / n;
                let mut data: Vec<f64> = lsm.data().iter().map(|l| l.exp() * scale).collect();
                for (i, &y) in labels.iter().enumerate() {
                    data[i * c + y] -= scale;
                }
                vec![(*x, Tensor::new(v(x).shape().to_vec(), data)?)]
            }
        })
    }

    /// The `left` (or right) operand materialized at the broadcast output shape.
    fn broadcast_full(&self, a: &Tensor, b: &Tensor, mode: Bcast, left: bool) -> Result<Tensor> {
        let src = if left { a } else { b };
        let out_shape = match mode {
            Bcast::Same | Bcast::RightScalar | Bcast::RightChannel => a.shape(),
            Bcast::LeftScalar | Bcast::LeftChannel => b.shape(),
        };
        if src.shape() == out_shape {
            return Ok(src.clone());
        }
        let zeros = Tensor::zeros(out_shape);
        Ok(kernels::binary(&zeros, src, |_, y| y)?.0)
    }
}

impl Ops for Tape {
    type T = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    fn param(&mut self, name: &str, t: &Tensor) -> Var {
        // A name maps to one leaf per tape so reuse accumulates into one gradient.
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return *v;
        }
        let v = self.leaf(t.clone(), true);
        self.params.push((name.to_string(), v));
        v
    }

    fn value<'a>(&'a self, x: &'a Var) -> &'a Tensor {
        &self.nodes[x.0].value
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.binop(*a, *b, |x, y| Eval.add(x, y), Op::Add(*a, *b))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.binop(*a, *b, |x, y| Eval.sub(x, y), Op::Sub(*a, *b))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.binop(*a, *b, |x, y| Eval.mul(x, y), Op::Mul(*a, *b))
    }

    fn div(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.binop(*a, *b, |x, y| Eval.div(x, y), Op::Div(*a, *b))
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.binop(*a, *b, |x, y| Eval.matmul(x, y), Op::MatMul(*a, *b))
    }

    fn add_scalar(&mut self, x: &Var, c: f64) -> Result<Var> {
        self.unary(*x, |t| Eval.add_scalar(t, c), Op::AddScalar(*x))
    }

    fn mul_scalar(&mut self, x: &Var, c: f64) -> Result<Var> {
        self.unary(*x, |t| Eval.mul_scalar(t, c), Op::MulScalar(*x, c))
    }

    fn neg(&mut self, x: &Var) -> Result<Var> {
        self.unary(*x, |t| Eval.neg(t), Op::Neg(*x))
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        self.unary(*x, |t| Eval.relu(t), Op::Relu(*x))
    }

    fn exp(&mut self, x: &Var) -> Result<Var> {
        self.unary(*x, |t| Eval.exp(t), Op::Exp(*x))
    }

    fn log(&mut self, x: &Var) -> Result<Var> {
        self.unary(*x, |t| Eval.log(t), Op::Log(*x))
    }

    fn log2(&mut self, x: &Var) -> Result<Var> {
        self.unary(*x, |t| Eval.log2(t), Op::Log2(*x))
    }

    fn pow2(&mut self, x: &Var) -> Result<Var> {
        self.unary(*x, |t| Eval.pow2(t), Op::Pow2(*x))
    }

    fn sqrt(&mut self, x: &Var) -> Result<Var> {
        self.unary(*x, |t| Eval.sqrt(t), Op::Sqrt(*x))
    }

    fn sum(&mut self, x: &Var) -> Result<Var> {
        self.unary(*x, |t| Eval.sum(t), Op::Sum(*x))
    }

    fn mean(&mut self, x: &Var) -> Result<Var> {
        self.unary(*x, |t| Eval.mean(t), Op::Mean(*x))
    }

    fn channel_mean(&mut self, x: &Var) -> Result<Var> {
        self.unary(*x, |t| Eval.channel_mean(t), Op::ChannelMean(*x))
    }

    fn clamp(&mut self, x: &Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(*x, |t| Eval.clamp(t, lo, hi), Op::Clamp(*x, lo, hi))
    }

    fn step(&mut self, x: &Var, kind: StepKind) -> Result<Var> {
        self.unary(*x, |t| Eval.step(t, kind), Op::Step(*x, kind))
    }

    fn overflow(&mut self, x: &Var, fmt: &FxFormat) -> Result<Var> {
        self.unary(*x, |t| Eval.overflow(t, fmt), Op::Overflow(*x, *fmt))
    }

    fn cross_entropy(&mut self, logits: &Var, labels: &[usize]) -> Result<Var> {
        let labels = labels.to_vec();
        let l2 = labels.clone();
        self.unary(
            *logits,
            move |t| Eval.cross_entropy(t, &l2),
            Op::CrossEntropy(*logits, labels),
        )
    }
}

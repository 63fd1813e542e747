use super::kernels;
use super::{Ops, StepKind};
use crate::fxcore::FxFormat;
use crate::{Result, Tensor};

/// Tape-free evaluation of [`Ops`]; values are plain tensors.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl Ops for Eval {
    type T = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn param(&mut self, _name: &str, t: &Tensor) -> Tensor {
        t.clone()
    }

    fn value<'a>(&'a self, x: &'a Tensor) -> &'a Tensor {
        x
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Ok(kernels::binary(a, b, |x, y| x + y)?.0)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Ok(kernels::binary(a, b, |x, y| x - y)?.0)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Ok(kernels::binary(a, b, |x, y| x * y)?.0)
    }

    fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Ok(kernels::div(a, b)?.0)
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        kernels::matmul(a, b)
    }

    fn add_scalar(&mut self, x: &Tensor, c: f64) -> Result<Tensor> {
        Ok(x.map(|v| v + c))
    }

    fn mul_scalar(&mut self, x: &Tensor, c: f64) -> Result<Tensor> {
        Ok(x.map(|v| v * c))
    }

    fn neg(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(x.map(|v| -v))
    }

    fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(x.map(|v| v.max(0.0)))
    }

    fn exp(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(x.map(f64::exp))
    }

    fn log(&mut self, x: &Tensor) -> Result<Tensor> {
        kernels::log(x, false)
    }

    fn log2(&mut self, x: &Tensor) -> Result<Tensor> {
        kernels::log(x, true)
    }

    fn pow2(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(x.map(kernels::pow2))
    }

    fn sqrt(&mut self, x: &Tensor) -> Result<Tensor> {
        kernels::sqrt(x)
    }

    fn sum(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(x.data().iter().sum()))
    }

    fn mean(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(
            x.data().iter().sum::<f64>() / x.len() as f64,
        ))
    }

    fn channel_mean(&mut self, x: &Tensor) -> Result<Tensor> {
        kernels::channel_mean(x)
    }

    fn clamp(&mut self, x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
        Ok(x.map(|v| v.max(lo).min(hi)))
    }

    fn step(&mut self, x: &Tensor, kind: StepKind) -> Result<Tensor> {
        kernels::step(x, kind)
    }

    fn overflow(&mut self, x: &Tensor, fmt: &FxFormat) -> Result<Tensor> {
        Ok(kernels::overflow(x, fmt))
    }

    fn cross_entropy(&mut self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        Ok(Tensor::scalar(kernels::cross_entropy(logits, labels)?))
    }
}

/// [`Eval`] that also keeps the input of every cast site it passes, for
/// calibration.
#[derive(Debug, Default, Clone)]
pub struct Record {
    pub seen: std::collections::BTreeMap<String, Tensor>,
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(fn $name(&mut self, $($arg: $ty),*) -> Result<Tensor> {
            Eval.$name($($arg),*)
        })*
    };
}

impl Ops for Record {
    type T = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn param(&mut self, _name: &str, t: &Tensor) -> Tensor {
        t.clone()
    }

    fn value<'a>(&'a self, x: &'a Tensor) -> &'a Tensor {
        x
    }

    fn observe(&mut self, site: &str, x: &Tensor) {
        self.seen.insert(site.to_string(), x.clone());
    }

    delegate! {
        add(a: &Tensor, b: &Tensor);
        sub(a: &Tensor, b: &Tensor);
        mul(a: &Tensor, b: &Tensor);
        div(a: &Tensor, b: &Tensor);
        matmul(a: &Tensor, b: &Tensor);
        add_scalar(x: &Tensor, c: f64);
        mul_scalar(x: &Tensor, c: f64);
        neg(x: &Tensor);
        relu(x: &Tensor);
        exp(x: &Tensor);
        log(x: &Tensor);
        log2(x: &Tensor);
        pow2(x: &Tensor);
        sqrt(x: &Tensor);
        sum(x: &Tensor);
        mean(x: &Tensor);
        channel_mean(x: &Tensor);
        clamp(x: &Tensor, lo: f64, hi: f64);
        step(x: &Tensor, kind: StepKind);
        overflow(x: &Tensor, fmt: &FxFormat);
        cross_entropy(logits: &Tensor, labels: &[usize]);
    }
}

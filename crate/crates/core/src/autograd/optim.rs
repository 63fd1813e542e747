use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};

/// In-place parameter update from a gradient map.
///
/// Parameters without a gradient entry are left untouched. A non-finite
/// gradient aborts the whole step before any parameter changes.
pub trait Optimizer {
    fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()>;
    fn lr(&self) -> f64;
    fn set_lr(&mut self, lr: f64);
}

fn validate(params: &BTreeMap<String, Tensor>, grads: &BTreeMap<String, Tensor>) -> Result<()> {
    for (name, g) in grads {
        if let Some(i) = g.data().iter().position(|v| v.is_nan()) {
            return Err(Error::NaN(format!("gradient of `{name}` at index {i}")));
        }
        if let Some(p) = params.get(name) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient of `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        validate(params, grads)?;
        for (name, p) in params.iter_mut() {
            if let Some(g) = grads.get(name) {
                for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *pv -= self.lr * gv;
                }
            }
        }
        Ok(())
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            state: BTreeMap::new(),
        }
    }

    /// Names of the parameters that have optimizer state.
    pub fn state_keys(&self) -> Vec<String> {
        self.state.keys().cloned().collect()
    }
}

impl Optimizer for Adam {
    fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        validate(params, grads)?;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - beta1.powi(st.t);
            let bc2 = 1.0 - beta2.powi(st.t);
            for (i, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * gv;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * gv * gv;
                let mhat = st.m[i] / bc1;
                let vhat = st.v[i] / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    fn lr(&self) -> f64 {
        self.cfg.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn sgd_step() {
        let mut p = one("w", 1.0);
        Sgd { lr: 0.1 }.step(&mut p, &one("w", 0.5)).unwrap();
        assert!((p["w"].data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step() {
        // t=1: mhat = g, vhat = g^2, so the step is lr * g / (|g| + eps).
        let mut p = one("w", 1.0);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut p, &one("w", 1.0)).unwrap();
        let expected = 1.0 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p["w"].data()[0] - expected).abs() < 1e-15);
        assert!((1.0 - p["w"].data()[0] - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = one("w", 0.7);
        Adam::new(AdamConfig::default())
            .step(&mut p, &one("w", 0.0))
            .unwrap();
        assert_eq!(p["w"].data()[0], 0.7);
        Sgd { lr: 1.0 }.step(&mut p, &one("w", 0.0)).unwrap();
        assert_eq!(p["w"].data()[0], 0.7);
    }

    #[test]
    fn nan_gradient_fails_fast() {
        let mut p = one("w", 0.7);
        p.insert("a".into(), Tensor::scalar(1.0));
        let mut g = one("w", f64::NAN);
        g.insert("a".into(), Tensor::scalar(1.0));
        assert!(matches!(
            Adam::new(AdamConfig::default()).step(&mut p, &g),
            Err(Error::NaN(_))
        ));
        assert_eq!(p["a"].data()[0], 1.0);
    }

    #[test]
    fn missing_gradient_leaves_param() {
        let mut p = one("w", 0.7);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut p, &BTreeMap::new()).unwrap();
        assert_eq!(p["w"].data()[0], 0.7);
        assert!(opt.state_keys().is_empty());
    }
}

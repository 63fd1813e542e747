use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LayerSpec, ModelConfig, QuantConfig, QuantMode};
use crate::autograd::{Ops, ParamStore, Record};
use crate::baselines::CastSites;
use crate::fxcore::FxFormat;
use crate::khot::{CostSite, KHotCode, KHotConfig, KHotSite, SiteKind};
use crate::qfxlayers::{
    fold_batchnorm, fold_batchnorm_op, initial_ibit, qfx_add, qfx_batchnorm, qfx_residual,
    BatchNormSites, BinaryPoint, BinarySites, CastSite, DiffCastConfig, Granularity,
};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Layer {
    /// Real-arithmetic `x W + b`.
    Linear {
        name: String,
        inputs: usize,
        outputs: usize,
    },
    /// BatchNorm evaluated as `alpha * x + eta` through quantized sites.
    Batchnorm {
        name: String,
        channels: usize,
        eps: f64,
        sites: BatchNormSites,
        /// Replaces the multiplier cast when present.
        khot: Option<KHotSite>,
    },
    Relu {
        site: CastSite,
    },
    /// `x + body(x)`.
    Residual {
        name: String,
        body: Vec<Layer>,
        sites: BinarySites,
    },
}

/// An MLP of real matmuls and quantized element-wise layers, ending in a real
/// linear classifier named `head`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub inputs: usize,
    pub classes: usize,
    pub layers: Vec<Layer>,
}

fn build_layers(specs: &[LayerSpec], prefix: &str, width: &mut usize) -> Result<Vec<Layer>> {
    let mut out = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let name = format!("{prefix}l{i}");
        out.push(match spec {
            LayerSpec::Linear { out } => {
                if *out == 0 {
                    return Err(Error::Config(format!("layer `{name}` has zero outputs")));
                }
                let l = Layer::linear(name, *width, *out);
                *width = *out;
                l
            }
            LayerSpec::Batchnorm => Layer::Batchnorm {
                sites: BatchNormSites::identity(&name),
                channels: *width,
                eps: BN_EPS,
                name,
                khot: None,
            },
            LayerSpec::Relu => Layer::Relu {
                site: CastSite::identity(format!("{name}.act")),
            },
            LayerSpec::Residual { layers } => {
                let before = *width;
                let body = build_layers(layers, &format!("{name}."), width)?;
                if *width != before {
                    return Err(Error::Config(format!(
                        "residual `{name}` maps {before} channels to {width}"
                    )));
                }
                Layer::Residual {
                    sites: BinarySites::identity(&format!("{name}.res")),
                    name,
                    body,
                }
            }
        });
    }
    Ok(out)
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

fn get<'a>(p: &'a ParamStore, name: &str) -> Result<&'a Tensor> {
    p.get(name)
        .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
}

fn param<O: Ops>(o: &mut O, p: &ParamStore, name: &str) -> Result<O::T> {
    Ok(o.param(name, get(p, name)?))
}

/// Batch mean and variance seen by each BatchNorm layer in one forward.
pub type BatchStats = BTreeMap<String, (Tensor, Tensor)>;

impl Layer {
    fn linear(name: String, inputs: usize, outputs: usize) -> Self {
        Layer::Linear {
            name,
            inputs,
            outputs,
        }
    }

    fn forward<O: Ops>(
        &self,
        o: &mut O,
        p: &ParamStore,
        x: &O::T,
        batch: &mut Option<&mut BatchStats>,
    ) -> Result<O::T> {
        match self {
            Layer::Linear { name, inputs, .. } => {
                if o.value(x).channels() != *inputs {
                    return Err(Error::Shape(format!(
                        "`{name}` expects {inputs} features, got {:?}",
                        o.value(x).shape()
                    )));
                }
                let w = param(o, p, &format!("{name}.weight"))?;
                let b = param(o, p, &format!("{name}.bias"))?;
                let y = o.matmul(x, &w)?;
                o.add(&y, &b)
            }
            Layer::Batchnorm {
                name,
                sites,
                khot,
                eps,
                ..
            } => {
                let gamma = param(o, p, &format!("{name}.gamma"))?;
                let beta = param(o, p, &format!("{name}.beta"))?;
                let (mean, var) = match batch {
                    Some(stats) => {
                        let mean = o.channel_mean(x)?;
                        let d = o.sub(x, &mean)?;
                        let d2 = o.mul(&d, &d)?;
                        let var = o.channel_mean(&d2)?;
                        stats.insert(
                            name.clone(),
                            (o.value(&mean).clone(), o.value(&var).clone()),
                        );
                        (mean, var)
                    }
                    None => (
                        o.constant(get(p, &format!("{name}.running_mean"))?.clone()),
                        o.constant(get(p, &format!("{name}.running_var"))?.clone()),
                    ),
                };
                let (a, e) = fold_batchnorm_op(o, &gamma, &beta, &mean, &var, *eps)?;
                match khot {
                    None => qfx_batchnorm(o, p, sites, x, &a, &e),
                    Some(k) => {
                        let aq = k.forward(o, p, &a)?;
                        let xq = sites.mul.rhs.forward(o, p, x)?;
                        let prod = o.mul(&xq, &aq)?;
                        let prod = sites.mul.out.forward(o, p, &prod)?;
                        qfx_add(o, p, &sites.add, &prod, &e)
                    }
                }
            }
            Layer::Relu { site } => {
                let r = o.relu(x)?;
                site.forward(o, p, &r)
            }
            Layer::Residual { body, sites, .. } => {
                let mut h = x.clone();
                for l in body {
                    h = l.forward(o, p, &h, batch)?;
                }
                qfx_residual(o, p, sites, x, &h)
            }
        }
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Layer)) {
        f(self);
        if let Layer::Residual { body, .. } = self {
            body.iter().for_each(|l| l.visit(f));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Layer)) {
        f(self);
        if let Layer::Residual { body, .. } = self {
            body.iter_mut().for_each(|l| l.visit_mut(f));
        }
    }
}

impl Model {
    pub fn build(cfg: &ModelConfig, inputs: usize, classes: usize) -> Result<Self> {
        if inputs == 0 || classes < 2 {
            return Err(Error::Config(format!("{inputs} inputs, {classes} classes")));
        }
        let mut width = inputs;
        let mut layers = build_layers(&cfg.layers, "", &mut width)?;
        layers.push(Layer::linear("head".into(), width, classes));
        Ok(Self {
            inputs,
            classes,
            layers,
        })
    }

    fn for_each<'a>(&'a self, mut f: impl FnMut(&'a Layer)) {
        self.layers.iter().for_each(|l| l.visit(&mut f));
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&mut Layer)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(&mut f));
    }

    /// Shapes of every trainable weight (binary points excluded).
    pub fn weight_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.for_each(|l| match l {
            Layer::Linear {
                name,
                inputs,
                outputs,
                ..
            } => {
                out.push((format!("{name}.weight"), vec![*inputs, *outputs]));
                out.push((format!("{name}.bias"), vec![*outputs]));
            }
            Layer::Batchnorm { name, channels, .. } => {
                out.push((format!("{name}.gamma"), vec![*channels]));
                out.push((format!("{name}.beta"), vec![*channels]));
            }
            _ => {}
        });
        out
    }

    /// BatchNorm running statistics: stored with the parameters, never trained.
    pub fn buffer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.for_each(|l| {
            if let Layer::Batchnorm { name, channels, .. } = l {
                out.push((format!("{name}.running_mean"), vec![*channels]));
                out.push((format!("{name}.running_var"), vec![*channels]));
            }
        });
        out
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Uniform `+-1/sqrt(fan_in)` weights, zero biases, unit BatchNorm scales
    /// and variances.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        for (name, shape) in self.weight_shapes().into_iter().chain(self.buffer_shapes()) {
            let n: usize = shape.iter().product();
            let t = if name.ends_with(".weight") {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                Tensor::new(
                    shape,
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
                )
                .expect("shape")
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                Tensor::full(&shape, 1.0)
            } else {
                Tensor::zeros(&shape)
            };
            p.insert(name, t);
        }
        p
    }

    /// Forward with BatchNorm running statistics folded in.
    pub fn forward<O: Ops>(&self, o: &mut O, p: &ParamStore, x: &O::T) -> Result<O::T> {
        self.forward_with(o, p, x, &mut None)
    }

    /// Forward normalizing with batch statistics, which are returned.
    pub fn forward_batch_stats<O: Ops>(
        &self,
        o: &mut O,
        p: &ParamStore,
        x: &O::T,
    ) -> Result<(O::T, BatchStats)> {
        let mut stats = BatchStats::new();
        let y = self.forward_with(o, p, x, &mut Some(&mut stats))?;
        Ok((y, stats))
    }

    fn forward_with<O: Ops>(
        &self,
        o: &mut O,
        p: &ParamStore,
        x: &O::T,
        batch: &mut Option<&mut BatchStats>,
    ) -> Result<O::T> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(o, p, &h, batch)?;
        }
        Ok(h)
    }

    /// Exponential moving average of the running statistics toward `stats`.
    pub fn update_running_stats(&self, p: &mut ParamStore, stats: &BatchStats) -> Result<()> {
        for (name, (mean, var)) in stats {
            for (key, batch) in [("running_mean", mean), ("running_var", var)] {
                let key = format!("{name}.{key}");
                let r = p
                    .get_mut(&key)
                    .ok_or_else(|| Error::Config(format!("missing buffer `{key}`")))?;
                for (rv, bv) in r.data_mut().iter_mut().zip(batch.data()) {
                    *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * bv;
                }
            }
        }
        Ok(())
    }

    /// Folded `(alpha, eta)` of a BatchNorm layer at its running statistics.
    pub fn folded(&self, p: &ParamStore, layer: &str) -> Result<(Tensor, Tensor)> {
        let mut eps = None;
        self.for_each(|l| {
            if let Layer::Batchnorm { name, eps: e, .. } = l {
                if name == layer {
                    eps = Some(*e);
                }
            }
        });
        let eps = eps.ok_or_else(|| Error::Config(format!("no BatchNorm layer `{layer}`")))?;
        let g = |k: &str| get(p, &format!("{layer}.{k}"));
        fold_batchnorm(
            g("gamma")?,
            g("beta")?,
            g("running_mean")?,
            g("running_var")?,
            eps,
        )
    }

    pub fn cast_sites(&self) -> Vec<&CastSite> {
        let mut out = Vec::new();
        self.for_each(|l| match l {
            Layer::Batchnorm { sites, khot, .. } => {
                let [a, b, c] = sites.mul.sites();
                if khot.is_none() {
                    out.push(a);
                }
                out.extend([b, c]);
                out.extend(sites.add.sites());
            }
            Layer::Relu { site } => out.push(site),
            Layer::Residual { sites, .. } => out.extend(sites.sites()),
            Layer::Linear { .. } => {}
        });
        out
    }

    pub fn khot_sites(&self) -> Vec<&KHotSite> {
        let mut out = Vec::new();
        self.for_each(|l| {
            if let Layer::Batchnorm { khot: Some(k), .. } = l {
                out.push(k);
            }
        });
        out
    }

    /// Every named site, cast or K-hot.
    pub fn site_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.cast_sites().iter().map(|s| s.name.clone()).collect();
        names.extend(self.khot_sites().iter().map(|s| s.name.clone()));
        names.sort();
        names
    }

    /// Binary-point parameter names currently in use.
    pub fn ibit_params(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .cast_sites()
            .into_iter()
            .filter(|s| s.is_learnable())
            .map(CastSite::ibit_param)
            .collect();
        out.extend(
            self.khot_sites()
                .into_iter()
                .filter(|s| s.is_learnable())
                .map(KHotSite::ibit_param),
        );
        out.sort();
        out
    }

    pub fn is_quantized(&self) -> bool {
        self.cast_sites().iter().any(|s| s.cfg.is_some()) || !self.khot_sites().is_empty()
    }

    /// Drops every quantizer.
    pub fn dequantized(&self) -> Model {
        let mut m = self.clone();
        m.for_each_mut(|l| {
            if let Layer::Batchnorm { khot, .. } = l {
                *khot = None;
            }
        });
        for s in m.cast_sites_mut() {
            s.cfg = None;
        }
        m
    }

    /// Sets every site from `q`. Learnable binary points still need
    /// [`Model::init_binary_points`].
    pub fn quantized(&self, q: &QuantConfig) -> Result<Model> {
        let mut m = self.dequantized();
        if q.mode == QuantMode::None {
            return Ok(m);
        }
        let names = m.site_names();
        if let Some(unknown) = q.sites.keys().find(|k| !names.contains(k)) {
            return Err(Error::Config(format!(
                "quant.sites names unknown site `{unknown}`"
            )));
        }
        let wbit_of = |name: &str| q.sites.get(name).copied().unwrap_or(q.wbit);
        let binary_point = |w: u32| match q.binary_point {
            BinaryPoint::Fixed(i) if i > w => {
                Err(Error::Config(format!("fixed ibit {i} exceeds wbit {w}")))
            }
            bp => Ok(bp),
        };
        for s in m.cast_sites_mut() {
            let w = wbit_of(&s.name);
            let fmt = FxFormat::new(w, 0, q.signed, q.round, q.overflow)?;
            s.cfg = Some(DiffCastConfig {
                binary_point: binary_point(w)?,
                ..DiffCastConfig::fixed(fmt)
            });
        }
        if q.mode == QuantMode::Khot {
            let mut err = None;
            m.for_each_mut(|l| {
                if let Layer::Batchnorm { sites, khot, .. } = l {
                    let w = wbit_of(&sites.mul.lhs.name);
                    match binary_point(w) {
                        Ok(bp) => {
                            *khot = Some(KHotSite::new(
                                sites.mul.lhs.name.clone(),
                                KHotConfig {
                                    wbit: w,
                                    k: q.k,
                                    binary_point: bp,
                                },
                            ));
                            sites.mul.lhs.cfg = None;
                        }
                        Err(e) => err = Some(e),
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        Ok(m)
    }

    /// Initializes missing learnable binary points from the real-model input
    /// of each site on `x`. Existing ones are kept.
    pub fn init_binary_points(&self, params: &mut ParamStore, x: &Tensor) -> Result<()> {
        let seen = crate::baselines::calibrate(&self.dequantized(), params, x)?;
        let mut todo: Vec<(String, u32, bool, Granularity)> = Vec::new();
        for s in self.cast_sites() {
            if let Some(DiffCastConfig {
                wbit,
                signed,
                binary_point: BinaryPoint::Learnable(g),
                ..
            }) = s.cfg
            {
                todo.push((s.name.clone(), wbit, signed, g));
            }
        }
        for k in self.khot_sites() {
            if let BinaryPoint::Learnable(g) = k.cfg.binary_point {
                todo.push((k.name.clone(), k.cfg.wbit, false, g));
            }
        }
        for (name, wbit, signed, g) in todo {
            let key = format!("{name}.I");
            if params.contains_key(&key) {
                continue;
            }
            let x = seen.get(&name).ok_or_else(|| {
                Error::Config(format!("site `{name}` not reached during calibration"))
            })?;
            params.insert(key, initial_ibit(x, wbit, signed, g));
        }
        Ok(())
    }

    /// K-hot codes of the folded multipliers, per K-hot site.
    pub fn khot_codes(&self, params: &ParamStore) -> Result<BTreeMap<String, Vec<KHotCode>>> {
        let mut layers = Vec::new();
        self.for_each(|l| {
            if let Layer::Batchnorm {
                name,
                khot: Some(k),
                ..
            } = l
            {
                layers.push((name, k));
            }
        });
        layers
            .into_iter()
            .map(|(name, k)| {
                let (alpha, _) = self.folded(params, name)?;
                Ok((k.name.clone(), k.codes(params, &alpha)?))
            })
            .collect()
    }

    /// Static operation counts for one input row.
    pub fn cost_sites(&self, params: &ParamStore) -> Result<Vec<CostSite>> {
        let mut out = Vec::new();
        let mut err = None;
        self.for_each(|l| match l {
            Layer::Linear {
                name,
                inputs,
                outputs,
                ..
            } => {
                out.push(CostSite::new(
                    format!("{name}.matmul"),
                    SiteKind::MatMul {
                        m: 1,
                        k: *inputs,
                        n: *outputs,
                    },
                ));
                out.push(CostSite::new(
                    format!("{name}.bias"),
                    SiteKind::Add { elements: *outputs },
                ));
            }
            Layer::Batchnorm {
                name,
                channels,
                khot,
                ..
            } => {
                let kind = match khot {
                    None => SiteKind::Affine {
                        channels: *channels,
                        spatial: 1,
                    },
                    Some(k) => match self
                        .folded(params, name)
                        .and_then(|(a, _)| k.codes(params, &a))
                    {
                        Ok(codes) => SiteKind::KHotAffine { codes, spatial: 1 },
                        Err(e) => {
                            err = Some(e);
                            return;
                        }
                    },
                };
                out.push(CostSite::new(name.clone(), kind));
            }
            Layer::Residual { name, .. } => {
                let width = self.width_before(name);
                out.push(CostSite::new(
                    format!("{name}.res"),
                    SiteKind::Add { elements: width },
                ));
            }
            Layer::Relu { .. } => {}
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    fn width_before(&self, residual: &str) -> usize {
        let mut width = self.inputs;
        let mut found = None;
        self.for_each(|l| {
            if found.is_some() {
                return;
            }
            match l {
                Layer::Residual { name, .. } if name == residual => found = Some(width),
                Layer::Linear { outputs, .. } => width = *outputs,
                _ => {}
            }
        });
        found.unwrap_or(width)
    }
}

impl CastSites for Model {
    fn cast_sites_mut(&mut self) -> Vec<&mut CastSite> {
        let mut out: Vec<&mut CastSite> = Vec::new();
        fn collect<'a>(layers: &'a mut [Layer], out: &mut Vec<&'a mut CastSite>) {
            for l in layers {
                match l {
                    Layer::Batchnorm { sites, khot, .. } => {
                        let [a, b, c] = sites.mul.sites_mut();
                        if khot.is_none() {
                            out.push(a);
                        }
                        out.extend([b, c]);
                        out.extend(sites.add.sites_mut());
                    }
                    Layer::Relu { site } => out.push(site),
                    Layer::Residual { body, sites, .. } => {
                        collect(body, out);
                        out.extend(sites.sites_mut());
                    }
                    Layer::Linear { .. } => {}
                }
            }
        }
        collect(&mut self.layers, &mut out);
        out
    }

    fn run(&self, o: &mut Record, params: &ParamStore, x: &Tensor) -> Result<()> {
        self.forward(o, params, x).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Eval, Tape};
    use crate::harness::config::ModelConfig;

    fn small() -> Model {
        let cfg = ModelConfig {
            layers: vec![
                LayerSpec::Linear { out: 4 },
                LayerSpec::Batchnorm,
                LayerSpec::Relu,
            ],
        };
        Model::build(&cfg, 2, 3).unwrap()
    }

    #[test]
    fn parameter_count_closed_form() {
        let m = small();
        // (2*4 + 4) + 2*4 + (4*3 + 3)
        assert_eq!(m.weight_count(), 12 + 8 + 15);
        let d = Model::build(&ModelConfig::default(), 2, 3).unwrap();
        let h = 32;
        assert_eq!(
            d.weight_count(),
            (2 * h + h) + 2 * h + (h * h + h) + 2 * h + (h * h + h) + 2 * h + (h * 3 + 3)
        );
        assert_eq!(d.init_params(0).len(), 20);
    }

    #[test]
    fn malformed_layer_lists() {
        let bad = ModelConfig {
            layers: vec![LayerSpec::Residual {
                layers: vec![LayerSpec::Linear { out: 3 }],
            }],
        };
        assert!(Model::build(&bad, 2, 3).is_err());
        let zero = ModelConfig {
            layers: vec![LayerSpec::Linear { out: 0 }],
        };
        assert!(Model::build(&zero, 2, 3).is_err());
        assert!(Model::build(&ModelConfig::default(), 2, 1).is_err());
    }

    #[test]
    fn unquantized_forward_is_plain_arithmetic() {
        let m = small();
        let p = m.init_params(3);
        let x = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let y = m.forward(&mut Eval, &p, &x).unwrap();
        let w = &p["l0.weight"];
        let w2 = &p["head.weight"];
        for r in 0..2 {
            let mut h = [0.0; 4];
            for (j, hj) in h.iter_mut().enumerate() {
                let z = x.data()[r * 2] * w.data()[j]
                    + x.data()[r * 2 + 1] * w.data()[4 + j]
                    + p["l0.bias"].data()[j];
                // fresh running stats: mean 0, variance 1
                *hj = (z / (1.0 + BN_EPS).sqrt()).max(0.0);
            }
            for c in 0..3 {
                let want: f64 = (0..4).map(|j| h[j] * w2.data()[j * 3 + c]).sum::<f64>()
                    + p["head.bias"].data()[c];
                assert!((y.data()[r * 3 + c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quantize_and_init_binary_points() {
        let m = small();
        let mut p = m.init_params(1);
        let q = m.quantized(&QuantConfig::default()).unwrap();
        assert_eq!(q.cast_sites().len(), 7);
        let x = Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.25, -0.3, 1.1]).unwrap();
        q.init_binary_points(&mut p, &x).unwrap();
        assert_eq!(q.ibit_params().len(), 7);
        assert!(q.ibit_params().iter().all(|n| p.contains_key(n)));

        let k = m
            .quantized(&QuantConfig {
                mode: QuantMode::Khot,
                ..QuantConfig::default()
            })
            .unwrap();
        assert_eq!(k.cast_sites().len(), 6);
        assert_eq!(k.khot_sites().len(), 1);
        // same binary-point names, so a QFX checkpoint carries over
        assert_eq!(k.ibit_params(), q.ibit_params());

        let mut bad = QuantConfig::default();
        bad.sites.insert("nope".into(), 4);
        assert!(m.quantized(&bad).is_err());
    }

    #[test]
    fn tape_and_eval_agree() {
        let m = Model::build(&ModelConfig::default(), 2, 3).unwrap();
        let mut p = m.init_params(5);
        let q = m
            .quantized(&QuantConfig {
                wbit: 6,
                ..QuantConfig::default()
            })
            .unwrap();
        let x = Tensor::matrix(4, 2, vec![0.5, -1.0, 2.0, 0.25, -0.3, 1.1, 0.0, -2.2]).unwrap();
        q.init_binary_points(&mut p, &x).unwrap();
        let e = q.forward(&mut Eval, &p, &x).unwrap();
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let y = q.forward(&mut t, &p, &xv).unwrap();
        assert!(t.value(&y).bit_eq(&e));
    }

    #[test]
    fn cost_of_khot_model_has_no_elementwise_multiplies() {
        let m = Model::build(&ModelConfig::default(), 2, 3).unwrap();
        let mut p = m.init_params(2);
        let k = m
            .quantized(&QuantConfig {
                mode: QuantMode::Khot,
                ..QuantConfig::default()
            })
            .unwrap();
        k.init_binary_points(&mut p, &Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap())
            .unwrap();
        let sites = k.cost_sites(&p).unwrap();
        let r = crate::khot::cost_report(&sites);
        for (name, c) in &r.per_site {
            if !name.contains("matmul") {
                assert_eq!(c.multiplies, 0, "{name}");
            }
        }
        assert_eq!(r.per_site["l3.res"].adds, 32);
        let dense = crate::khot::cost_report(&m.cost_sites(&p).unwrap());
        assert_eq!(dense.per_site["l1"].multiplies, 32);
    }
}

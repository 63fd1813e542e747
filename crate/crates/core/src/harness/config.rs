use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::ClampGrad;
use crate::fxcore::{OverflowMode, RoundMode};
use crate::qfxlayers::{BinaryPoint, Granularity};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub quant: QuantConfig,
    pub train: TrainConfig,
    pub khot: KHotPhase,
    pub ptq: PtqConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TwoMoons,
    Spiral,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Total points across all classes (synthetic tasks).
    pub samples: usize,
    pub classes: usize,
    pub noise: f64,
    pub test_fraction: f64,
    /// Source file for `kind = "csv"`: numeric features, integer label last.
    pub path: Option<PathBuf>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Spiral,
            samples: 900,
            classes: 5,
            noise: 0.1,
            test_fraction: 0.3,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum LayerSpec {
    Linear {
        out: usize,
    },
    /// Batch statistics while training the real model, folded into a
    /// per-channel `alpha * x + eta` afterwards.
    Batchnorm,
    Relu,
    Residual {
        layers: Vec<LayerSpec>,
    },
}

/// Hidden layers; a linear classifier head is always appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: Vec<LayerSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        use LayerSpec::*;
        Self {
            layers: vec![
                Linear { out: 32 },
                Batchnorm,
                Relu,
                Residual {
                    layers: vec![Linear { out: 32 }, Batchnorm, Relu],
                },
                Linear { out: 32 },
                Batchnorm,
                Relu,
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    None,
    Qfx,
    /// QFX everywhere, with K-hot multipliers in the BatchNorm layers.
    Khot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantConfig {
    pub mode: QuantMode,
    pub wbit: u32,
    pub signed: bool,
    pub round: RoundMode,
    pub overflow: OverflowMode,
    pub binary_point: BinaryPoint,
    /// Set bits kept per K-hot multiplier.
    pub k: usize,
    /// Word length overrides by site name.
    pub sites: BTreeMap<String, u32>,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            mode: QuantMode::Qfx,
            wbit: 8,
            signed: true,
            round: RoundMode::Rnd,
            overflow: OverflowMode::Sat,
            binary_point: BinaryPoint::Learnable(Granularity::PerChannel),
            k: 2,
            sites: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Real-arithmetic epochs.
    pub epochs: usize,
    /// Fine-tuning epochs from the pretrained model, quantized or not.
    pub qat_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub qat_lr: f64,
    /// Learning rate of binary-point parameters during QAT; `qat_lr` when unset.
    pub ibit_lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clamp_grad: ClampGrad,
    /// Per-epoch learning-rate schedule, restarted in every phase.
    pub schedule: Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Half-cosine from the base rate down to zero at the end of the phase.
    Cosine,
}

impl Schedule {
    /// Multiplier of the base learning rate for `epoch` out of `epochs`.
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            Schedule::Constant => 1.0,
            Schedule::Cosine => {
                0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs.max(1) as f64).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            qat_epochs: 100,
            batch_size: 32,
            lr: 0.01,
            qat_lr: 0.005,
            ibit_lr: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clamp_grad: ClampGrad::Ste,
            schedule: Schedule::Cosine,
        }
    }
}

/// Second phase that switches BatchNorm multipliers to K-hot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KHotPhase {
    pub epochs: usize,
    /// Multiplies the QAT learning rate.
    pub lr_scale: f64,
}

impl Default for KHotPhase {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PtqConfig {
    /// Leading training rows used for calibration; all of them when unset.
    pub calibration_samples: Option<usize>,
}

impl ExperimentConfig {
    /// Parses TOML text, then applies `key.path=value` overrides in order.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Value = text
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(t.lr > 0.0
            && t.qat_lr > 0.0
            && self.khot.lr_scale > 0.0
            && t.ibit_lr.is_none_or(|v| v > 0.0))
        {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.task.test_fraction) {
            return Err(Error::Config("task.test_fraction must be in [0, 1)".into()));
        }
        if self.quant.k == 0 {
            return Err(Error::Config("quant.k must be at least 1".into()));
        }
        if self.task.kind == TaskKind::Csv && self.task.path.is_none() {
            return Err(Error::Config("task.kind = \"csv\" needs task.path".into()));
        }
        Ok(())
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, or as a bare string
/// when it is not one.
fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{}` is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(Error::Config(format!(
        "empty override key in `{assignment}`"
    )))
}

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::data::Standardizer;
use super::model::Model;
use crate::autograd::ParamStore;
use crate::conformance::{f64_to_hex, hex_to_f64};
use crate::khot::KHotCode;
use crate::{Error, Result, Tensor};

const FORMAT: &str = "qfx-checkpoint/1";

/// A trained model: architecture with its site formats, parameters, and the
/// input standardization it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub model: Model,
    pub params: ParamStore,
    pub standardizer: Standardizer,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HexTensor {
    shape: Vec<usize>,
    data: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HexStandardizer {
    mean: Vec<String>,
    std: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    format: String,
    config: ExperimentConfig,
    model: Model,
    standardizer: HexStandardizer,
    params: BTreeMap<String, HexTensor>,
    /// Deployed multipliers of each K-hot site, derived from `params`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    khot_codes: BTreeMap<String, Vec<KHotCode>>,
}

fn hex_vec(v: &[f64]) -> Vec<String> {
    v.iter().map(|&x| f64_to_hex(x)).collect()
}

fn unhex_vec(v: &[String], what: &str) -> Result<Vec<f64>> {
    v.iter()
        .map(|s| {
            hex_to_f64(s)
                .ok_or_else(|| Error::Checkpoint(format!("bad bit pattern `{s}` in {what}")))
        })
        .collect()
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let file = File {
            khot_codes: self.model.khot_codes(&self.params)?,
            format: FORMAT.into(),
            config: self.config.clone(),
            model: self.model.clone(),
            standardizer: HexStandardizer {
                mean: hex_vec(&self.standardizer.mean),
                std: hex_vec(&self.standardizer.std),
            },
            params: self
                .params
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        HexTensor {
                            shape: t.shape().to_vec(),
                            data: hex_vec(t.data()),
                        },
                    )
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: File =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}`",
                file.format
            )));
        }
        let mut params = ParamStore::new();
        for (k, h) in file.params {
            let data = unhex_vec(&h.data, &k)?;
            let t =
                Tensor::new(h.shape, data).map_err(|e| Error::Checkpoint(format!("`{k}`: {e}")))?;
            params.insert(k, t);
        }
        let ck = Self {
            config: file.config,
            model: file.model,
            standardizer: Standardizer {
                mean: unhex_vec(&file.standardizer.mean, "standardizer")?,
                std: unhex_vec(&file.standardizer.std, "standardizer")?,
            },
            params,
        };
        ck.check()?;
        if ck.model.khot_codes(&ck.params)? != file.khot_codes {
            return Err(Error::Checkpoint(
                "stored K-hot codes differ from the parameters".into(),
            ));
        }
        Ok(ck)
    }

    /// Every weight, buffer and binary point the model reads is present with
    /// the right shape.
    pub fn check(&self) -> Result<()> {
        for (name, shape) in self
            .model
            .weight_shapes()
            .into_iter()
            .chain(self.model.buffer_shapes())
        {
            match self.params.get(&name) {
                None => return Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Checkpoint(format!(
                        "`{name}` has shape {:?}, model expects {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(name) = self
            .model
            .ibit_params()
            .into_iter()
            .find(|n| !self.params.contains_key(n))
        {
            return Err(Error::Checkpoint(format!("missing binary point `{name}`")));
        }
        if self.standardizer.mean.len() != self.model.inputs
            || self.standardizer.std.len() != self.model.inputs
        {
            return Err(Error::Checkpoint(
                "standardizer width differs from model inputs".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

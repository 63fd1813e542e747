use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{TaskConfig, TaskKind};
use crate::{Error, Result, Tensor};

/// Rows of features with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.shape().len() != 2 || x.shape()[0] != y.len() {
            return Err(Error::Shape(format!(
                "features {:?} for {} labels",
                x.shape(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
            return Err(Error::Domain(format!("label {bad} with {classes} classes")));
        }
        Ok(Self { x, y, classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            x: self.x.gather_rows(idx)?,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
        })
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }
}

/// Per-feature mean and standard deviation of a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor) -> Self {
        let d = x.shape()[1];
        let n = x.shape()[0].max(1) as f64;
        let mut mean = vec![0.0; d];
        for row in x.data().chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x.data().chunks(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / n).sqrt())
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if x.channels() != d {
            return Err(Error::Shape(format!(
                "{} features, standardizer has {d}",
                x.channels()
            )));
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub standardizer: Standardizer,
}

fn normal(noise: f64) -> Normal<f64> {
    Normal::new(0.0, noise.max(0.0)).expect("finite noise")
}

/// Two interleaved half circles.
pub fn two_moons(samples: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nd = normal(noise);
    let mut x = Vec::with_capacity(samples * 2);
    let mut y = Vec::with_capacity(samples);
    for i in 0..samples {
        let class = i % 2;
        let t = std::f64::consts::PI * rng.gen::<f64>();
        let (px, py) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        x.push(px + nd.sample(&mut rng));
        x.push(py + nd.sample(&mut rng));
        y.push(class);
    }
    Dataset::new(Tensor::matrix(samples, 2, x).expect("rows"), y, 2).expect("labels")
}

/// `classes` interleaved spiral arms, each covering `4` radians.
pub fn spiral(samples: usize, classes: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nd = normal(noise);
    let per = samples / classes.max(1);
    let mut x = Vec::with_capacity(per * classes * 2);
    let mut y = Vec::with_capacity(per * classes);
    for c in 0..classes {
        for j in 0..per {
            let r = j as f64 / per.max(2).saturating_sub(1) as f64;
            let t = 4.0 * (c as f64 + r) + nd.sample(&mut rng);
            x.push(r * t.sin());
            x.push(r * t.cos());
            y.push(c);
        }
    }
    let n = y.len();
    Dataset::new(Tensor::matrix(n, 2, x).expect("rows"), y, classes).expect("labels")
}

/// Numeric CSV with the integer label in the last column; a non-numeric first
/// row is treated as a header.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut width = None;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let fields: Vec<&str> = rec.iter().collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        let Ok(values) = parsed else {
            if line == 0 {
                continue;
            }
            return Err(Error::Config(format!(
                "{}: line {}: non-numeric field",
                path.display(),
                line + 1
            )));
        };
        if values.len() < 2 || *width.get_or_insert(values.len()) != values.len() {
            return Err(Error::Config(format!(
                "{}: line {}: ragged row",
                path.display(),
                line + 1
            )));
        }
        let label = values[values.len() - 1];
        if label < 0.0 || label.fract() != 0.0 {
            return Err(Error::Config(format!(
                "{}: line {}: label {label}",
                path.display(),
                line + 1
            )));
        }
        x.extend_from_slice(&values[..values.len() - 1]);
        y.push(label as usize);
    }
    let d = width.ok_or_else(|| Error::Config(format!("{}: no rows", path.display())))? - 1;
    let classes = y.iter().max().map_or(0, |m| m + 1);
    Dataset::new(Tensor::matrix(y.len(), d, x)?, y, classes)
}

/// Generates or loads the task, shuffles with `seed`, splits, and
/// standardizes both parts with training statistics.
pub fn load_task(cfg: &TaskConfig, seed: u64) -> Result<Split> {
    let all = match cfg.kind {
        TaskKind::TwoMoons => two_moons(cfg.samples, cfg.noise, seed),
        TaskKind::Spiral => spiral(cfg.samples, cfg.classes, cfg.noise, seed),
        TaskKind::Csv => load_csv(
            cfg.path
                .as_deref()
                .ok_or_else(|| Error::Config("csv task needs a path".into()))?,
        )?,
    };
    if all.len() < 2 {
        return Err(Error::Config("task has fewer than two samples".into()));
    }
    let mut idx: Vec<usize> = (0..all.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed));
    let n_test = ((all.len() as f64 * cfg.test_fraction).round() as usize).min(all.len() - 1);
    let (test_idx, train_idx) = idx.split_at(n_test);
    let train = all.subset(train_idx)?;
    let test = all.subset(test_idx)?;
    let standardizer = Standardizer::fit(&train.x);
    Ok(Split {
        train: Dataset {
            x: standardizer.apply(&train.x)?,
            ..train
        },
        test: Dataset {
            x: standardizer.apply(&test.x)?,
            ..test
        },
        standardizer,
    })
}

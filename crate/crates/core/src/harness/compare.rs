use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, QuantMode};
use super::data::load_task;
use super::train::{calibration_set, evaluate, finetune, khot_finetune, train_qat, train_real};
use crate::baselines::{ptq_apply, SweepModes};
use crate::par::{self, Exec};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAccuracy {
    pub seed: u64,
    pub real: f64,
    pub ptq: f64,
    pub qat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub wbit: u32,
    /// Means over seeds of test accuracy.
    pub real: f64,
    pub ptq: f64,
    pub qat: f64,
    pub per_seed: Vec<SeedAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

pub const COMPARE_WBITS: [u32; 5] = [16, 12, 10, 8, 6];

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Per seed: pretrain once, fine-tune a real reference from it, and for every
/// word length derive a PTQ model from the reference and fine-tune a QAT model
/// from the pretrained one with the same budget.
pub fn compare_ptq_qat(
    cfg: &ExperimentConfig,
    wbits: &[u32],
    seeds: &[u64],
    exec: Exec,
) -> Result<Comparison> {
    let per_seed = par::try_map(exec, seeds, |_, &seed| {
        let cfg = ExperimentConfig {
            seed,
            ..cfg.clone()
        };
        let split = load_task(&cfg.task, seed)?;
        let pre = train_real(&cfg, &split)?.checkpoint;
        let real = finetune(&pre, &cfg, &split, QuantMode::None)?.checkpoint;
        let real_acc = evaluate(&real.model, &real.params, &split.test)?.accuracy;
        let calib = calibration_set(&cfg, &split)?;
        let modes = SweepModes {
            signed: cfg.quant.signed,
            round: cfg.quant.round,
            overflow: cfg.quant.overflow,
        };
        wbits
            .iter()
            .map(|&w| {
                let (ptq_model, _) = ptq_apply(&real.model, &real.params, w, modes, &calib.x)?;
                let ptq = evaluate(&ptq_model, &real.params, &split.test)?.accuracy;
                let mut qcfg = cfg.clone();
                qcfg.quant.wbit = w;
                let q = train_qat(&pre, &qcfg, &split)?.checkpoint;
                let qat = evaluate(&q.model, &q.params, &split.test)?.accuracy;
                Ok(SeedAccuracy {
                    seed,
                    real: real_acc,
                    ptq,
                    qat,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = wbits
        .iter()
        .enumerate()
        .map(|(j, &wbit)| {
            let runs: Vec<SeedAccuracy> = per_seed.iter().map(|r| r[j].clone()).collect();
            ComparisonRow {
                wbit,
                real: mean(runs.iter().map(|r| r.real)),
                ptq: mean(runs.iter().map(|r| r.ptq)),
                qat: mean(runs.iter().map(|r| r.qat)),
                per_seed: runs,
            }
        })
        .collect();
    Ok(Comparison { rows })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5}  {:>8}  {:>8}  {:>8}  {:>8}",
            "wbit", "real", "ptq", "qat", "qat-ptq"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>5}  {:>8.2}  {:>8.2}  {:>8.2}  {:>+8.2}",
                r.wbit,
                100.0 * r.real,
                100.0 * r.ptq,
                100.0 * r.qat,
                100.0 * (r.qat - r.ptq)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KHotSeed {
    pub seed: u64,
    pub qfx: f64,
    pub khot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KHotComparison {
    pub wbit: u32,
    pub k: usize,
    pub qfx: f64,
    pub khot: f64,
    pub per_seed: Vec<KHotSeed>,
}

/// Plain-QFX accuracy against the same model after the K-hot phase.
pub fn compare_khot(cfg: &ExperimentConfig, seeds: &[u64], exec: Exec) -> Result<KHotComparison> {
    let per_seed = par::try_map(exec, seeds, |_, &seed| {
        let cfg = ExperimentConfig {
            seed,
            ..cfg.clone()
        };
        let split = load_task(&cfg.task, seed)?;
        let real = train_real(&cfg, &split)?.checkpoint;
        let q = train_qat(&real, &cfg, &split)?.checkpoint;
        let qfx = evaluate(&q.model, &q.params, &split.test)?.accuracy;
        let (k, _) = khot_finetune(&q, &cfg, &split)?;
        let khot = evaluate(&k.checkpoint.model, &k.checkpoint.params, &split.test)?.accuracy;
        Ok::<_, crate::Error>(KHotSeed { seed, qfx, khot })
    })?;
    Ok(KHotComparison {
        wbit: cfg.quant.wbit,
        k: cfg.quant.k,
        qfx: mean(per_seed.iter().map(|r| r.qfx)),
        khot: mean(per_seed.iter().map(|r| r.khot)),
        per_seed,
    })
}

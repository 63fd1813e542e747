use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{ExperimentConfig, QuantConfig, QuantMode};
use super::data::{load_task, Dataset, Split};
use super::model::Model;
use crate::autograd::{Adam, AdamConfig, Eval, Ops, Optimizer, ParamStore, Tape};
use crate::qfxlayers::effective_ibit_values;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Real arithmetic with batch-statistic BatchNorm.
    Real,
    /// Frozen BatchNorm statistics, quantized or not.
    Finetune,
    Khot,
}

impl Phase {
    fn salt(self) -> u64 {
        match self {
            Phase::Real => 0x11,
            Phase::Finetune => 0x22,
            Phase::Khot => 0x33,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub phase: Phase,
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Effective integer bits of every learnable site after the epoch.
    pub ibits: BTreeMap<String, Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Inference-mode accuracy and mean cross-entropy.
pub fn evaluate(model: &Model, params: &ParamStore, data: &Dataset) -> Result<Evaluation> {
    if data.features() != model.inputs {
        return Err(Error::Shape(format!(
            "data has {} features, model expects {}",
            data.features(),
            model.inputs
        )));
    }
    if data.is_empty() {
        return Ok(Evaluation {
            accuracy: 0.0,
            loss: 0.0,
        });
    }
    let logits = model.forward(&mut Eval, params, &data.x)?;
    let loss = Eval.cross_entropy(&logits, &data.y)?.item()?;
    let c = model.classes;
    let correct = logits
        .data()
        .chunks(c)
        .zip(&data.y)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        loss,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn ibits(model: &Model, params: &ParamStore) -> BTreeMap<String, Vec<u32>> {
    let mut out = BTreeMap::new();
    for s in model.cast_sites() {
        if let (true, Some(cfg)) = (s.is_learnable(), &s.cfg) {
            if let Some(i) = params.get(&s.ibit_param()) {
                out.insert(s.name.clone(), effective_ibit_values(i, cfg.wbit));
            }
        }
    }
    for k in model.khot_sites() {
        if let (true, Some(i)) = (k.is_learnable(), params.get(&k.ibit_param())) {
            out.insert(k.name.clone(), effective_ibit_values(i, k.cfg.wbit));
        }
    }
    out
}

/// Result of one training phase.
#[derive(Debug, Clone)]
pub struct PhaseRun {
    pub history: Vec<EpochMetrics>,
    /// Parameters the optimizer kept state for.
    pub optimizer_keys: Vec<String>,
}

/// Mini-batch Adam on cross-entropy. Batch order depends only on `seed` and
/// the phase. The real phase normalizes with batch statistics and tracks
/// running ones; later phases use the running statistics frozen.
#[allow(clippy::too_many_arguments)]
pub fn train_phase(
    model: &Model,
    params: &mut ParamStore,
    split: &Split,
    cfg: &ExperimentConfig,
    phase: Phase,
    epochs: usize,
    lr: f64,
    ibit_lr: f64,
) -> Result<PhaseRun> {
    let t = &cfg.train;
    let adam = |lr| {
        Adam::new(AdamConfig {
            lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
        })
    };
    let mut opt = adam(lr);
    let mut ibit_opt = adam(ibit_lr);
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ phase.salt());
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let f = t.schedule.factor(epoch, epochs);
        opt.set_lr(lr * f);
        ibit_opt.set_lr(ibit_lr * f);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (step, idx) in order.chunks(t.batch_size).enumerate() {
            let batch = split.train.subset(idx)?;
            let mut tape = Tape::with_clamp_grad(t.clamp_grad);
            let x = tape.constant(batch.x);
            let (logits, stats) = match phase {
                Phase::Real => model.forward_batch_stats(&mut tape, params, &x)?,
                _ => (model.forward(&mut tape, params, &x)?, Default::default()),
            };
            let loss = tape.cross_entropy(&logits, &batch.y)?;
            let lv = tape.value(&loss).item()?;
            if !lv.is_finite() {
                return Err(Error::NaN(format!(
                    "{phase:?} epoch {epoch} step {step}: loss is {lv}"
                )));
            }
            let (ibit_grads, grads): (BTreeMap<_, _>, BTreeMap<_, _>) = tape
                .backward(loss)?
                .by_param()
                .into_iter()
                .partition(|(k, _)| k.ends_with(".I"));
            opt.step(params, &grads)?;
            ibit_opt.step(params, &ibit_grads)?;
            model.update_running_stats(params, &stats)?;
            total += lv;
            batches += 1;
        }
        let train = evaluate(model, params, &split.train)?;
        let test = evaluate(model, params, &split.test)?;
        history.push(EpochMetrics {
            phase,
            epoch,
            loss: total / batches.max(1) as f64,
            train_accuracy: train.accuracy,
            test_accuracy: test.accuracy,
            ibits: ibits(model, params),
        });
    }
    let mut optimizer_keys = opt.state_keys();
    optimizer_keys.extend(ibit_opt.state_keys());
    optimizer_keys.sort();
    Ok(PhaseRun {
        history,
        optimizer_keys,
    })
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochMetrics>,
}

/// The PTQ and binary-point calibration set: the head of the training split.
pub fn calibration_set(cfg: &ExperimentConfig, split: &Split) -> Result<Dataset> {
    match cfg.ptq.calibration_samples {
        Some(n) => split.train.head(n),
        None => Ok(split.train.clone()),
    }
}

fn with_mode(q: &QuantConfig, mode: QuantMode) -> QuantConfig {
    QuantConfig { mode, ..q.clone() }
}

/// Real-arithmetic pretraining.
pub fn train_real(cfg: &ExperimentConfig, split: &Split) -> Result<TrainRun> {
    let model = Model::build(&cfg.model, split.train.features(), split.train.classes)?;
    let mut params = model.init_params(cfg.seed);
    let run = train_phase(
        &model,
        &mut params,
        split,
        cfg,
        Phase::Real,
        cfg.train.epochs,
        cfg.train.lr,
        cfg.train.lr,
    )?;
    Ok(TrainRun {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            model,
            params,
            standardizer: split.standardizer.clone(),
        },
        history: run.history,
    })
}

/// `qat_epochs` of fine-tuning from a pretrained checkpoint under `cfg.quant`
/// switched to `mode`. With [`QuantMode::None`] this is the real-arithmetic
/// reference with the same budget and batch order as QAT.
pub fn finetune(
    pre: &Checkpoint,
    cfg: &ExperimentConfig,
    split: &Split,
    mode: QuantMode,
) -> Result<TrainRun> {
    let model = pre
        .model
        .dequantized()
        .quantized(&with_mode(&cfg.quant, mode))?;
    let mut params = pre.params.clone();
    if model.is_quantized() {
        model.init_binary_points(&mut params, &calibration_set(cfg, split)?.x)?;
    }
    let t = &cfg.train;
    let ibit_lr = t.ibit_lr.unwrap_or(t.qat_lr);
    let run = train_phase(
        &model,
        &mut params,
        split,
        cfg,
        Phase::Finetune,
        t.qat_epochs,
        t.qat_lr,
        ibit_lr,
    )?;
    Ok(TrainRun {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            model,
            params,
            standardizer: split.standardizer.clone(),
        },
        history: run.history,
    })
}

/// Quantization-aware fine-tuning with plain QFX sites.
pub fn train_qat(pre: &Checkpoint, cfg: &ExperimentConfig, split: &Split) -> Result<TrainRun> {
    finetune(pre, cfg, split, QuantMode::Qfx)
}

/// Switches the affine multipliers of a QFX checkpoint to K-hot and trains
/// `khot.epochs` more at `qat_lr * khot.lr_scale`.
pub fn khot_finetune(
    qfx: &Checkpoint,
    cfg: &ExperimentConfig,
    split: &Split,
) -> Result<(TrainRun, PhaseRun)> {
    let model = qfx
        .model
        .quantized(&with_mode(&cfg.quant, QuantMode::Khot))?;
    let mut params = qfx.params.clone();
    model.init_binary_points(&mut params, &calibration_set(cfg, split)?.x)?;
    let t = &cfg.train;
    let scale = cfg.khot.lr_scale;
    let ibit_lr = t.ibit_lr.unwrap_or(t.qat_lr) * scale;
    let run = train_phase(
        &model,
        &mut params,
        split,
        cfg,
        Phase::Khot,
        cfg.khot.epochs,
        t.qat_lr * scale,
        ibit_lr,
    )?;
    Ok((
        TrainRun {
            checkpoint: Checkpoint {
                config: cfg.clone(),
                model,
                params,
                standardizer: split.standardizer.clone(),
            },
            history: run.history.clone(),
        },
        run,
    ))
}

/// Full pipeline for `cfg.quant.mode`: pretraining, fine-tuning (QFX for both
/// quantized modes), then the K-hot phase.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainRun> {
    let split = load_task(&cfg.task, cfg.seed)?;
    let mut run = train_real(cfg, &split)?;
    let mode = match cfg.quant.mode {
        QuantMode::None => QuantMode::None,
        _ => QuantMode::Qfx,
    };
    let tuned = finetune(&run.checkpoint, cfg, &split, mode)?;
    run.history.extend(tuned.history);
    run.checkpoint = tuned.checkpoint;
    if cfg.quant.mode == QuantMode::Khot {
        let (k, _) = khot_finetune(&run.checkpoint, cfg, &split)?;
        run.history.extend(k.history);
        run.checkpoint = k.checkpoint;
    }
    Ok(run)
}

/// One JSON object per line.
pub fn write_metrics(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for m in history {
        serde_json::to_writer(&mut f, m)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

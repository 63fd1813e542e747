//! Desk-scale experiments: synthetic tasks, an MLP whose element-wise layers
//! are quantized, training and evaluation loops, checkpoints, and the
//! PTQ-versus-QAT comparison.

mod checkpoint;
mod compare;
mod config;
mod data;
mod model;
mod train;

pub use checkpoint::Checkpoint;
pub use compare::{
    compare_khot, compare_ptq_qat, Comparison, ComparisonRow, KHotComparison, KHotSeed,
    SeedAccuracy, COMPARE_WBITS,
};
pub use config::{
    ExperimentConfig, KHotPhase, LayerSpec, ModelConfig, PtqConfig, QuantConfig, QuantMode,
    Schedule, TaskConfig, TaskKind, TrainConfig,
};
pub use data::{load_csv, load_task, spiral, two_moons, Dataset, Split, Standardizer};
pub use model::{BatchStats, Layer, Model};
pub use train::{
    calibration_set, evaluate, finetune, khot_finetune, train, train_phase, train_qat, train_real,
    write_metrics, EpochMetrics, Evaluation, Phase, PhaseRun, TrainRun,
};

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qfx::baselines::{ptq_apply, SweepModes};
use qfx::conformance::{self, CorpusSpec, GoldenVector, Tier};
use qfx::fxcore::{self, FxFormat};
use qfx::harness::{self, Checkpoint, Dataset, ExperimentConfig};
use qfx::khot::cost_report;
use qfx::par::Exec;

#[derive(Parser)]
#[command(name = "qfx", version, about = "Fixed-point quantization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain, then fine-tune under `quant.mode`; writes a checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "checkpoint.json")]
        out: PathBuf,
        /// Per-epoch metrics as JSON lines.
        #[arg(long, default_value = "metrics.jsonl")]
        metrics: PathBuf,
    },
    /// Accuracy and loss of a checkpoint on its task's test split or a CSV file.
    Eval {
        checkpoint: PathBuf,
        /// Raw (unstandardized) CSV with the label in the last column.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Post-training quantization of a checkpoint by per-site MSE sweeps.
    Ptq {
        checkpoint: PathBuf,
        #[arg(long)]
        wbit: u32,
        #[arg(long, default_value = "ptq.json")]
        out: PathBuf,
        /// Per-site sweep results.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// PTQ against QAT accuracy over word lengths and seeds.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = harness::COMPARE_WBITS)]
        wbits: Vec<u32>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[command(flatten)]
        exec: ExecArgs,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Switch a QFX checkpoint's BatchNorm multipliers to K-hot and fine-tune.
    KhotFinetune {
        checkpoint: PathBuf,
        /// Overrides applied to the checkpoint's configuration.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "khot.json")]
        out: PathBuf,
        #[arg(long, default_value = "khot-metrics.jsonl")]
        metrics: PathBuf,
    },
    /// Static multiply, shift and add counts per site for one input row.
    CostReport {
        checkpoint: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Differential test of the cast against the exact integer oracle.
    /// Exits 0 iff there are no mismatches.
    Conformance {
        /// A single format such as `fx8.4s:RND:SAT` instead of every format.
        #[arg(long)]
        format: Option<FxFormat>,
        #[arg(long, default_value_t = 8)]
        max_w: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = TierArg::Exhaustive)]
        tier: TierArg,
        /// Random inputs per format for `--tier random`.
        #[arg(long, default_value_t = 100_000)]
        count: usize,
        /// Write the generated corpus as JSON lines.
        #[arg(long)]
        write: Option<PathBuf>,
        /// Replay an existing corpus instead of generating one.
        #[arg(long, conflicts_with_all = ["format", "write"])]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        exec: ExecArgs,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, &self.overrides),
            None => ExperimentConfig::from_toml("", &self.overrides),
        };
        cfg.context("loading configuration")
    }
}

#[derive(Args)]
struct ExecArgs {
    /// Run on the current thread only.
    #[arg(long)]
    sequential: bool,
}

impl ExecArgs {
    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TierArg {
    Exhaustive,
    Random,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn test_data(ck: &Checkpoint, csv: Option<&Path>) -> Result<Dataset> {
    match csv {
        Some(p) => {
            let raw = harness::load_csv(p)?;
            let x = ck.standardizer.apply(&raw.x)?;
            Ok(Dataset { x, ..raw })
        }
        None => Ok(harness::load_task(&ck.config.task, ck.config.seed)?.test),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            config,
            out,
            metrics,
        } => {
            let cfg = config.load()?;
            let run = harness::train(&cfg)?;
            harness::write_metrics(&metrics, &run.history)?;
            run.checkpoint.save(&out)?;
            if let Some(last) = run.history.last() {
                println!(
                    "{:?} epoch {}: loss {:.4}, train {:.2}%, test {:.2}%",
                    last.phase,
                    last.epoch,
                    last.loss,
                    100.0 * last.train_accuracy,
                    100.0 * last.test_accuracy
                );
            }
            println!("wrote {} and {}", out.display(), metrics.display());
        }
        Command::Eval {
            checkpoint,
            csv,
            json,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let data = test_data(&ck, csv.as_deref())?;
            let e = harness::evaluate(&ck.model, &ck.params, &data)?;
            println!(
                "accuracy {:.2}%  loss {:.6}  ({} samples)",
                100.0 * e.accuracy,
                e.loss,
                data.len()
            );
            if let Some(p) = json {
                write_json(&p, &e)?;
            }
        }
        Command::Ptq {
            checkpoint,
            wbit,
            out,
            json,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let split = harness::load_task(&ck.config.task, ck.config.seed)?;
            let calib = harness::calibration_set(&ck.config, &split)?;
            let q = &ck.config.quant;
            let modes = SweepModes {
                signed: q.signed,
                round: q.round,
                overflow: q.overflow,
            };
            let (model, sweeps) =
                ptq_apply(&ck.model.dequantized(), &ck.params, wbit, modes, &calib.x)?;
            let acc = harness::evaluate(&model, &ck.params, &split.test)?.accuracy;
            println!("{:<16}  {:>5}  {:>12}", "site", "ibit", "mse");
            for (site, s) in &sweeps {
                println!("{site:<16}  {:>5}  {:>12.4e}", s.best_ibit, s.best_mse());
            }
            println!("test accuracy {:.2}%", 100.0 * acc);
            Checkpoint { model, ..ck }.save(&out)?;
            if let Some(p) = json {
                write_json(&p, &sweeps)?;
            }
        }
        Command::Compare {
            config,
            wbits,
            seeds,
            exec,
            json,
        } => {
            let cfg = config.load()?;
            let seeds: Vec<u64> = (cfg.seed..cfg.seed + seeds).collect();
            let cmp = harness::compare_ptq_qat(&cfg, &wbits, &seeds, exec.exec())?;
            print!("{cmp}");
            if let Some(p) = json {
                write_json(&p, &cmp)?;
            }
        }
        Command::KhotFinetune {
            checkpoint,
            overrides,
            out,
            metrics,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            if !ck.model.is_quantized() {
                bail!("{} is not a quantized checkpoint", checkpoint.display());
            }
            let cfg = ExperimentConfig::from_toml(&ck.config.to_toml(), &overrides)?;
            let split = harness::load_task(&cfg.task, cfg.seed)?;
            let before = harness::evaluate(&ck.model, &ck.params, &split.test)?.accuracy;
            let (run, _) = harness::khot_finetune(&ck, &cfg, &split)?;
            let after =
                harness::evaluate(&run.checkpoint.model, &run.checkpoint.params, &split.test)?
                    .accuracy;
            harness::write_metrics(&metrics, &run.history)?;
            run.checkpoint.save(&out)?;
            println!(
                "QFX {:.2}%  {}-hot {:.2}%  diff {:+.2}",
                100.0 * before,
                cfg.quant.k,
                100.0 * after,
                100.0 * (after - before)
            );
        }
        Command::CostReport { checkpoint, json } => {
            let ck = load_checkpoint(&checkpoint)?;
            let report = cost_report(&ck.model.cost_sites(&ck.params)?);
            println!("{report}");
            if let Some(p) = json {
                write_json(&p, &report)?;
            }
        }
        Command::Conformance {
            format,
            max_w,
            seed,
            tier,
            count,
            write,
            corpus,
            exec,
            json,
        } => {
            let report = match corpus {
                Some(path) => {
                    let file =
                        File::open(&path).with_context(|| format!("opening {}", path.display()))?;
                    let vectors = conformance::read_corpus(BufReader::new(file))?;
                    conformance::run_conformance_with(&vectors, fxcore::cast, exec.exec())
                }
                None => {
                    let spec = CorpusSpec {
                        max_w,
                        seed,
                        tier: match tier {
                            TierArg::Exhaustive => Tier::Exhaustive,
                            TierArg::Random => Tier::Random { count },
                        },
                        format,
                    };
                    if matches!(spec.tier, Tier::Exhaustive)
                        && spec.format.map_or(max_w, |f| f.wbit()) > 16
                    {
                        bail!("the exhaustive tier is limited to w <= 16");
                    }
                    let vectors: Vec<GoldenVector> = conformance::generate_corpus(&spec).collect();
                    if let Some(path) = &write {
                        let file = File::create(path)
                            .with_context(|| format!("creating {}", path.display()))?;
                        conformance::write_corpus(BufWriter::new(file), vectors.iter().copied())?;
                    }
                    conformance::run_conformance_with(&vectors, fxcore::cast, exec.exec())
                }
            };
            for m in report.mismatches.iter().take(20) {
                println!(
                    "mismatch #{} {} input {} expected {} got {}",
                    m.index, m.format, m.input, m.expected, m.actual
                );
            }
            println!(
                "{} checked, {} mismatches",
                report.checked,
                report.mismatches.len()
            );
            if let Some(p) = json {
                write_json(&p, &report)?;
            }
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

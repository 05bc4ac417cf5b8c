//! Batch command-line interface for the stroke-lesion segmentation
//! pipeline: data generation, training, cross-validation, prediction,
//! ensembling, and evaluation.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 invalid arguments
//! or configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ctpseg::train::{EnsembleRule, FineTuneConfig};
use ctpseg::Error;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "ctpseg",
    version,
    about = "CT perfusion stroke-lesion segmentation at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic perfusion dataset with elliptical phantoms
    Synth {
        /// Output directory for stacks plus manifest.csv
        #[arg(long)]
        out: PathBuf,
        /// Number of subjects (each contributes 1–2 scans)
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        subjects: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Slice size as HEIGHT WIDTH
        #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [64, 64])]
        size: Vec<usize>,
    },
    /// Train one model with one held-out fold
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Held-out fold index
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Two-phase fine-tuning from a pretrained checkpoint
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Pretrained checkpoint (overrides train.fine_tune.pretrained)
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// k-fold cross-validation: one model per fold plus a combined report
    Cv {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Predict lesion masks for every scan in a dataset
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Ground-truth dataset manifest.csv
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-slice PNG overlays
        #[arg(long)]
        png: bool,
    },
    /// Score predicted masks against ground truth
    Eval {
        /// Directory of per-scan prediction folders
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth dataset manifest.csv
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override voxel spacing as SX SY SZ (mm)
        #[arg(long, num_args = 3, value_names = ["SX", "SY", "SZ"])]
        spacing: Option<Vec<f64>>,
    },
    /// Combine several checkpoints into one prediction per scan
    Ensemble {
        /// Checkpoint paths, in order
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = RuleArg::MeanProbability)]
        rule: RuleArg,
        #[arg(long)]
        png: bool,
    },
    /// Print the experiment config reference page (markdown)
    ConfigSchema,
}

/// Flags that override config-file keys (flag > file > default).
#[derive(Debug, clap::Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Dataset manifest.csv (overrides data.manifest)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fold count (overrides data.folds)
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleArg {
    MeanProbability,
    MajorityVote,
}

impl From<RuleArg> for EnsembleRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::MeanProbability => EnsembleRule::MeanProbability,
            RuleArg::MajorityVote => EnsembleRule::MajorityVote,
        }
    }
}

fn load_config(path: &PathBuf, ov: &Overrides) -> ctpseg::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(run_dir) = &ov.run_dir {
        cfg.run_dir = run_dir.clone();
    }
    if let Some(data) = &ov.data {
        cfg.data.manifest = Some(data.clone());
    }
    if let Some(folds) = ov.folds {
        cfg.data.folds = folds;
    }
    cfg.resolve()
}

fn run(cli: Cli) -> ctpseg::Result<()> {
    match cli.cmd {
        Cmd::Synth { out, subjects, seed, size } => {
            commands::synth::run(&out, subjects as usize, seed, (size[0], size[1]))
        }
        Cmd::Train { config, fold, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            commands::train::run_train(&cfg, fold)
        }
        Cmd::Finetune { config, fold, pretrained, overrides } => {
            let mut cfg = load_config(&config, &overrides)?;
            if let Some(p) = pretrained {
                match &mut cfg.train.fine_tune {
                    Some(ft) => ft.pretrained = p,
                    None => {
                        cfg.train.fine_tune = Some(FineTuneConfig {
                            pretrained: p,
                            phase1_lr: 1e-2,
                            phase2_lr: 1e-4,
                            phase1_epochs: 20,
                        })
                    }
                }
            }
            commands::train::run_finetune(&cfg, fold)
        }
        Cmd::Cv { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            commands::cv::run(&cfg)
        }
        Cmd::Predict { checkpoint, data, out, png } => {
            commands::predict::run_predict(&checkpoint, &data, &out, png)
        }
        Cmd::Eval { pred, truth, out, spacing } => {
            let spacing = spacing.map(|s| [s[0], s[1], s[2]]);
            commands::eval::run(&pred, &truth, &out, spacing)
        }
        Cmd::Ensemble { checkpoints, data, out, rule, png } => {
            commands::predict::run_ensemble(&checkpoints, &data, &out, rule.into(), png)
        }
        Cmd::ConfigSchema => {
            print!("{}", config::render_config_reference());
            Ok(())
        }
    }
}

/// Invalid configuration counts as invalid arguments (exit 2); anything
/// else that fails at runtime exits 1.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::ConfigInvalid(_)
        | Error::WeightOutOfRange(_)
        | Error::NegativeGamma(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

//! Command-line front end: argument parsing, config resolution and exit codes.

mod commands;
mod selftest;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    checkpoint_experiment, cmd_ablate, cmd_eval, cmd_synth, cmd_train, AblationOutcome, EvalOutcome, EvalScope, FoldLog,
    TrainOutcome, TrainingLog,
};
pub use selftest::{
    cmd_selftest, gradient_check_model, model_gradient_check, naive_conv2d, primitive_cases, SelftestOptions,
    SelftestSummary, SuiteResult, SUITES,
};

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::eval::{emit_report, emit_reports, ReportFormat};
use crate::experiment::{DatasetSource, ExperimentConfig, Precision, Seeds};

/// Exit status for a failed self-test suite.
pub const EXIT_SELFTEST_FAILED: u8 = 5;

/// 2 configuration, 3 data, 4 non-finite numerics, 1 anything else.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Image { .. } => 3,
        Error::NonFinite(_) => 4,
        _ => 1,
    }
}

#[derive(Debug, Parser)]
#[command(name = "sfusnet", version, about = "Spatial/frequency fusion CNN: training, evaluation and verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// k-fold training with per-fold checkpoints and a cross-validated report.
    Train(ExperimentArgs),
    /// Eval-mode scoring of a checkpoint.
    Eval(EvalArgs),
    /// Built-in verification suites.
    Selftest(SelftestArgs),
    /// Full model vs. its twin without frequency branches.
    Ablate(ExperimentArgs),
    /// Writes the synthetic spectral dataset as PNG files.
    Synth(SynthArgs),
    /// Prints the resolved experiment configuration as TOML.
    Config(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// TOML experiment file (see `sfusnet config` for the schema).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in profile used when no config file is given [default: desk].
    #[arg(long, value_enum, conflicts_with = "config")]
    pub preset: Option<Preset>,
    /// Dataset directory (one subdirectory per class), or `synthetic`.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sets every seed (init, fold, batch, dropblock, data).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Train only the first N folds.
    #[arg(long)]
    pub fold_limit: Option<usize>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
}

impl ExperimentArgs {
    /// Config file or preset, then flag overrides; validated.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let cfg = self.resolve_unchecked()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// As [`ExperimentArgs::resolve`] without validation.
    pub fn resolve_unchecked(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                ExperimentConfig::from_toml(&text)?
            }
            (None, Some(Preset::Paper)) => ExperimentConfig::paper(),
            (None, _) => ExperimentConfig::desk(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = parse_dataset(d, &cfg);
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        if let Some(s) = self.seed {
            cfg.seeds = Seeds::all(s);
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(f) = self.folds {
            cfg.folds = f;
        }
        if let Some(l) = self.fold_limit {
            cfg.fold_limit = Some(l);
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        Ok(cfg)
    }
}

fn parse_dataset(arg: &str, cfg: &ExperimentConfig) -> DatasetSource {
    if arg == "synthetic" {
        let per_class = match cfg.dataset {
            DatasetSource::Synthetic { per_class, .. } => per_class,
            DatasetSource::Directory { .. } => SynthSpec::default().per_class,
        };
        DatasetSource::Synthetic { per_class, size: cfg.model.input_size }
    } else {
        DatasetSource::Directory { path: PathBuf::from(arg) }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Experiment file; by default the one stored in the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory or `synthetic`; overrides the experiment's dataset.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Validation fold to score [default: the checkpoint's fold, or every
    /// sample when --dataset is given].
    #[arg(long, conflicts_with = "all")]
    pub fold: Option<usize>,
    /// Score every sample of the dataset.
    #[arg(long)]
    pub all: bool,
    /// Directory for the echoed config and report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SelftestArgs {
    /// Run only these suites (fft, conv, gradients, dropblock, metrics).
    #[arg(long = "suite")]
    pub suites: Vec<String>,
    /// Directory for the echoed options and JSON summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Negative control: drops the inverse FFT scale factor.
    #[arg(long, hide = true)]
    pub corrupt_fft_scale: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub per_class: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// Executes a parsed command line and returns the process exit status.
pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let outcome = cmd_train(&cfg)?;
            print!("{}", emit_report(&outcome.report, args.format)?);
        }
        Command::Ablate(args) => {
            let cfg = args.resolve()?;
            let outcome = cmd_ablate(&cfg)?;
            print!("{}", emit_reports(&[outcome.full.report.clone(), outcome.ablated.report.clone()], args.format)?);
            println!(
                "parameters: full {}, without frequency branch {}, difference {} (closed form {})",
                outcome.full_parameters,
                outcome.ablated_parameters,
                outcome.parameter_difference(),
                outcome.frequency_branch_parameters
            );
        }
        Command::Config(args) => print!("{}", args.resolve_unchecked()?.to_toml()),
        Command::Eval(args) => {
            let mut exp = match &args.config {
                Some(_) => Some(ExperimentArgs { config: args.config.clone(), ..Default::default() }.resolve()?),
                None => None,
            };
            if let Some(d) = &args.dataset {
                let mut base = match exp {
                    Some(e) => e,
                    None => {
                        let ckpt = crate::model::Checkpoint::read(&args.checkpoint)?;
                        checkpoint_experiment(&ckpt)?
                            .ok_or_else(|| Error::Config("checkpoint carries no experiment; pass --config".into()))?
                    }
                };
                base.dataset = parse_dataset(d, &base);
                exp = Some(base);
            }
            let scope = match (args.fold, args.all) {
                (Some(f), _) => EvalScope::Fold(f),
                (None, true) => EvalScope::All,
                (None, false) if args.dataset.is_some() => EvalScope::All,
                (None, false) => EvalScope::Auto,
            };
            let outcome = cmd_eval(&args.checkpoint, exp.as_ref(), scope, args.out.as_deref())?;
            print!("{}", emit_report(&outcome.report, args.format)?);
        }
        Command::Selftest(args) => {
            if let Some(out) = &args.out {
                let suites = if args.suites.is_empty() { SUITES.map(String::from).to_vec() } else { args.suites.clone() };
                write(&out.join("selftest.toml"), format!("suites = {suites:?}\ncorrupt_fft_scale = {}\n", args.corrupt_fft_scale))?;
            }
            let summary = cmd_selftest(&args.suites, SelftestOptions { corrupt_fft_scale: args.corrupt_fft_scale })?;
            print!("{}", summary.render());
            if let Some(out) = &args.out {
                write(&out.join("selftest.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            }
            if !summary.passed() {
                return Ok(EXIT_SELFTEST_FAILED);
            }
        }
        Command::Synth(args) => {
            let spec = SynthSpec { per_class: args.per_class, size: args.size, seed: args.seed };
            write(&args.out.join("synth.toml"), toml::to_string(&spec).expect("plain struct"))?;
            let files = cmd_synth(&args.out, spec.per_class, spec.size, spec.seed)?;
            println!("wrote {} images to {}", files.len(), args.out.display());
        }
    }
    Ok(0)
}

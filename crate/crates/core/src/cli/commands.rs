use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{stratified_kfold, synth_generate, Dataset, SynthSpec, SYNTH_CLASSES};
use crate::error::{Error, Result};
use crate::eval::{emit_report, emit_reports, ConfusionMatrix, FoldReport, FoldResult, ReportFormat};
use crate::experiment::{evaluate, load_dataset, train_fold, EpochLog, ExperimentConfig, Precision};
use crate::model::{build_model, count_parameters, Checkpoint, SfusNet};
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldLog {
    pub fold: usize,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    pub final_validation_accuracy: f64,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub folds: Vec<FoldLog>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    pub report: FoldReport,
    pub confusions: Vec<(usize, ConfusionMatrix)>,
}

impl TrainOutcome {
    pub fn fold_accuracies(&self) -> Vec<f64> {
        self.report.fold_accuracies()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_reports(dir: &Path, stem: &str, reports: &[FoldReport]) -> Result<()> {
    write(&dir.join(format!("{stem}.txt")), emit_reports(reports, ReportFormat::Table)?)?;
    write(&dir.join(format!("{stem}.csv")), emit_reports(reports, ReportFormat::Csv)?)?;
    let json = match reports {
        [one] => emit_report(one, ReportFormat::Json)?,
        many => emit_reports(many, ReportFormat::Json)?,
    };
    write(&dir.join(format!("{stem}.json")), json)
}

/// k-fold training per the configuration; writes the resolved config, fold
/// manifest, per-fold checkpoints, training log and report under `cfg.output`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    create_dir(&cfg.output)?;
    write(&cfg.output.join("config.toml"), cfg.to_toml())?;
    train_into(cfg, &cfg.output, &cfg.name)
}

fn train_into(cfg: &ExperimentConfig, out: &Path, label: &str) -> Result<TrainOutcome> {
    create_dir(out)?;
    let data = load_dataset(cfg)?;
    log::info!("{} images in {} classes {:?}", data.len(), data.num_classes(), data.class_counts());
    let plan = stratified_kfold(&data.labels(), cfg.folds, cfg.seeds.fold)?;
    write(&out.join("folds.tsv"), plan.manifest(&data))?;
    match cfg.precision {
        Precision::F32 => train_folds::<f32>(cfg, &data, &plan, out, label),
        Precision::F64 => train_folds::<f64>(cfg, &data, &plan, out, label),
    }
}

fn checkpoint_metadata(cfg: &ExperimentConfig, fold: usize, epoch: usize, kind: &str, accuracy: f64) -> serde_json::Value {
    serde_json::json!({
        "fold": fold,
        "epoch": epoch,
        "kind": kind,
        "validation_accuracy": accuracy,
        "experiment": cfg,
    })
}

fn train_folds<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &Dataset,
    plan: &crate::data::FoldPlan,
    out: &Path,
    label: &str,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut folds = Vec::new();
    let mut results = Vec::new();
    let mut confusions = Vec::new();
    let mut parameters = 0;
    for fold in 0..cfg.folds_to_run() {
        let fold_start = Instant::now();
        log::info!("fold {fold}: {} train / {} validation", plan.training(fold).len(), plan.validation(fold).len());
        let outcome = train_fold::<T>(cfg, data, plan, fold)?;
        parameters = count_parameters(&outcome.model);
        let dir = out.join(format!("fold{fold}"));
        create_dir(&dir)?;
        let final_acc = outcome.epochs.last().map_or(0.0, |e| e.validation_accuracy);
        let best_acc = outcome.epochs[outcome.best_epoch - 1].validation_accuracy;
        let final_path = dir.join("final.ckpt");
        let best_path = dir.join("best.ckpt");
        Checkpoint::from_model(&outcome.model, checkpoint_metadata(cfg, fold, cfg.epochs, "final", final_acc), Some(&outcome.optimizer))
            .write(&final_path)?;
        Checkpoint::from_model(&outcome.best_model, checkpoint_metadata(cfg, fold, outcome.best_epoch, "best", best_acc), None)
            .write(&best_path)?;
        results.push(FoldResult::from_confusion(fold, &outcome.confusion, &data.class_names)?);
        confusions.push((fold, outcome.confusion.clone()));
        folds.push(FoldLog {
            fold,
            best_epoch: outcome.best_epoch,
            best_validation_accuracy: best_acc,
            final_validation_accuracy: final_acc,
            final_checkpoint: final_path,
            best_checkpoint: best_path,
            seconds: fold_start.elapsed().as_secs_f64(),
            epochs: outcome.epochs,
        });
        log::info!("fold {fold} done: final validation accuracy {final_acc:.4}");
    }
    let log = TrainingLog { folds, seconds: start.elapsed().as_secs_f64() };
    let mut report = FoldReport::new(label, results)?;
    report.parameters = Some(parameters);
    write(&out.join("training_log.json"), serde_json::to_string_pretty(&log)? + "\n")?;
    write_reports(out, "report", std::slice::from_ref(&report))?;
    Ok(TrainOutcome { log, report, confusions })
}

/// Which samples [`cmd_eval`] scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalScope {
    /// The validation fold recorded in the checkpoint, or everything if none.
    Auto,
    Fold(usize),
    All,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: FoldReport,
    pub confusion: ConfusionMatrix,
    pub samples: usize,
}

/// The experiment stored in a checkpoint written by [`cmd_train`], if any.
pub fn checkpoint_experiment(ckpt: &Checkpoint) -> Result<Option<ExperimentConfig>> {
    match ckpt.metadata.get("experiment") {
        Some(v) => Ok(Some(serde_json::from_value(v.clone())?)),
        None => Ok(None),
    }
}

/// Eval-mode scoring of a checkpoint. `experiment` overrides the dataset and
/// fold settings stored in the checkpoint; its model section must match.
/// With `out`, the resolved experiment and the report are written there.
pub fn cmd_eval(checkpoint: &Path, experiment: Option<&ExperimentConfig>, scope: EvalScope, out: Option<&Path>) -> Result<EvalOutcome> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let stored = checkpoint_experiment(&ckpt)?;
    let exp = match (experiment, &stored) {
        (Some(e), _) => {
            if e.model != ckpt.config {
                return Err(Error::Config(format!(
                    "checkpoint model config does not match the experiment\n[checkpoint]\n{}\n[experiment]\n{}",
                    toml::to_string(&ckpt.config).unwrap_or_default(),
                    toml::to_string(&e.model).unwrap_or_default()
                )));
            }
            e.clone()
        }
        (None, Some(s)) => s.clone(),
        (None, None) => return Err(Error::Config("checkpoint carries no experiment; pass a config".into())),
    };
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("config.toml"), exp.to_toml())?;
    }
    let data = load_dataset(&exp)?;
    let indices: Vec<usize> = match scope {
        EvalScope::All => (0..data.len()).collect(),
        EvalScope::Fold(f) => fold_indices(&exp, &data, f)?,
        EvalScope::Auto => match ckpt.metadata.get("fold").and_then(|v| v.as_u64()) {
            Some(f) => fold_indices(&exp, &data, f as usize)?,
            None => (0..data.len()).collect(),
        },
    };
    let fold = match scope {
        EvalScope::Fold(f) => f,
        _ => ckpt.metadata.get("fold").and_then(|v| v.as_u64()).unwrap_or(0) as usize,
    };
    let confusion = match exp.precision {
        Precision::F32 => eval_with::<f32>(&ckpt, &data, &indices, exp.batch_size)?,
        Precision::F64 => eval_with::<f64>(&ckpt, &data, &indices, exp.batch_size)?,
    };
    let mut report = FoldReport::new(exp.name.clone(), vec![FoldResult::from_confusion(fold, &confusion, &data.class_names)?])?;
    report.parameters = Some(ckpt.tensors.iter().filter(|(k, _)| !k.starts_with("adam.") && !k.contains(".running_")).map(|(_, t)| t.len()).sum());
    if let Some(dir) = out {
        write_reports(dir, "report", std::slice::from_ref(&report))?;
    }
    Ok(EvalOutcome { report, confusion, samples: indices.len() })
}

fn fold_indices(exp: &ExperimentConfig, data: &Dataset, fold: usize) -> Result<Vec<usize>> {
    if fold >= exp.folds {
        return Err(Error::Config(format!("fold {fold} out of range for {} folds", exp.folds)));
    }
    Ok(stratified_kfold(&data.labels(), exp.folds, exp.seeds.fold)?.validation(fold).to_vec())
}

fn eval_with<T: Scalar>(ckpt: &Checkpoint, data: &Dataset, indices: &[usize], batch: usize) -> Result<ConfusionMatrix> {
    let model: SfusNet<T> = ckpt.to_model()?;
    if data.num_classes() != model.config().num_classes {
        return Err(Error::Data(format!("dataset has {} classes, checkpoint expects {}", data.num_classes(), model.config().num_classes)));
    }
    evaluate(&model, data, indices, batch)
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub full: TrainOutcome,
    pub ablated: TrainOutcome,
    pub full_parameters: usize,
    pub ablated_parameters: usize,
    /// Closed-form parameter count of all frequency branches.
    pub frequency_branch_parameters: usize,
}

impl AblationOutcome {
    pub fn parameter_difference(&self) -> usize {
        self.full_parameters - self.ablated_parameters
    }
}

/// Trains the configured model and its twin without frequency branches on the
/// same folds and seeds; writes both runs and a side-by-side report.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<AblationOutcome> {
    let mut full_cfg = cfg.clone();
    full_cfg.model.fft_branch_enabled = true;
    let mut ablated_cfg = full_cfg.clone();
    ablated_cfg.model.fft_branch_enabled = false;
    full_cfg.validate()?;
    ablated_cfg.validate()?;
    let root = &cfg.output;
    let (full_dir, ablated_dir) = (root.join("full"), root.join("no_fft"));
    create_dir(&full_dir)?;
    create_dir(&ablated_dir)?;
    write(&root.join("config.toml"), cfg.to_toml())?;
    write(&full_dir.join("config.toml"), full_cfg.to_toml())?;
    write(&ablated_dir.join("config.toml"), ablated_cfg.to_toml())?;

    let full_parameters = count_parameters(&build_model::<f32>(&full_cfg.model, 0)?);
    let ablated_parameters = count_parameters(&build_model::<f32>(&ablated_cfg.model, 0)?);
    let frequency_branch_parameters = full_cfg.model.frequency_branch_parameters();

    let full = train_into(&full_cfg, &full_dir, &cfg.name)?;
    let ablated = train_into(&ablated_cfg, &ablated_dir, &format!("{} w/o FFT", cfg.name))?;
    let reports = [full.report.clone(), ablated.report.clone()];
    write_reports(root, "ablation", &reports)?;
    let summary = format!(
        "parameters: full {full_parameters}, without frequency branch {ablated_parameters}, difference {}, closed-form frequency-branch count {frequency_branch_parameters}\n",
        full_parameters - ablated_parameters
    );
    write(&root.join("parameters.txt"), &summary)?;
    log::info!("{}", summary.trim_end());
    Ok(AblationOutcome { full, ablated, full_parameters, ablated_parameters, frequency_branch_parameters })
}

/// Writes `per_class` 8-bit grayscale PNGs per class as `<out>/band<c>/<i>.png`.
/// The images are those of [`crate::data::synth_dataset`] with the same seed.
pub fn cmd_synth(out: &Path, per_class: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    use rand::{Rng, SeedableRng};
    let mut master = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let spec = SynthSpec { per_class, size, seed };
    let mut written = Vec::with_capacity(SYNTH_CLASSES * per_class);
    for class in 0..SYNTH_CLASSES {
        let dir = out.join(format!("band{class}"));
        create_dir(&dir)?;
        for i in 0..spec.per_class {
            let img = synth_generate(class, spec.size, master.random())?;
            let gray: Vec<u8> = img.pixels.data()[..size * size].iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
            let buf = image::GrayImage::from_raw(size as u32, size as u32, gray).expect("buffer matches extent");
            let path = dir.join(format!("{i:05}.png"));
            buf.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
            written.push(path);
        }
    }
    Ok(written)
}

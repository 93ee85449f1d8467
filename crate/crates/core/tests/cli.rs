use std::path::Path;
use std::process::Command;

use sfusnet::cli::{cmd_ablate, cmd_eval, cmd_selftest, cmd_synth, cmd_train, EvalScope, SelftestOptions};
use sfusnet::data::{synth_dataset, Dataset, LoadMode, SynthSpec};
use sfusnet::experiment::{evaluate, DatasetSource, ExperimentConfig, Precision};
use sfusnet::model::{build_model, Checkpoint, ModelConfig};

fn tiny(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        epochs: 1,
        batch_size: 8,
        folds: 2,
        fold_limit: Some(1),
        precision: Precision::F32,
        output: out.to_path_buf(),
        model: ModelConfig { base_channels: 4, input_size: 16, dropblock_block_size: 1, ..ModelConfig::desk() },
        dataset: DatasetSource::Synthetic { per_class: 6, size: 16 },
        ..ExperimentConfig::desk()
    }
}

#[test]
fn train_smoke_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = cmd_train(&cfg).unwrap();
    assert_eq!(out.log.folds.len(), 1);
    assert_eq!(out.log.folds[0].epochs.len(), 1);
    assert_eq!(out.log.folds[0].epochs[0].epoch, 1);
    for f in ["config.toml", "folds.tsv", "training_log.json", "report.txt", "report.csv", "report.json", "fold0/final.ckpt", "fold0/best.ckpt"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let echoed = ExperimentConfig::from_toml(&std::fs::read_to_string(dir.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(echoed, cfg);
    assert_eq!(std::fs::read_to_string(dir.path().join("folds.tsv")).unwrap().lines().count(), 25);
}

#[test]
fn identical_runs_are_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut ca = tiny(a.path());
    ca.epochs = 2;
    let mut cb = ca.clone();
    cb.output = b.path().to_path_buf();
    let (ra, rb) = (cmd_train(&ca).unwrap(), cmd_train(&cb).unwrap());
    assert_eq!(ra.fold_accuracies(), rb.fold_accuracies());
    let strip = |l: &sfusnet::cli::TrainingLog| l.folds.iter().flat_map(|f| f.epochs.iter().map(|e| (e.train_loss, e.validation_accuracy))).collect::<Vec<_>>();
    assert_eq!(strip(&ra.log), strip(&rb.log));
    let ck = |d: &Path| Checkpoint::read(&d.join("fold0/final.ckpt")).unwrap().tensors;
    assert_eq!(ck(a.path()), ck(b.path()));
}

#[test]
fn re_evaluation_reproduces_logged_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = cmd_train(&cfg).unwrap();
    let logged = out.log.folds[0].final_validation_accuracy;
    let ev = cmd_eval(&dir.path().join("fold0/final.ckpt"), None, EvalScope::Auto, None).unwrap();
    assert_eq!(ev.report.folds[0].accuracy, logged);
    assert_eq!(ev.confusion, out.confusions[0].1);
    let best = &out.log.folds[0];
    let ev = cmd_eval(&best.best_checkpoint, Some(&cfg), EvalScope::Fold(0), None).unwrap();
    assert_eq!(ev.report.folds[0].accuracy, best.best_validation_accuracy);
}

#[test]
fn eval_rejects_mismatched_model_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_train(&cfg).unwrap();
    let mut other = cfg.clone();
    other.model.base_channels = 8;
    let err = cmd_eval(&dir.path().join("fold0/final.ckpt"), Some(&other), EvalScope::All, None).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("base_channels = 4") && msg.contains("base_channels = 8"), "{msg}");
}

#[test]
fn memorized_toy_set_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.epochs = 30;
    cfg.model.base_channels = 8;
    cfg.model.dropblock_drop_rate = 0.0;
    cfg.dataset = DatasetSource::Synthetic { per_class: 4, size: 16 };
    cfg.batch_size = 16;
    let out = cmd_train(&cfg).unwrap();
    let ckpt = &out.log.folds[0].final_checkpoint;
    let plan = sfusnet::data::stratified_kfold(&[0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3], 2, cfg.seeds.fold).unwrap();
    let data = sfusnet::experiment::load_dataset(&cfg).unwrap();
    let model = Checkpoint::read(ckpt).unwrap().to_model::<f32>().unwrap();
    let cm = evaluate(&model, &data, &plan.training(0), 16).unwrap();
    assert_eq!(cm.trace(), cm.total(), "{cm:?}");
    let report = sfusnet::eval::FoldResult::from_confusion(0, &cm, &data.class_names).unwrap();
    assert_eq!(report.accuracy, 1.0);
    for m in report.per_class.values() {
        assert_eq!((m.precision, m.sensitivity, m.specificity), (1.0, 1.0, 1.0));
    }
}

#[test]
fn random_initialisation_scores_chance() {
    let cfg = ModelConfig { base_channels: 4, input_size: 16, dropblock_block_size: 1, ..ModelConfig::desk() };
    let mut data = synth_dataset(&SynthSpec { per_class: 25, size: 16, seed: 5 }).unwrap();
    data.normalize(&Default::default()).unwrap();
    let all: Vec<usize> = (0..data.len()).collect();
    let accs: Vec<f64> = (0..30)
        .map(|seed| {
            let model = build_model::<f32>(&cfg, seed).unwrap();
            let cm = evaluate(&model, &data, &all, 50).unwrap();
            cm.trace() as f64 / cm.total() as f64
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.25).abs() <= 0.05, "mean {mean} over {accs:?}");
}

#[test]
fn ablation_twins_differ_only_in_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = cmd_ablate(&cfg).unwrap();
    let read = |p: &str| std::fs::read_to_string(dir.path().join(p)).unwrap();
    let (a, b) = (read("full/config.toml"), read("no_fft/config.toml"));
    let diff: Vec<(&str, &str)> = a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
    assert_eq!(a.lines().count(), b.lines().count());
    assert_eq!(diff, vec![("fft_branch_enabled = true", "fft_branch_enabled = false")]);
    assert_eq!(out.parameter_difference(), out.frequency_branch_parameters);
    assert!(out.ablated_parameters < out.full_parameters);
    let table = read("ablation.txt");
    assert!(table.contains("SFUSNet w/o FFT") && table.contains("band3"));
}

#[test]
fn synth_writes_identical_files_that_reload_within_quantisation() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files = cmd_synth(a.path(), 10, 24, 3).unwrap();
    assert_eq!(files.len(), 40);
    for c in 0..4 {
        assert_eq!(std::fs::read_dir(a.path().join(format!("band{c}"))).unwrap().count(), 10);
    }
    cmd_synth(b.path(), 10, 24, 3).unwrap();
    for f in &files {
        let rel = f.strip_prefix(a.path()).unwrap();
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
    }
    let loaded = Dataset::open(a.path(), 24, LoadMode::Strict).unwrap();
    let memory = synth_dataset(&SynthSpec { per_class: 10, size: 24, seed: 3 }).unwrap();
    assert_eq!(loaded.len(), memory.len());
    for (l, m) in loaded.images.iter().zip(&memory.images) {
        assert_eq!((l.label, &l.source), (m.label, &m.source));
        assert!(l.pixels.max_abs_diff(&m.pixels) <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn selftest_passes_and_detects_corrupted_fft_scale() {
    let good = cmd_selftest(&[], SelftestOptions::default()).unwrap();
    assert!(good.passed(), "{}", good.render());
    assert_eq!(good.suites.len(), 5);
    let bad = cmd_selftest(&["fft".into()], SelftestOptions { corrupt_fft_scale: true }).unwrap();
    assert!(!bad.passed());
    assert!(cmd_selftest(&["nope".into()], SelftestOptions::default()).is_err());
}

fn sfusnet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sfusnet")).args(args).env("SFUSNET_LOG", "warn").output().unwrap()
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(sfusnet(&["train", "--epochs", "0", "--out", out]).status.code(), Some(2));
    assert_eq!(sfusnet(&["train", "--dataset", "/definitely/not/here", "--out", out]).status.code(), Some(3));
    assert_eq!(sfusnet(&["selftest", "--suite", "fft", "--corrupt-fft-scale"]).status.code(), Some(5));
    let ok = sfusnet(&["selftest", "--suite", "metrics", "--out", out]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS metrics"));
    assert!(dir.path().join("selftest.toml").is_file());
    let cfg = sfusnet(&["config", "--preset", "paper"]);
    let paper = ExperimentConfig::from_toml(&String::from_utf8(cfg.stdout).unwrap()).unwrap();
    assert_eq!(paper.model, ModelConfig::paper());
}

#[test]
fn non_finite_loss_aborts_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.optimizer.learning_rate = 1e30;
    cfg.epochs = 3;
    let path = dir.path().join("blowup.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let out = sfusnet(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::NormalizationConstants;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::OptimizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Every source of randomness in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub fold: u64,
    pub batch: u64,
    pub dropblock: u64,
    pub data: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Seeds { init: seed, fold: seed, batch: seed, dropblock: seed, data: seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generated in memory from `seeds.data`.
    Synthetic { per_class: usize, size: usize },
    /// `<path>/<class>/*.{bmp,png}`.
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model label used in reports.
    pub name: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    /// Train only the first `fold_limit` folds of the k-fold plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_limit: Option<usize>,
    pub precision: Precision,
    pub deterministic: bool,
    pub output: PathBuf,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub seeds: Seeds,
    pub dataset: DatasetSource,
    pub normalization: NormalizationConstants,
}

impl ExperimentConfig {
    /// Reduced model on 64×64 synthetic data, 20 epochs.
    pub fn desk() -> Self {
        ExperimentConfig {
            name: "SFUSNet".into(),
            epochs: 20,
            batch_size: 64,
            folds: 5,
            fold_limit: None,
            precision: Precision::F32,
            deterministic: true,
            output: PathBuf::from("runs/desk"),
            model: ModelConfig::desk(),
            optimizer: OptimizerConfig::default(),
            seeds: Seeds::all(0),
            dataset: DatasetSource::Synthetic { per_class: 500, size: 64 },
            normalization: NormalizationConstants::PAPER,
        }
    }

    /// Full-size model, 224×224 images from disk, 150 epochs, batch 128.
    pub fn paper() -> Self {
        ExperimentConfig {
            epochs: 150,
            batch_size: 128,
            output: PathBuf::from("runs/paper"),
            model: ModelConfig::paper(),
            dataset: DatasetSource::Directory { path: PathBuf::from("data/breast_ultrasound") },
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config is always representable in TOML")
    }

    /// Number of folds actually trained.
    pub fn folds_to_run(&self) -> usize {
        self.fold_limit.unwrap_or(self.folds).min(self.folds)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        if self.folds < 2 {
            return fail(format!("folds must be at least 2, got {}", self.folds));
        }
        if let Some(l) = self.fold_limit {
            if l == 0 || l > self.folds {
                return fail(format!("fold_limit must be in 1..={}, got {l}", self.folds));
            }
        }
        self.model.validate()?;
        self.optimizer.validate()?;
        self.normalization.validate()?;
        match &self.dataset {
            DatasetSource::Synthetic { per_class, size } => {
                if *per_class < self.folds {
                    return fail(format!("synthetic per_class {per_class} is below the fold count {}", self.folds));
                }
                if *size < 8 {
                    return fail(format!("synthetic size must be at least 8, got {size}"));
                }
                if self.model.num_classes != crate::data::SYNTH_CLASSES {
                    return fail(format!("synthetic data has {} classes, model has {}", crate::data::SYNTH_CLASSES, self.model.num_classes));
                }
            }
            DatasetSource::Directory { path } => {
                if !path.is_dir() {
                    return Err(Error::Data(format!("dataset directory {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }
}

//! Experiment configuration and the k-fold training loop.

mod config;
mod train;

pub use config::{DatasetSource, ExperimentConfig, Precision, Seeds};
pub use train::{evaluate, load_dataset, sub_seed, train_fold, EpochLog, FoldOutcome};

//! Image ingestion, preprocessing, the synthetic spectral dataset, fold
//! planning and batching.

mod batch;
mod folds;
mod image;
mod synth;

pub use self::image::{load_image, normalize, resize_bilinear, Dataset, LabeledImage, LoadMode, NormalizationConstants};
pub use batch::make_batches;
pub use folds::{stratified_kfold, FoldPlan};
pub use synth::{band_energy_fractions, band_of, synth_dataset, synth_generate, SynthSpec, SYNTH_CLASSES};

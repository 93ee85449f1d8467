//! The SFUSNet architecture: stem, four stages of Conv-FFT blocks, downsamplers,
//! DropBlock and the classification head.

mod block;
mod checkpoint;
mod config;
pub mod dropblock;
mod layers;
mod net;
mod params;

pub use block::{ConvFftBlock, ConvFftUnit};
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use config::{ModelConfig, INPUT_CHANNELS};
pub use dropblock::dropblock;
pub use net::{build_model, count_parameters, ForwardOutput, SfusNet};
pub use params::{ParamId, ParamStore};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub stage_depths: [usize; 4],
    pub num_classes: usize,
    /// Square input extent S (input is N×3×S×S).
    pub input_size: usize,
    pub dropblock_block_size: usize,
    pub dropblock_drop_rate: f64,
    pub fft_branch_enabled: bool,
}

pub const INPUT_CHANNELS: usize = 3;

impl ModelConfig {
    /// 224×224 input, 32 base channels, stage depths [3, 6, 3, 3], four classes.
    pub fn paper() -> Self {
        ModelConfig {
            base_channels: 32,
            stage_depths: [3, 6, 3, 3],
            num_classes: 4,
            input_size: 224,
            dropblock_block_size: 5,
            dropblock_drop_rate: 0.1,
            fft_branch_enabled: true,
        }
    }

    /// Reduced model for 64×64 inputs.
    pub fn desk() -> Self {
        ModelConfig { base_channels: 16, stage_depths: [1, 1, 1, 1], input_size: 64, ..Self::paper() }
    }

    /// Channel count of stage `i` (0-based).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Spatial extent inside stage `i` (0-based).
    pub fn stage_extent(&self, i: usize) -> usize {
        self.input_size >> (i + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.base_channels == 0 || self.num_classes == 0 {
            return fail("base_channels and num_classes must be positive".into());
        }
        if self.stage_depths.contains(&0) {
            return fail(format!("stage depths must be positive, got {:?}", self.stage_depths));
        }
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return fail(format!("input_size must be a positive multiple of 16, got {}", self.input_size));
        }
        let b = self.dropblock_block_size;
        if b == 0 || b % 2 == 0 {
            return fail(format!("dropblock_block_size must be a positive odd integer, got {b}"));
        }
        // DropBlock follows stages 2 and 3; stage 3 has the smaller map.
        if b > self.stage_extent(2) {
            return fail(format!(
                "dropblock_block_size {b} exceeds the {}×{} map after stage 3",
                self.stage_extent(2),
                self.stage_extent(2)
            ));
        }
        if !(0.0..1.0).contains(&self.dropblock_drop_rate) {
            return fail(format!("dropblock_drop_rate must lie in [0, 1), got {}", self.dropblock_drop_rate));
        }
        Ok(())
    }

    /// Closed-form parameter count of every frequency branch in the network:
    /// two bias-free 3×3 convolutions over 2C packed channels, each followed by
    /// batch norm, per block.
    pub fn frequency_branch_parameters(&self) -> usize {
        (0..4)
            .map(|i| {
                let c2 = 2 * self.stage_channels(i);
                self.stage_depths[i] * 2 * (c2 * c2 * 9 + 2 * c2)
            })
            .sum()
    }
}

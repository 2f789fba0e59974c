use super::ModelError;
use serde::{Deserialize, Serialize};

/// Dual-pathway network dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowFastConfig {
    /// Fast/slow temporal ratio.
    pub alpha: usize,
    /// Slow/fast channel ratio (fast pathway has `base_channels / beta_inv` channels).
    pub beta_inv: usize,
    pub stage_blocks: [usize; 4],
    pub base_channels: usize,
    pub fusion_kernel_t: usize,
    pub slow_frames: usize,
    pub side: usize,
    pub single_pathway: bool,
}

impl SlowFastConfig {
    /// ResNet-50 depth, 8 slow / 32 fast frames at 224².
    pub fn paper() -> Self {
        Self {
            alpha: 4,
            beta_inv: 8,
            stage_blocks: [3, 4, 6, 3],
            base_channels: 64,
            fusion_kernel_t: 5,
            slow_frames: 8,
            side: 224,
            single_pathway: false,
        }
    }

    /// Desk-scale network: one block per stage, 4 slow / 16 fast frames at 64².
    pub fn tiny() -> Self {
        Self {
            alpha: 4,
            beta_inv: 8,
            stage_blocks: [1, 1, 1, 1],
            base_channels: 8,
            fusion_kernel_t: 5,
            slow_frames: 4,
            side: 64,
            single_pathway: false,
        }
    }

    pub fn fast_frames(&self) -> usize {
        self.alpha * self.slow_frames
    }

    pub fn fast_base(&self) -> usize {
        self.base_channels / self.beta_inv
    }

    /// Bottleneck inner width of stage `i` for a pathway with `base` channels.
    pub fn stage_width(base: usize, i: usize) -> usize {
        base << i
    }

    pub fn stage_out(base: usize, i: usize) -> usize {
        4 * Self::stage_width(base, i)
    }

    /// Width of the pooled feature feeding both heads.
    pub fn embed_dim(&self) -> usize {
        let slow = Self::stage_out(self.base_channels, 3);
        if self.single_pathway {
            slow
        } else {
            slow + Self::stage_out(self.fast_base(), 3)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.alpha == 0 || self.beta_inv == 0 || self.slow_frames == 0 || self.side == 0 {
            return err("alpha, beta_inv, slow_frames and side must be positive".into());
        }
        if self.fast_base() < 1 {
            return err(format!(
                "beta·base_channels = {}/{} < 1",
                self.base_channels, self.beta_inv
            ));
        }
        if self.fusion_kernel_t % 2 == 0 {
            return err(format!("fusion_kernel_t {} must be odd", self.fusion_kernel_t));
        }
        if self.stage_blocks.iter().any(|&b| b == 0) {
            return err("every stage needs at least one block".into());
        }
        Ok(())
    }
}

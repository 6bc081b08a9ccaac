use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel expansion of the last 1×1 convolution in a bottleneck block.
pub const BOTTLENECK_EXPANSION: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemConfig {
    pub kernel: usize,
    pub stride: usize,
    /// 3×3 stride-2 max pool after the stem activation.
    pub max_pool: bool,
}

impl Default for StemConfig {
    fn default() -> Self {
        Self {
            kernel: 3,
            stride: 1,
            max_pool: false,
        }
    }
}

/// Declarative topology of a branched residual network.
///
/// Blocks are numbered 1..=total across all stages. Blocks `1..=branch_after_block`
/// form the shared trunk; every branch owns a copy of the remaining blocks and
/// its own classifier head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchedNetConfig {
    pub stage_blocks: Vec<usize>,
    pub stage_widths: Vec<usize>,
    #[serde(default)]
    pub bottleneck: bool,
    pub branch_after_block: usize,
    pub num_branches: usize,
    pub num_classes: usize,
    #[serde(default = "default_channels")]
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    #[serde(default)]
    pub stem: StemConfig,
}

fn default_channels() -> usize {
    3
}

impl BranchedNetConfig {
    /// Desk-scale network: three basic-block stages, branching after block 4 of 6.
    pub fn mini() -> Self {
        Self {
            stage_blocks: vec![2, 2, 2],
            stage_widths: vec![16, 32, 64],
            bottleneck: false,
            branch_after_block: 4,
            num_branches: 2,
            num_classes: 10,
            input_channels: 3,
            input_height: 32,
            input_width: 32,
            stem: StemConfig::default(),
        }
    }

    /// The 66-block bottleneck network branched after block 39 into two branches.
    pub fn paper_scale() -> Self {
        Self {
            stage_blocks: vec![3, 24, 36, 3],
            stage_widths: vec![64, 128, 256, 512],
            bottleneck: true,
            branch_after_block: 39,
            num_branches: 2,
            num_classes: 1000,
            input_channels: 3,
            input_height: 224,
            input_width: 224,
            stem: StemConfig {
                kernel: 7,
                stride: 2,
                max_pool: true,
            },
        }
    }

    pub fn total_blocks(&self) -> usize {
        self.stage_blocks.iter().sum()
    }

    pub fn stem_width(&self) -> usize {
        self.stage_widths[0]
    }

    pub fn convs_per_block(&self) -> usize {
        if self.bottleneck {
            3
        } else {
            2
        }
    }

    /// Channels leaving the last block, i.e. the classifier's input width.
    pub fn feature_width(&self) -> usize {
        let w = *self.stage_widths.last().expect("validated config");
        if self.bottleneck {
            w * BOTTLENECK_EXPANSION
        } else {
            w
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stage_blocks.is_empty() {
            return bad("model.stage_blocks must not be empty".into());
        }
        if self.stage_blocks.len() != self.stage_widths.len() {
            return bad(format!(
                "model.stage_widths has {} entries but stage_blocks has {}",
                self.stage_widths.len(),
                self.stage_blocks.len()
            ));
        }
        if self.stage_blocks.contains(&0) {
            return bad("model.stage_blocks entries must be ≥ 1".into());
        }
        if self.stage_widths.contains(&0) {
            return bad("model.stage_widths entries must be ≥ 1".into());
        }
        if self.stage_widths[0].checked_mul(BOTTLENECK_EXPANSION).is_none() {
            return bad("model.stage_widths too large for bottleneck expansion".into());
        }
        if self.branch_after_block > self.total_blocks() {
            return bad(format!(
                "model.branch_after_block = {} exceeds total blocks {}",
                self.branch_after_block,
                self.total_blocks()
            ));
        }
        if self.num_branches == 0 {
            return bad("model.num_branches must be ≥ 1".into());
        }
        if self.num_classes < 2 {
            return bad("model.num_classes must be ≥ 2".into());
        }
        if self.input_channels == 0 || self.input_height == 0 || self.input_width == 0 {
            return bad("model input dimensions must be ≥ 1".into());
        }
        if self.stem.kernel == 0 || self.stem.stride == 0 {
            return bad("model.stem kernel and stride must be ≥ 1".into());
        }
        self.final_spatial()?;
        Ok(())
    }

    /// Spatial size after the stem.
    pub(crate) fn stem_spatial(&self) -> Result<(usize, usize)> {
        let pad = self.stem.kernel / 2;
        let conv = |d: usize| -> Option<usize> {
            (d + 2 * pad)
                .checked_sub(self.stem.kernel)
                .map(|r| r / self.stem.stride + 1)
        };
        let (mut h, mut w) = match (conv(self.input_height), conv(self.input_width)) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(Error::Config(format!(
                    "model.stem.kernel {} larger than padded input",
                    self.stem.kernel
                )))
            }
        };
        if self.stem.max_pool {
            if h < 3 || w < 3 {
                return Err(Error::Config("input too small for the stem max pool".into()));
            }
            h = (h - 3) / 2 + 1;
            w = (w - 3) / 2 + 1;
        }
        Ok((h, w))
    }

    fn final_spatial(&self) -> Result<(usize, usize)> {
        let (mut h, mut w) = self.stem_spatial()?;
        for _ in 1..self.stage_blocks.len() {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        Ok((h, w))
    }
}

//! Shape-level layer plan shared by the builder and the parameter counter.

use super::config::{BranchedNetConfig, BOTTLENECK_EXPANSION};

/// A bias-free convolution followed by batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvBnSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvBnSpec {
    pub fn params(&self) -> usize {
        self.cin * self.cout * self.kernel * self.kernel + 2 * self.cout
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BlockSpec {
    /// 1-based position in the unbranched block sequence.
    pub index: usize,
    pub layers: Vec<ConvBnSpec>,
    /// Projection shortcut; `None` means identity.
    pub shortcut: Option<ConvBnSpec>,
}

impl BlockSpec {
    pub fn params(&self) -> usize {
        self.layers.iter().map(ConvBnSpec::params).sum::<usize>() + self.shortcut.as_ref().map_or(0, ConvBnSpec::params)
    }
}

pub(crate) fn stem_spec(cfg: &BranchedNetConfig) -> ConvBnSpec {
    ConvBnSpec {
        cin: cfg.input_channels,
        cout: cfg.stem_width(),
        kernel: cfg.stem.kernel,
        stride: cfg.stem.stride,
    }
}

pub(crate) fn head_params(cfg: &BranchedNetConfig) -> usize {
    cfg.feature_width() * cfg.num_classes + cfg.num_classes
}

/// Every residual block of the unbranched network, in order.
///
/// The first block of each stage after the first downsamples with stride 2;
/// a projection shortcut appears exactly where width or stride changes.
pub(crate) fn block_plan(cfg: &BranchedNetConfig) -> Vec<BlockSpec> {
    let mut blocks = Vec::with_capacity(cfg.total_blocks());
    let mut cin = cfg.stem_width();
    for (stage, (&count, &width)) in cfg.stage_blocks.iter().zip(&cfg.stage_widths).enumerate() {
        let cout = if cfg.bottleneck {
            width * BOTTLENECK_EXPANSION
        } else {
            width
        };
        for j in 0..count {
            let stride = if stage > 0 && j == 0 { 2 } else { 1 };
            let layers = if cfg.bottleneck {
                vec![
                    ConvBnSpec {
                        cin,
                        cout: width,
                        kernel: 1,
                        stride: 1,
                    },
                    ConvBnSpec {
                        cin: width,
                        cout: width,
                        kernel: 3,
                        stride,
                    },
                    ConvBnSpec {
                        cin: width,
                        cout,
                        kernel: 1,
                        stride: 1,
                    },
                ]
            } else {
                vec![
                    ConvBnSpec {
                        cin,
                        cout,
                        kernel: 3,
                        stride,
                    },
                    ConvBnSpec {
                        cin: cout,
                        cout,
                        kernel: 3,
                        stride: 1,
                    },
                ]
            };
            let shortcut = (cin != cout || stride != 1).then_some(ConvBnSpec {
                cin,
                cout,
                kernel: 1,
                stride,
            });
            blocks.push(BlockSpec {
                index: blocks.len() + 1,
                layers,
                shortcut,
            });
            cin = cout;
        }
    }
    blocks
}

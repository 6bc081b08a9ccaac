//! Naive reference implementations used as independent oracles.
#![allow(dead_code)]

use branchnet::tensor_core::Tensor;

/// Six-nested-loop cross-correlation with zero padding.
pub fn conv2d_direct(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    for s in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oy * stride + i) as isize - pad as isize;
                                let xx = (ox * stride + j) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                    acc += x.at(&[s, ci, y as usize, xx as usize]) * w.at(&[co, ci, i, j]);
                                }
                            }
                        }
                    }
                    out.set(&[s, co, oy, ox], acc);
                }
            }
        }
    }
    out
}

/// Per-window loop pooling; `max` selects max vs mean.
pub fn pool_direct(x: &Tensor, max: bool, window: (usize, usize), stride: (usize, usize)) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let ho = (h - window.0) / stride.0 + 1;
    let wo = (w - window.1) / stride.1 + 1;
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    for s in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut vals = Vec::new();
                    for i in 0..window.0 {
                        for j in 0..window.1 {
                            vals.push(x.at(&[s, ch, oy * stride.0 + i, ox * stride.1 + j]));
                        }
                    }
                    let v = if max {
                        vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    };
                    out.set(&[s, ch, oy, ox], v);
                }
            }
        }
    }
    out
}

/// Triple-loop `x · wᵀ + b`.
pub fn linear_direct(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[0];
    let mut out = Tensor::zeros(&[n, k]);
    for i in 0..n {
        for j in 0..k {
            let mut acc = b.data()[j];
            for t in 0..d {
                acc += x.at(&[i, t]) * w.at(&[j, t]);
            }
            out.set(&[i, j], acc);
        }
    }
    out
}

/// Two-pass per-channel mean and biased variance over (N, H, W).
pub fn channel_stats(x: &Tensor) -> Vec<(f64, f64)> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    (0..c)
        .map(|ch| {
            let mut vals = Vec::new();
            for s in 0..n {
                for y in 0..h {
                    for xx in 0..w {
                        vals.push(x.at(&[s, ch, y, xx]));
                    }
                }
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            (mean, var)
        })
        .collect()
}

/// Batch norm in train mode computed from [`channel_stats`].
pub fn batch_norm_direct(x: &Tensor, gamma: &[f64], beta: &[f64], eps: f64) -> Tensor {
    let stats = channel_stats(x);
    let mut out = x.clone();
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    for s in 0..n {
        for ch in 0..c {
            let (mean, var) = stats[ch];
            for y in 0..h {
                for xx in 0..w {
                    let v = (x.at(&[s, ch, y, xx]) - mean) / (var + eps).sqrt();
                    out.set(&[s, ch, y, xx], gamma[ch] * v + beta[ch]);
                }
            }
        }
    }
    out
}

/// Two basic blocks of width 4 and 8, branching after the first.
pub fn tiny_config(classes: usize, size: usize) -> branchnet::model::BranchedNetConfig {
    branchnet::model::BranchedNetConfig {
        stage_blocks: vec![1, 1],
        stage_widths: vec![4, 8],
        branch_after_block: 1,
        num_classes: classes,
        input_height: size,
        input_width: size,
        ..branchnet::model::BranchedNetConfig::mini()
    }
}

/// Row-wise log-softmax by direct formula.
pub fn log_softmax_direct(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
    row.iter().map(|v| v - m - z.ln()).collect()
}

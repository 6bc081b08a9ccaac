//! Slice-level forward/backward kernels used by the tape.
//!
//! Convolutions run as one GEMM over the whole batch. Threads only split the
//! data movement around it (patch extraction, transposes), never a reduction,
//! so threaded and sequential execution produce bitwise-identical results.

use rayon::prelude::*;

/// Row-major `c = a · b` (beta = 0) or `c += a · b` (beta = 1) with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    // SAFETY: bounds checked above for every index touched by the m×k, k×n
    // and m×n strided views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn in_sample(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_sample(&self) -> usize {
        self.cout * self.out_pixels()
    }
}

/// Patch matrix of one sample, transposed: `cols[q * patch + r]` holds patch
/// entry `r` (channel-major, then kernel row, then column) for output pixel `q`.
fn im2col_t(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let patch = g.patch();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let dst = &mut cols[(oy * g.wo + ox) * patch..(oy * g.wo + ox + 1) * patch];
            let mut r = 0;
            for c in 0..g.cin {
                for i in 0..g.kh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    for j in 0..g.kw {
                        let xx = (ox * g.stride + j) as isize - g.pad as isize;
                        dst[r] = if y < 0 || y >= g.h as isize || xx < 0 || xx >= g.w as isize {
                            0.0
                        } else {
                            x[(c * g.h + y as usize) * g.w + xx as usize]
                        };
                        r += 1;
                    }
                }
            }
        }
    }
}

fn col2im_t(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let patch = g.patch();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let src = &cols[(oy * g.wo + ox) * patch..(oy * g.wo + ox + 1) * patch];
            let mut r = 0;
            for c in 0..g.cin {
                for i in 0..g.kh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    for j in 0..g.kw {
                        let xx = (ox * g.stride + j) as isize - g.pad as isize;
                        if y >= 0 && y < g.h as isize && xx >= 0 && xx < g.w as isize {
                            dx[(c * g.h + y as usize) * g.w + xx as usize] += src[r];
                        }
                        r += 1;
                    }
                }
            }
        }
    }
}

fn for_each_sample<F>(out: &mut [f64], chunk: usize, parallel: bool, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    if parallel {
        out.par_chunks_mut(chunk).enumerate().for_each(|(s, o)| f(s, o));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(s, o)| f(s, o));
    }
}

/// Stacked transposed patches of the whole batch, `[n · p, patch]`.
fn batch_cols(x: &[f64], g: &ConvGeom, parallel: bool) -> Vec<f64> {
    let mut cols = vec![0.0; g.n * g.out_pixels() * g.patch()];
    for_each_sample(&mut cols, g.out_pixels() * g.patch(), parallel, |s, c| {
        im2col_t(&x[s * g.in_sample()..(s + 1) * g.in_sample()], g, c)
    });
    cols
}

pub(crate) fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    g: &ConvGeom,
    parallel: bool,
) -> Vec<f64> {
    let (patch, p) = (g.patch(), g.out_pixels());
    let cols = batch_cols(x, g, parallel);
    // yᵀ[n·p, cout] = cols[n·p, patch] · Wᵀ[patch, cout]
    let mut yt = vec![0.0; g.n * p * g.cout];
    gemm(
        g.n * p,
        patch,
        g.cout,
        &cols,
        (patch, 1),
        weight,
        (1, patch),
        &mut yt,
        0.0,
    );
    let mut out = vec![0.0; g.n * g.out_sample()];
    for_each_sample(&mut out, g.out_sample(), parallel, |s, o| {
        let src = &yt[s * p * g.cout..(s + 1) * p * g.cout];
        for (co, row) in o.chunks_mut(p).enumerate() {
            let b = bias.map_or(0.0, |b| b[co]);
            for (q, v) in row.iter_mut().enumerate() {
                *v = src[q * g.cout + co] + b;
            }
        }
    });
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    g: &ConvGeom,
    need: (bool, bool, bool),
    parallel: bool,
) -> ConvGrads {
    let (need_input, need_weight, need_bias) = need;
    let (patch, p) = (g.patch(), g.out_pixels());

    // dYᵀ[n·p, cout]
    let mut dyt = vec![0.0; g.n * p * g.cout];
    if need_input || need_weight {
        for_each_sample(&mut dyt, p * g.cout, parallel, |s, d| {
            let src = &dy[s * g.out_sample()..(s + 1) * g.out_sample()];
            for (co, row) in src.chunks(p).enumerate() {
                for (q, v) in row.iter().enumerate() {
                    d[q * g.cout + co] = *v;
                }
            }
        });
    }

    let input = need_input.then(|| {
        // dcols[n·p, patch] = dYᵀ[n·p, cout] · W[cout, patch]
        let mut dcols = vec![0.0; g.n * p * patch];
        gemm(
            g.n * p,
            g.cout,
            patch,
            &dyt,
            (g.cout, 1),
            weight,
            (patch, 1),
            &mut dcols,
            0.0,
        );
        let mut dx = vec![0.0; g.n * g.in_sample()];
        for_each_sample(&mut dx, g.in_sample(), parallel, |s, dxs| {
            col2im_t(&dcols[s * p * patch..(s + 1) * p * patch], g, dxs);
        });
        dx
    });

    let weight_grad = need_weight.then(|| {
        let cols = batch_cols(x, g, parallel);
        // dW[cout, patch] = dY[cout, n·p] · cols[n·p, patch]
        let mut dw = vec![0.0; g.cout * patch];
        gemm(
            g.cout,
            g.n * p,
            patch,
            &dyt,
            (1, g.cout),
            &cols,
            (patch, 1),
            &mut dw,
            0.0,
        );
        dw
    });

    let bias = need_bias.then(|| {
        let mut db = vec![0.0; g.cout];
        for s in 0..g.n {
            let dys = &dy[s * g.out_sample()..(s + 1) * g.out_sample()];
            for (co, row) in dys.chunks(p).enumerate() {
                db[co] += row.iter().sum::<f64>();
            }
        }
        db
    });

    ConvGrads {
        input,
        weight: weight_grad,
        bias,
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub ho: usize,
    pub wo: usize,
}

impl PoolGeom {
    fn origin(&self, plane: usize, oy: usize, ox: usize) -> usize {
        plane * self.h * self.w + oy * self.stride.0 * self.w + ox * self.stride.1
    }
}

/// Max pooling; returns outputs and the flat input index that won each window.
/// Ties go to the first element in row-major scan order.
pub(crate) fn max_pool_forward(x: &[f64], g: &PoolGeom) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.planes * g.ho * g.wo);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..g.planes {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let origin = g.origin(plane, oy, ox);
                let mut best_idx = origin;
                for i in 0..g.window.0 {
                    for j in 0..g.window.1 {
                        let idx = origin + i * g.w + j;
                        if x[idx] > x[best_idx] {
                            best_idx = idx;
                        }
                    }
                }
                out.push(x[best_idx]);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn avg_pool_forward(x: &[f64], g: &PoolGeom) -> Vec<f64> {
    let area = (g.window.0 * g.window.1) as f64;
    let mut out = Vec::with_capacity(g.planes * g.ho * g.wo);
    for plane in 0..g.planes {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let origin = g.origin(plane, oy, ox);
                let mut acc = 0.0;
                for i in 0..g.window.0 {
                    let row = origin + i * g.w;
                    acc += x[row..row + g.window.1].iter().sum::<f64>();
                }
                out.push(acc / area);
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(dy: &[f64], g: &PoolGeom) -> Vec<f64> {
    let area = (g.window.0 * g.window.1) as f64;
    let mut dx = vec![0.0; g.planes * g.h * g.w];
    for plane in 0..g.planes {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let share = dy[(plane * g.ho + oy) * g.wo + ox] / area;
                let origin = g.origin(plane, oy, ox);
                for i in 0..g.window.0 {
                    let row = origin + i * g.w;
                    dx[row..row + g.window.1].iter_mut().for_each(|v| *v += share);
                }
            }
        }
    }
    dx
}

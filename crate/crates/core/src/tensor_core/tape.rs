use super::kernels::{self, ConvGeom, PoolGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Running mean/variance carried by a batch-norm layer between batches.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormOptions {
    pub epsilon: f64,
    /// Weight kept on the old running value: `running ← m·running + (1 − m)·batch`.
    pub momentum: f64,
}

impl Default for BatchNormOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            momentum: 0.9,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu {
        input: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        input: Var,
        geom: PoolGeom,
    },
    GlobalAvgPool {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Softmax {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    WeightedSum {
        input: Var,
        weights: Tensor,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Tensor,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so gradients can be replayed in reverse.
///
/// Node order is the recording order, which is a topological order of the
/// graph; [`Tape::backward`] walks it once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    parallel: bool,
}

fn dims4(op: &'static str, what: &str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::shape(op, what, format!("expected rank 4 [N,C,H,W], got {s:?}"))),
    }
}

fn dims2(op: &'static str, what: &str, t: &Tensor) -> Result<[usize; 2]> {
    match *t.shape() {
        [a, b] => Ok([a, b]),
        ref s => Err(Error::shape(op, what, format!("expected rank 2, got {s:?}"))),
    }
}

fn expect_vec(op: &'static str, what: &str, t: &Tensor, len: usize) -> Result<()> {
    if t.shape() != [len] {
        return Err(Error::shape(op, what, format!("expected [{len}], got {:?}", t.shape())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose convolution kernels fan samples out across the rayon pool.
    /// Results are bitwise identical to the sequential tape.
    pub fn with_parallel(parallel: bool) -> Self {
        Self {
            parallel,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient on [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    /// 2-D cross-correlation (no kernel flip) with symmetric zero padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, cin, h, w] = dims4(OP, "input", self.value(input))?;
        let [cout, wcin, kh, kw] = dims4(OP, "weight", self.value(weight))?;
        if wcin != cin {
            return Err(Error::shape(
                OP,
                "Cin",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid(OP, "stride must be positive"));
        }
        if kh > h + 2 * pad {
            return Err(Error::shape(
                OP,
                "kh",
                format!("kernel height {kh} exceeds padded input height {}", h + 2 * pad),
            ));
        }
        if kw > w + 2 * pad {
            return Err(Error::shape(
                OP,
                "kw",
                format!("kernel width {kw} exceeds padded input width {}", w + 2 * pad),
            ));
        }
        if let Some(b) = bias {
            expect_vec(OP, "bias", self.value(b), cout)?;
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
            self.parallel,
        );
        let value = Tensor::from_vec(&[n, cout, geom.ho, geom.wo], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            OP,
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &inputs,
        )
    }

    /// Per-channel batch normalization over (N, H, W).
    ///
    /// Train mode normalizes with batch statistics and folds them into
    /// `running` (variance enters the running estimate unbiased); eval mode
    /// reads `running` only.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats,
        mode: Mode,
        options: BatchNormOptions,
    ) -> Result<Var> {
        const OP: &str = "batch_norm2d";
        let [n, c, h, w] = dims4(OP, "input", self.value(input))?;
        expect_vec(OP, "gamma", self.value(gamma), c)?;
        expect_vec(OP, "beta", self.value(beta), c)?;
        expect_vec(OP, "running_mean", &running.mean, c)?;
        expect_vec(OP, "running_var", &running.var, c)?;
        let plane = h * w;
        let count = n * plane;
        let train = mode == Mode::Train;
        if train && count < 2 {
            return Err(Error::invalid(
                OP,
                "train mode needs at least two values per channel (N·H·W ≥ 2)",
            ));
        }

        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        let mut batch_stats = Vec::with_capacity(if train { c } else { 0 });

        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum = 0.0;
                for s in 0..n {
                    let off = (s * c + ch) * plane;
                    sum += x[off..off + plane].iter().sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0;
                for s in 0..n {
                    let off = (s * c + ch) * plane;
                    sq += x[off..off + plane].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                }
                let var = sq / count as f64;
                batch_stats.push((mean, var));
                (mean, var)
            } else {
                (running.mean.data()[ch], running.var.data()[ch])
            };
            let istd = 1.0 / (var + options.epsilon).sqrt();
            inv_std[ch] = istd;
            for s in 0..n {
                let off = (s * c + ch) * plane;
                for i in off..off + plane {
                    xhat[i] = (x[i] - mean) * istd;
                    out[i] = g[ch] * xhat[i] + b[ch];
                }
            }
        }

        let value = Tensor::from_vec(&[n, c, h, w], out)?;
        let var = self.push(
            OP,
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[input, gamma, beta],
        )?;

        if train {
            let m = options.momentum;
            let unbias = count as f64 / (count - 1) as f64;
            let rm = running.mean.data_mut();
            for (ch, &(mean, _)) in batch_stats.iter().enumerate() {
                rm[ch] = m * rm[ch] + (1.0 - m) * mean;
            }
            let rv = running.var.data_mut();
            for (ch, &(_, v)) in batch_stats.iter().enumerate() {
                rv[ch] = m * rv[ch] + (1.0 - m) * v * unbias;
            }
        }
        Ok(var)
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push("relu", value, Op::Relu { input }, &[input])
    }

    /// Square-window pooling without padding.
    pub fn pool2d(&mut self, input: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var> {
        self.pool2d_rect(input, kind, (window, window), (stride, stride))
    }

    pub fn pool2d_rect(
        &mut self,
        input: Var,
        kind: PoolKind,
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var> {
        const OP: &str = "pool2d";
        let [n, c, h, w] = dims4(OP, "input", self.value(input))?;
        if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid(OP, "window and stride must be positive"));
        }
        if window.0 > h {
            return Err(Error::shape(
                OP,
                "H",
                format!("window height {} exceeds input height {h}", window.0),
            ));
        }
        if window.1 > w {
            return Err(Error::shape(
                OP,
                "W",
                format!("window width {} exceeds input width {w}", window.1),
            ));
        }
        let geom = PoolGeom {
            planes: n * c,
            h,
            w,
            window,
            stride,
            ho: (h - window.0) / stride.0 + 1,
            wo: (w - window.1) / stride.1 + 1,
        };
        let x = self.value(input).data();
        let shape = [n, c, geom.ho, geom.wo];
        match kind {
            PoolKind::Max => {
                let (out, argmax) = kernels::max_pool_forward(x, &geom);
                let value = Tensor::from_vec(&shape, out)?;
                self.push(OP, value, Op::MaxPool { input, argmax }, &[input])
            }
            PoolKind::Avg => {
                let out = kernels::avg_pool_forward(x, &geom);
                let value = Tensor::from_vec(&shape, out)?;
                self.push(OP, value, Op::AvgPool { input, geom }, &[input])
            }
        }
    }

    /// Spatial mean per channel: `[N,C,H,W] → [N,C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = dims4("global_avg_pool", "input", self.value(input))?;
        let plane = h * w;
        let out = self
            .value(input)
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let value = Tensor::from_vec(&[n, c], out)?;
        self.push("global_avg_pool", value, Op::GlobalAvgPool { input }, &[input])
    }

    /// `input · weightᵀ + bias` with `input: [N,D]`, `weight: [K,D]`, `bias: [K]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "linear";
        let [n, d] = dims2(OP, "input", self.value(input))?;
        let [k, wd] = dims2(OP, "weight", self.value(weight))?;
        if wd != d {
            return Err(Error::shape(
                OP,
                "D",
                format!("input has {d} features but weight expects {wd}"),
            ));
        }
        expect_vec(OP, "bias", self.value(bias), k)?;
        let mut out = vec![0.0; n * k];
        kernels::gemm(
            n,
            d,
            k,
            self.value(input).data(),
            (d, 1),
            self.value(weight).data(),
            (1, d),
            &mut out,
            0.0,
        );
        let b = self.value(bias).data();
        for row in out.chunks_mut(k) {
            row.iter_mut().zip(b).for_each(|(o, bv)| *o += bv);
        }
        let value = Tensor::from_vec(&[n, k], out)?;
        self.push(OP, value, Op::Linear { input, weight, bias }, &[input, weight, bias])
    }

    /// Row-wise softmax of `[N,K]` logits.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let value = softmax_rows(self.value(input))?;
        self.push("softmax", value, Op::Softmax { input }, &[input])
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                "all",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(ta.shape(), data)?;
        self.push("add", value, Op::Add { a, b }, &[a, b])
    }

    /// Shortcut connection: `a + b` for identical shapes.
    pub fn residual_add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add(a, b)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v * factor);
        self.push("scale", value, Op::Scale { input, factor }, &[input])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(input).sum());
        self.push("sum", value, Op::Sum { input }, &[input])
    }

    /// `Σ input ⊙ weights` for a constant weight tensor.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(Error::shape(
                "weighted_sum",
                "all",
                format!("{:?} vs {:?}", x.shape(), weights.shape()),
            ));
        }
        let s = x.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        self.push(
            "weighted_sum",
            Tensor::scalar(s),
            Op::WeightedSum { input, weights },
            &[input],
        )
    }

    /// Mean over the batch of `−Σᵢ pᵢ log softmax(logits)ᵢ`.
    ///
    /// `targets` rows must be distributions (sum to 1 within 1e-9).
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let x = self.value(logits);
        let [n, _] = dims2(OP, "logits", x)?;
        if targets.shape() != x.shape() {
            return Err(Error::shape(
                OP,
                "targets",
                format!("expected {:?}, got {:?}", x.shape(), targets.shape()),
            ));
        }
        for i in 0..n {
            let row = targets.row(i);
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::invalid(
                    OP,
                    format!("target row {i} is not a probability distribution (sum {total})"),
                ));
            }
        }
        let probs = softmax_rows(x)?;
        let mut loss = 0.0;
        for i in 0..n {
            let row = x.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss -= targets
                .row(i)
                .iter()
                .zip(row)
                .filter(|(p, _)| **p != 0.0)
                .map(|(p, v)| p * (v - lse))
                .sum::<f64>();
        }
        let value = Tensor::scalar(loss / n as f64);
        self.push(OP, value, Op::SoftmaxCrossEntropy { logits, targets, probs }, &[logits])
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Afterwards every node that requires a gradient and feeds `loss` holds
    /// `∂loss/∂node`, summed over all paths. Calling it again replaces the
    /// previous gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            self.backward_node(node, &upstream, &mut grads)?;
            grads[id] = Some(upstream);
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut accumulate = |v: Var, contrib: Vec<f64>| -> Result<()> {
            if !needs(v) {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(g) => g.data_mut().iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(Tensor::from_vec(self.value(v).shape(), contrib)?),
            }
            Ok(())
        };
        let dy_data = dy.data();

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let need = (needs(*input), needs(*weight), bias.is_some_and(needs));
                let g = kernels::conv2d_backward(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    dy_data,
                    geom,
                    need,
                    self.parallel,
                );
                if let Some(dx) = g.input {
                    accumulate(*input, dx)?;
                }
                if let Some(dw) = g.weight {
                    accumulate(*weight, dw)?;
                }
                if let (Some(b), Some(db)) = (bias, g.bias) {
                    accumulate(*b, db)?;
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let [n, c, h, w] = dims4("batch_norm2d", "input", self.value(*input))?;
                let plane = h * w;
                let count = (n * plane) as f64;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ch in 0..c {
                    for s in 0..n {
                        let off = (s * c + ch) * plane;
                        for i in off..off + plane {
                            dbeta[ch] += dy_data[i];
                            dgamma[ch] += dy_data[i] * xhat[i];
                        }
                    }
                }
                if needs(*input) {
                    let mut dx = vec![0.0; dy_data.len()];
                    for ch in 0..c {
                        let scale = gam[ch] * inv_std[ch];
                        // Σ dxhat = γ·Σdy and Σ dxhat·xhat = γ·Σ dy·xhat
                        let (mean_dy, mean_dy_xhat) = (dbeta[ch] / count, dgamma[ch] / count);
                        for s in 0..n {
                            let off = (s * c + ch) * plane;
                            for i in off..off + plane {
                                dx[i] = if *train {
                                    scale * (dy_data[i] - mean_dy - xhat[i] * mean_dy_xhat)
                                } else {
                                    scale * dy_data[i]
                                };
                            }
                        }
                    }
                    accumulate(*input, dx)?;
                }
                accumulate(*gamma, dgamma)?;
                accumulate(*beta, dbeta)?;
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(dy_data)
                    .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                    .collect();
                accumulate(*input, dx)?;
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![0.0; self.value(*input).numel()];
                for (&idx, &g) in argmax.iter().zip(dy_data) {
                    dx[idx] += g;
                }
                accumulate(*input, dx)?;
            }
            Op::AvgPool { input, geom } => {
                accumulate(*input, kernels::avg_pool_backward(dy_data, geom))?;
            }
            Op::GlobalAvgPool { input } => {
                let x = self.value(*input);
                let plane = x.shape()[2] * x.shape()[3];
                let mut dx = Vec::with_capacity(x.numel());
                for &g in dy_data {
                    dx.extend(std::iter::repeat_n(g / plane as f64, plane));
                }
                accumulate(*input, dx)?;
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input);
                let (n, d) = (x.shape()[0], x.shape()[1]);
                let k = self.value(*weight).shape()[0];
                if needs(*input) {
                    let mut dx = vec![0.0; n * d];
                    kernels::gemm(
                        n,
                        k,
                        d,
                        dy_data,
                        (k, 1),
                        self.value(*weight).data(),
                        (d, 1),
                        &mut dx,
                        0.0,
                    );
                    accumulate(*input, dx)?;
                }
                if needs(*weight) {
                    let mut dw = vec![0.0; k * d];
                    kernels::gemm(k, n, d, dy_data, (1, k), x.data(), (d, 1), &mut dw, 0.0);
                    accumulate(*weight, dw)?;
                }
                if needs(*bias) {
                    let mut db = vec![0.0; k];
                    for row in dy_data.chunks(k) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    accumulate(*bias, db)?;
                }
            }
            Op::Softmax { input } => {
                let y = &node.value;
                let k = y.shape()[1];
                let mut dx = vec![0.0; y.numel()];
                for ((yr, gr), dr) in y.data().chunks(k).zip(dy_data.chunks(k)).zip(dx.chunks_mut(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                accumulate(*input, dx)?;
            }
            Op::Add { a, b } => {
                accumulate(*a, dy_data.to_vec())?;
                accumulate(*b, dy_data.to_vec())?;
            }
            Op::Scale { input, factor } => {
                accumulate(*input, dy_data.iter().map(|g| g * factor).collect())?;
            }
            Op::Sum { input } => {
                let n = self.value(*input).numel();
                accumulate(*input, vec![dy_data[0]; n])?;
            }
            Op::WeightedSum { input, weights } => {
                let g = dy_data[0];
                accumulate(*input, weights.data().iter().map(|w| w * g).collect())?;
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let n = probs.shape()[0] as f64;
                let g = dy_data[0];
                let dx = probs
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(q, p)| g * (q - p) / n)
                    .collect();
                accumulate(*logits, dx)?;
            }
        }
        Ok(())
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let [_, k] = dims2("softmax", "logits", logits)?;
    if !logits.all_finite() {
        return Err(Error::invalid("softmax", "logits contain non-finite values"));
    }
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::from_vec(logits.shape(), out)
}

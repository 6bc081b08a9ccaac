use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::BranchedNetConfig;
use super::plan::{block_plan, stem_spec, ConvBnSpec};
use crate::error::{Error, Result};
use crate::tensor_core::{BatchNormOptions, Mode, PoolKind, RunningStats, Tape, Tensor, Var};

#[derive(Debug, Clone)]
struct ConvBn {
    weight: usize,
    gamma: usize,
    beta: usize,
    stats: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
struct Block {
    layers: Vec<ConvBn>,
    shortcut: Option<ConvBn>,
}

#[derive(Debug, Clone)]
struct Stem {
    unit: ConvBn,
    max_pool: bool,
}

#[derive(Debug, Clone)]
struct Head {
    weight: usize,
    bias: usize,
}

/// A contiguous run of the network: optional stem, blocks, optional head.
#[derive(Debug, Clone, Default)]
struct Section {
    stem: Option<Stem>,
    blocks: Vec<Block>,
    head: Option<Head>,
}

#[derive(Debug, Clone, PartialEq)]
struct ParamEntry {
    name: String,
    value: Tensor,
    decay: bool,
}

/// Shared trunk plus independently parameterized branches.
///
/// Parameters live in a registry keyed by stable names such as
/// `trunk.block3.conv1.weight` or `branch2.head.bias`. Batch-norm running
/// statistics are kept alongside under `….running_mean` / `….running_var`.
#[derive(Debug, Clone)]
pub struct BranchedNetwork {
    config: BranchedNetConfig,
    params: Vec<ParamEntry>,
    stats: Vec<(String, RunningStats)>,
    index: HashMap<String, usize>,
    trunk: Section,
    branches: Vec<Section>,
    bn: BatchNormOptions,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct BranchOutputs {
    /// One `[N, num_classes]` logit tensor per branch.
    pub logits: Vec<Var>,
    /// Tape variable for each registry parameter, in registry order.
    pub params: Vec<Var>,
    /// Residual blocks evaluated in the trunk.
    pub trunk_block_evals: usize,
    /// Residual blocks evaluated in each branch.
    pub branch_block_evals: Vec<usize>,
}

struct Builder<'a> {
    net: &'a mut BranchedNetwork,
    rng: ChaCha8Rng,
    prefix: String,
}

impl Builder<'_> {
    fn add_param(&mut self, name: &str, value: Tensor, decay: bool) -> usize {
        let full = format!("{}.{name}", self.prefix);
        let id = self.net.params.len();
        self.net.index.insert(full.clone(), id);
        self.net.params.push(ParamEntry {
            name: full,
            value,
            decay,
        });
        id
    }

    fn conv_bn(&mut self, name: &str, spec: &ConvBnSpec) -> ConvBn {
        let fan_in = (spec.cin * spec.kernel * spec.kernel) as f64;
        let w = Tensor::randn(
            &[spec.cout, spec.cin, spec.kernel, spec.kernel],
            (2.0 / fan_in).sqrt(),
            &mut self.rng,
        );
        let weight = self.add_param(&format!("{name}.weight"), w, true);
        let bn = name.replace("conv", "bn");
        let gamma = self.add_param(&format!("{bn}.gamma"), Tensor::ones(&[spec.cout]), false);
        let beta = self.add_param(&format!("{bn}.beta"), Tensor::zeros(&[spec.cout]), false);
        let stats = self.net.stats.len();
        self.net
            .stats
            .push((format!("{}.{bn}", self.prefix), RunningStats::new(spec.cout)));
        ConvBn {
            weight,
            gamma,
            beta,
            stats,
            stride: spec.stride,
            pad: spec.kernel / 2,
        }
    }

    fn stem(&mut self, cfg: &BranchedNetConfig) -> Stem {
        Stem {
            unit: self.conv_bn("stem.conv", &stem_spec(cfg)),
            max_pool: cfg.stem.max_pool,
        }
    }

    fn block(&mut self, spec: &super::plan::BlockSpec) -> Block {
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| self.conv_bn(&format!("block{}.conv{}", spec.index, i + 1), l))
            .collect();
        let shortcut = spec
            .shortcut
            .as_ref()
            .map(|s| self.conv_bn(&format!("block{}.shortcut.conv", spec.index), s));
        Block { layers, shortcut }
    }

    fn head(&mut self, cfg: &BranchedNetConfig) -> Head {
        let d = cfg.feature_width();
        let k = cfg.num_classes;
        let w = Tensor::randn(&[k, d], (1.0 / d as f64).sqrt(), &mut self.rng);
        Head {
            weight: self.add_param("head.weight", w, true),
            bias: self.add_param("head.bias", Tensor::zeros(&[k]), false),
        }
    }
}

/// Convenience wrapper for [`BranchedNetwork::new`].
pub fn build_branched_net(config: &BranchedNetConfig, seed: u64) -> Result<BranchedNetwork> {
    BranchedNetwork::new(config, seed)
}

impl BranchedNetwork {
    /// Builds the network with He-initialized convolutions.
    ///
    /// The trunk draws from RNG stream 0 of `seed`; branch `k` (1-based) draws
    /// from stream `k`. When the branch point is 0 the stem is part of every
    /// branch, giving fully independent networks.
    pub fn new(config: &BranchedNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut net = Self {
            config: config.clone(),
            params: Vec::new(),
            stats: Vec::new(),
            index: HashMap::new(),
            trunk: Section::default(),
            branches: Vec::new(),
            bn: BatchNormOptions::default(),
        };
        let plan = block_plan(config);
        let split = config.branch_after_block;

        let stream = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };

        let mut trunk = Section::default();
        {
            let mut b = Builder {
                net: &mut net,
                rng: stream(0),
                prefix: "trunk".into(),
            };
            if split > 0 {
                trunk.stem = Some(b.stem(config));
            }
            trunk.blocks = plan[..split].iter().map(|s| b.block(s)).collect();
        }

        let mut branches = Vec::with_capacity(config.num_branches);
        for k in 1..=config.num_branches {
            let mut b = Builder {
                net: &mut net,
                rng: stream(k as u64),
                prefix: format!("branch{k}"),
            };
            let mut sec = Section::default();
            if split == 0 {
                sec.stem = Some(b.stem(config));
            }
            sec.blocks = plan[split..].iter().map(|s| b.block(s)).collect();
            sec.head = Some(b.head(config));
            branches.push(sec);
        }
        net.trunk = trunk;
        net.branches = branches;
        Ok(net)
    }

    pub fn config(&self) -> &BranchedNetConfig {
        &self.config
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn param_at(&self, i: usize) -> &Tensor {
        &self.params[i].value
    }

    pub fn param_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i].value
    }

    pub fn param_name(&self, i: usize) -> &str {
        &self.params[i].name
    }

    /// Whether weight decay applies (conv and linear weights only).
    pub fn decays(&self, i: usize) -> bool {
        self.params[i].decay
    }

    /// Replaces a parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| Error::invalid("set_param", format!("no parameter named `{name}`")))?;
        let slot = &mut self.params[i].value;
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "set_param",
                name.to_string(),
                format!("expected {:?}, got {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn named_running_stats(&self) -> impl Iterator<Item = (&str, &RunningStats)> {
        self.stats.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn running_stats_mut(&mut self, name: &str) -> Option<&mut RunningStats> {
        self.stats.iter_mut().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    /// Number of scalar parameters (running statistics excluded).
    pub fn scalar_param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Scalar parameter count of registry entries whose name starts with `prefix`.
    pub fn scalar_param_count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    /// Forward pass in train or eval mode. Train mode updates running statistics.
    pub fn forward_all_branches(&mut self, tape: &mut Tape, batch: Var, mode: Mode) -> Result<BranchOutputs> {
        let mut stats = std::mem::take(&mut self.stats);
        let out = self.run(tape, batch, mode, &mut stats);
        self.stats = stats;
        out
    }

    /// Eval-mode forward that leaves the network untouched.
    pub fn forward_eval(&self, tape: &mut Tape, batch: Var) -> Result<BranchOutputs> {
        let mut stats = self.stats.clone();
        self.run(tape, batch, Mode::Eval, &mut stats)
    }

    fn run(
        &self,
        tape: &mut Tape,
        batch: Var,
        mode: Mode,
        stats: &mut [(String, RunningStats)],
    ) -> Result<BranchOutputs> {
        let c = &self.config;
        let shape = tape.value(batch).shape();
        let expected = [c.input_channels, c.input_height, c.input_width];
        if shape.len() != 4 || shape[1..] != expected {
            return Err(Error::shape(
                "forward",
                "input",
                format!(
                    "expected [N, {}, {}, {}], got {shape:?}",
                    expected[0], expected[1], expected[2]
                ),
            ));
        }
        let params: Vec<Var> = self.params.iter().map(|p| tape.param(p.value.clone())).collect();
        let mut ctx = Ctx {
            tape,
            params: &params,
            stats,
            mode,
            bn: self.bn,
        };

        let trunk_out = ctx.section(&self.trunk, batch)?;
        let mut logits = Vec::with_capacity(self.branches.len());
        let mut branch_block_evals = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            logits.push(ctx.section(branch, trunk_out)?);
            branch_block_evals.push(branch.blocks.len());
        }
        Ok(BranchOutputs {
            logits,
            params,
            trunk_block_evals: self.trunk.blocks.len(),
            branch_block_evals,
        })
    }
}

struct Ctx<'a> {
    tape: &'a mut Tape,
    params: &'a [Var],
    stats: &'a mut [(String, RunningStats)],
    mode: Mode,
    bn: BatchNormOptions,
}

impl Ctx<'_> {
    fn conv_bn(&mut self, x: Var, u: &ConvBn) -> Result<Var> {
        let y = self.tape.conv2d(x, self.params[u.weight], None, u.stride, u.pad)?;
        self.tape.batch_norm2d(
            y,
            self.params[u.gamma],
            self.params[u.beta],
            &mut self.stats[u.stats].1,
            self.mode,
            self.bn,
        )
    }

    fn block(&mut self, x: Var, b: &Block) -> Result<Var> {
        let mut h = x;
        let last = b.layers.len() - 1;
        for (i, layer) in b.layers.iter().enumerate() {
            h = self.conv_bn(h, layer)?;
            if i < last {
                h = self.tape.relu(h)?;
            }
        }
        let skip = match &b.shortcut {
            Some(proj) => self.conv_bn(x, proj)?,
            None => x,
        };
        let sum = self.tape.residual_add(h, skip)?;
        self.tape.relu(sum)
    }

    fn section(&mut self, sec: &Section, x: Var) -> Result<Var> {
        let mut h = x;
        if let Some(stem) = &sec.stem {
            h = self.conv_bn(h, &stem.unit)?;
            h = self.tape.relu(h)?;
            if stem.max_pool {
                h = self.tape.pool2d(h, PoolKind::Max, 3, 2)?;
            }
        }
        for b in &sec.blocks {
            h = self.block(h, b)?;
        }
        if let Some(head) = &sec.head {
            h = self.tape.global_avg_pool(h)?;
            h = self.tape.linear(h, self.params[head.weight], self.params[head.bias])?;
        }
        Ok(h)
    }
}

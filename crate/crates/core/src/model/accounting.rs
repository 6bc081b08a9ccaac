use serde::Serialize;

use super::config::BranchedNetConfig;
use super::network::BranchedNetwork;
use super::plan::{block_plan, head_params, stem_spec};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockTopology {
    pub shared_blocks: usize,
    pub per_branch_blocks: usize,
    /// Residual blocks that actually exist: `B + K_b·(total − B)`.
    pub total_blocks_materialized: usize,
    /// Convolutions on any input-to-output path, stem included, projection
    /// shortcuts excluded.
    pub conv_layers: usize,
    /// `conv_layers` plus the classifier.
    pub weighted_layers: usize,
}

pub fn block_topology(config: &BranchedNetConfig) -> Result<BlockTopology> {
    config.validate()?;
    let total = config.total_blocks();
    let shared = config.branch_after_block;
    let per_branch = total - shared;
    let conv_layers = 1 + total * config.convs_per_block();
    Ok(BlockTopology {
        shared_blocks: shared,
        per_branch_blocks: per_branch,
        total_blocks_materialized: shared + config.num_branches * per_branch,
        conv_layers,
        weighted_layers: conv_layers + 1,
    })
}

/// Scalar parameter counts by role. Batch-norm running statistics are not
/// parameters and are excluded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamReport {
    /// Shared stem; 0 when the branch point is 0 and each branch has its own.
    pub stem_params: usize,
    pub shared_params: usize,
    /// Per-branch residual blocks (plus the branch stem when nothing is shared).
    pub per_branch_params: Vec<usize>,
    pub head_params: Vec<usize>,
    pub total_params: usize,
    /// `K_b` times one complete unbranched network.
    pub equivalent_independent_ensemble_params: usize,
    /// `total / equivalent`.
    pub sharing_ratio: f64,
}

/// Counts parameters from the layer plan alone, without allocating weights.
pub fn count_parameters(config: &BranchedNetConfig) -> Result<ParamReport> {
    config.validate()?;
    let plan = block_plan(config);
    let split = config.branch_after_block;
    let stem = stem_spec(config).params();
    let shared_blocks: usize = plan[..split].iter().map(|b| b.params()).sum();
    let branch_blocks: usize = plan[split..].iter().map(|b| b.params()).sum();
    let head = head_params(config);

    let (stem_params, per_branch) = if split == 0 {
        (0, stem + branch_blocks)
    } else {
        (stem, branch_blocks)
    };
    let k = config.num_branches;
    let single_net = stem + shared_blocks + branch_blocks + head;
    Ok(report(
        stem_params,
        shared_blocks,
        vec![per_branch; k],
        vec![head; k],
        k * single_net,
    ))
}

fn report(
    stem_params: usize,
    shared_params: usize,
    per_branch_params: Vec<usize>,
    head_params: Vec<usize>,
    equivalent: usize,
) -> ParamReport {
    let total_params =
        stem_params + shared_params + per_branch_params.iter().sum::<usize>() + head_params.iter().sum::<usize>();
    ParamReport {
        stem_params,
        shared_params,
        per_branch_params,
        head_params,
        total_params,
        equivalent_independent_ensemble_params: equivalent,
        sharing_ratio: total_params as f64 / equivalent as f64,
    }
}

impl BranchedNetwork {
    /// Counts parameters by walking the instantiated registry.
    pub fn param_report(&self) -> ParamReport {
        let k = self.num_branches();
        let stem = self.scalar_param_count_with_prefix("trunk.stem.");
        let trunk = self.scalar_param_count_with_prefix("trunk.");
        let heads: Vec<usize> = (1..=k)
            .map(|b| self.scalar_param_count_with_prefix(&format!("branch{b}.head.")))
            .collect();
        let per_branch: Vec<usize> = (1..=k)
            .map(|b| self.scalar_param_count_with_prefix(&format!("branch{b}.")) - heads[b - 1])
            .collect();
        // one full net = shared part + the first branch's private part
        let single = trunk + per_branch[0] + heads[0];
        report(stem, trunk - stem, per_branch, heads, k * single)
    }
}

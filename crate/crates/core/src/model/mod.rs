//! Branched residual network: topology, construction, forward pass and
//! parameter accounting.

mod accounting;
mod config;
mod network;
mod plan;

pub use accounting::{block_topology, count_parameters, BlockTopology, ParamReport};
pub use config::{BranchedNetConfig, StemConfig, BOTTLENECK_EXPANSION};
pub use network::{build_branched_net, BranchOutputs, BranchedNetwork};

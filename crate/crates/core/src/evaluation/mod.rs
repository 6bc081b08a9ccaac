//! Top-k error, probability-averaging ensembles and the branch/ensemble report.

mod metrics;
mod report;

pub use metrics::{ensemble_probs, relative_improvement, top_k_error};
pub use report::{config_fingerprint, evaluate, evaluate_detailed, EvalOutput, EvalReport};

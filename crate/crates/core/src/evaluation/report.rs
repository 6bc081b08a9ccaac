use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{ensemble_probs, relative_improvement, top_k_error};
use crate::augmentation::{eval_transform, AugmentConfig};
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::model::{BranchedNetConfig, BranchedNetwork};
use crate::tensor_core::{softmax_rows, Tape, Tensor};

/// Per-branch and ensemble error rates in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub branch_top1: Vec<f64>,
    pub branch_top5: Vec<f64>,
    pub ensemble_top1: f64,
    pub ensemble_top5: f64,
    /// On top-1; `None` when every branch is perfect.
    pub relative_improvement: Option<f64>,
    /// k of the "top-5" columns, `min(5, K)`.
    pub top_k: usize,
    pub samples: usize,
    pub config_fingerprint: String,
}

/// Report plus the probability matrices it was computed from.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub branch_probs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

/// Short digest of a model configuration.
pub fn config_fingerprint(config: &BranchedNetConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl EvalReport {
    pub fn from_probs(branch_probs: &[Tensor], labels: &[usize], fingerprint: &str) -> Result<Self> {
        let ens = ensemble_probs(branch_probs)?;
        let classes = ens.shape()[1];
        let k = classes.min(5);
        let branch_top1 = branch_probs
            .iter()
            .map(|p| top_k_error(p, labels, 1))
            .collect::<Result<Vec<_>>>()?;
        let branch_top5 = branch_probs
            .iter()
            .map(|p| top_k_error(p, labels, k))
            .collect::<Result<Vec<_>>>()?;
        let ensemble_top1 = top_k_error(&ens, labels, 1)?;
        Ok(Self {
            relative_improvement: relative_improvement(&branch_top1, ensemble_top1).ok(),
            ensemble_top5: top_k_error(&ens, labels, k)?,
            ensemble_top1,
            branch_top1,
            branch_top5,
            top_k: k,
            samples: labels.len(),
            config_fingerprint: fingerprint.to_string(),
        })
    }

    pub fn mean_branch_top1(&self) -> f64 {
        self.branch_top1.iter().sum::<f64>() / self.branch_top1.len() as f64
    }

    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let top = format!("top-{} err (%)", self.top_k);
        let _ = writeln!(s, "{:<24}{:>16}{:>16}", "predictor", "top-1 err (%)", top);
        for (i, (t1, t5)) in self.branch_top1.iter().zip(&self.branch_top5).enumerate() {
            let _ = writeln!(s, "{:<24}{:>16.2}{:>16.2}", format!("branch {}", i + 1), t1, t5);
        }
        let _ = writeln!(
            s,
            "{:<24}{:>16.2}{:>16.2}",
            "ensemble", self.ensemble_top1, self.ensemble_top5
        );
        match self.relative_improvement {
            Some(r) => {
                let _ = writeln!(s, "{:<24}{:>16.2}", "relative improvement (%)", r);
            }
            None => {
                let _ = writeln!(s, "{:<24}{:>16}", "relative improvement (%)", "undefined");
            }
        }
        let _ = writeln!(s, "samples {}, config {}", self.samples, self.config_fingerprint);
        s
    }

    /// `predictor,top1_error,topk_error` rows, full precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("predictor,top1_error,topk_error\n");
        for (i, (t1, t5)) in self.branch_top1.iter().zip(&self.branch_top5).enumerate() {
            let _ = writeln!(s, "branch_{},{t1},{t5}", i + 1);
        }
        let _ = writeln!(s, "ensemble,{},{}", self.ensemble_top1, self.ensemble_top5);
        match self.relative_improvement {
            Some(r) => {
                let _ = writeln!(s, "relative_improvement,{r},");
            }
            None => s.push_str("relative_improvement,,\n"),
        }
        s
    }
}

impl EvalOutput {
    /// `sample,label,branch,p_0..p_{K-1}`, one row per sample and branch.
    pub fn probs_csv(&self) -> String {
        let classes = self.branch_probs.first().map_or(0, |p| p.shape()[1]);
        let mut s = String::from("sample,label,branch");
        for c in 0..classes {
            let _ = write!(s, ",p_{c}");
        }
        s.push('\n');
        for (i, y) in self.labels.iter().enumerate() {
            for (b, p) in self.branch_probs.iter().enumerate() {
                let _ = write!(s, "{i},{y},{}", b + 1);
                for v in p.row(i) {
                    let _ = write!(s, ",{v}");
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Eval-mode pass over `data`: running statistics, center crop and normalization only.
pub fn evaluate(
    net: &BranchedNetwork,
    data: &Dataset,
    augment: &AugmentConfig,
    batch_size: usize,
) -> Result<EvalReport> {
    Ok(evaluate_detailed(net, data, augment, batch_size, false)?.report)
}

pub fn evaluate_detailed(
    net: &BranchedNetwork,
    data: &Dataset,
    augment: &AugmentConfig,
    batch_size: usize,
    parallel_kernels: bool,
) -> Result<EvalOutput> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "dataset is empty"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("evaluate", "batch_size must be ≥ 1"));
    }
    let classes = net.config().num_classes;
    let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(data.len() * classes); net.num_branches()];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let samples = chunk
            .iter()
            .map(|&i| eval_transform(&data.images[i], augment))
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::with_parallel(parallel_kernels);
        let x = tape.constant(Tensor::stack(&samples)?);
        let out = net.forward_eval(&mut tape, x)?;
        for (acc, &l) in rows.iter_mut().zip(&out.logits) {
            acc.extend_from_slice(softmax_rows(tape.value(l))?.data());
        }
    }
    let branch_probs = rows
        .into_iter()
        .map(|r| Tensor::from_vec(&[data.len(), classes], r))
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::from_probs(&branch_probs, &data.labels, &config_fingerprint(net.config()))?;
    Ok(EvalOutput {
        report,
        branch_probs,
        labels: data.labels.clone(),
    })
}

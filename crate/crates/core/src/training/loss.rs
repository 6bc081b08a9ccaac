use crate::error::{Error, Result};
use crate::tensor_core::{Tape, Tensor, Var};

/// `1 − ε + ε/K` on the true class, `ε/K` elsewhere.
pub fn smooth_labels(label: usize, num_classes: usize, epsilon: f64) -> Result<Vec<f64>> {
    if label >= num_classes {
        return Err(Error::invalid(
            "smooth_labels",
            format!("label {label} out of range for {num_classes} classes"),
        ));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(
            "smooth_labels",
            format!("epsilon {epsilon} not in [0, 1]"),
        ));
    }
    let off = epsilon / num_classes as f64;
    let mut p = vec![off; num_classes];
    p[label] = 1.0 - epsilon + off;
    Ok(p)
}

/// `[N, K]` matrix of smoothed targets.
pub fn smoothed_targets(labels: &[usize], num_classes: usize, epsilon: f64) -> Result<Tensor> {
    let mut data = Vec::with_capacity(labels.len() * num_classes);
    for &y in labels {
        data.extend(smooth_labels(y, num_classes, epsilon)?);
    }
    Tensor::from_vec(&[labels.len(), num_classes], data)
}

/// Batch-mean cross-entropy against (possibly smoothed) target rows.
pub fn smoothed_cross_entropy(tape: &mut Tape, logits: Var, targets: &Tensor) -> Result<Var> {
    tape.softmax_cross_entropy(logits, targets.clone())
}

/// Combined objective and the per-branch terms it averages.
#[derive(Debug, Clone)]
pub struct BranchLoss {
    pub total: Var,
    pub per_branch: Vec<Var>,
}

/// Arithmetic mean of the per-branch cross-entropies.
pub fn combined_branch_loss(tape: &mut Tape, branch_logits: &[Var], targets: &Tensor) -> Result<BranchLoss> {
    let Some((&first, rest)) = branch_logits.split_first() else {
        return Err(Error::invalid("combined_branch_loss", "no branches"));
    };
    let shape = tape.value(first).shape().to_vec();
    let mut per_branch = Vec::with_capacity(branch_logits.len());
    for &l in branch_logits {
        if tape.value(l).shape() != shape {
            return Err(Error::shape(
                "combined_branch_loss",
                "logits",
                format!("branches disagree: {shape:?} vs {:?}", tape.value(l).shape()),
            ));
        }
        per_branch.push(smoothed_cross_entropy(tape, l, targets)?);
    }
    let total = if rest.is_empty() {
        per_branch[0]
    } else {
        let mut acc = per_branch[0];
        for &t in &per_branch[1..] {
            acc = tape.add(acc, t)?;
        }
        tape.scale(acc, 1.0 / branch_logits.len() as f64)?
    };
    Ok(BranchLoss { total, per_branch })
}

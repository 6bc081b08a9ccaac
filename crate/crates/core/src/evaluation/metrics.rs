use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

/// Percentage of rows whose label is not among the `k` most probable classes.
/// Equal probabilities rank the lower class index first.
pub fn top_k_error(probs: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    const OP: &str = "top_k_error";
    let [n, classes] = match *probs.shape() {
        [n, c] => [n, c],
        ref s => return Err(Error::shape(OP, "probs", format!("expected [N, K], got {s:?}"))),
    };
    if k == 0 || k > classes {
        return Err(Error::invalid(OP, format!("k = {k} outside 1..={classes}")));
    }
    if labels.len() != n {
        return Err(Error::shape(
            OP,
            "labels",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    let mut misses = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::invalid(OP, format!("label {y} at row {i} out of range")));
        }
        let row = probs.row(i);
        let py = row[y];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &p)| p > py || (p == py && j < y))
            .count();
        if rank >= k {
            misses += 1;
        }
    }
    Ok(100.0 * misses as f64 / n as f64)
}

/// Elementwise mean of the branch probability matrices.
pub fn ensemble_probs(branch_probs: &[Tensor]) -> Result<Tensor> {
    let first = branch_probs
        .first()
        .ok_or_else(|| Error::invalid("ensemble_probs", "no branches"))?;
    let mut acc = vec![0.0; first.numel()];
    for (b, p) in branch_probs.iter().enumerate() {
        if p.shape() != first.shape() {
            return Err(Error::shape(
                "ensemble_probs",
                format!("branch {}", b + 1),
                format!("expected {:?}, got {:?}", first.shape(), p.shape()),
            ));
        }
        acc.iter_mut().zip(p.data()).for_each(|(a, v)| *a += v);
    }
    let n = branch_probs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Tensor::from_vec(first.shape(), acc)
}

/// `100 · (mean(branch) − ensemble) / mean(branch)`.
pub fn relative_improvement(branch_errors: &[f64], ensemble_error: f64) -> Result<f64> {
    const OP: &str = "relative_improvement";
    if branch_errors.is_empty() {
        return Err(Error::invalid(OP, "no branch errors"));
    }
    let mean = branch_errors.iter().sum::<f64>() / branch_errors.len() as f64;
    if mean == 0.0 {
        return Err(Error::invalid(OP, "mean branch error is zero; improvement undefined"));
    }
    Ok(100.0 * (mean - ensemble_error) / mean)
}

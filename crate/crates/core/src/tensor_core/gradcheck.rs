use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Smallest magnitude used to normalize the gradient error, so entries whose
/// true gradient is ~0 are judged on absolute error instead.
const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.rel_error >= self.tolerance)
    }
}

/// Compares tape gradients against central differences.
///
/// `op` builds the output from one tape variable per entry of `inputs`.
/// Non-scalar outputs are reduced with a fixed random projection so every
/// output element contributes. The step for element θ is
/// `1e-5 · max(1, |θ|)`.
pub fn finite_diff_check<F>(inputs: &[Tensor], tolerance: f64, seed: u64, op: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = op(&mut tape, &vars)?;
        tape.value(out).clone()
    };
    let projection = Tensor::randn(probe.shape(), 1.0, &mut rng);

    let loss_at = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = op(&mut tape, &vars)?;
        let loss = tape.weighted_sum(out, projection.clone())?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = op(&mut tape, &vars)?;
    let loss = tape.weighted_sum(out, projection.clone())?;
    tape.backward(loss)?;

    let mut entries = Vec::new();
    let mut values = inputs.to_vec();
    for (input, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[input].shape()));
        for index in 0..inputs[input].numel() {
            let theta = inputs[input].data()[index];
            let h = 1e-5 * theta.abs().max(1.0);
            values[input].data_mut()[index] = theta + h;
            let plus = loss_at(&values)?;
            values[input].data_mut()[index] = theta - h;
            let minus = loss_at(&values)?;
            values[input].data_mut()[index] = theta;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[index];
            let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            entries.push(GradCheckEntry {
                input,
                index,
                analytic: a,
                numeric,
                rel_error,
            });
        }
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_rel_error,
        tolerance,
    })
}

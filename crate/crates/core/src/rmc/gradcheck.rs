use crate::error::Result;
use crate::identification::IdentificationSequence;

use super::RmcModel;

/// Denominator floor for relative errors, so that entries whose true
/// gradient is numerically zero are compared on an absolute scale.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Worst-case disagreement for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub max_abs_error: f64,
    /// `max |a - n| / max(|a|, |n|, GRADCHECK_FLOOR)` over the tensor.
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradientReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.max_rel_error <= self.tolerance)
    }
}

/// Compares analytic gradients against central differences
/// `(L(θ+h) - L(θ-h)) / 2h` for every entry of every parameter tensor.
pub fn check_gradients(
    model: &RmcModel,
    seq: &IdentificationSequence,
    label: usize,
    step: f64,
    tol: f64,
) -> Result<GradientReport> {
    let batch = [(seq.clone(), label)];
    let (_, analytic) = model.loss_and_gradients(&batch)?;

    let mut probe = model.clone();
    let mut tensors = Vec::with_capacity(analytic.len());
    for (t, (name, grad)) in analytic.iter().enumerate() {
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        for idx in 0..grad.len() {
            let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
            let original = probe.params.tensors()[t][(r, c)];
            probe.params.tensors_mut()[t][(r, c)] = original + step;
            let up = probe.example_loss(&seq.elements, label)?;
            probe.params.tensors_mut()[t][(r, c)] = original - step;
            let down = probe.example_loss(&seq.elements, label)?;
            probe.params.tensors_mut()[t][(r, c)] = original;

            let numeric = (up - down) / (2.0 * step);
            let a = grad[(r, c)];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        tensors.push(TensorCheck {
            name: name.to_string(),
            entries: grad.len(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
        });
    }
    Ok(GradientReport {
        tensors,
        tolerance: tol,
    })
}

//! Central finite-difference checks for the manual backward passes.

use super::{DcfModel, NnError};
use crate::corpus::ItemFeatures;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub n_params: usize,
    pub max_relative_error: f64,
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps parameters with a
/// vanishing gradient from reporting huge ratios of rounding noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `backward_pair` against `(h(θ + ε) - h(θ - ε)) / 2ε` for every
/// parameter. Cost is two forward passes per parameter.
pub fn dcf_gradient_check(
    model: &DcfModel,
    s: &ItemFeatures,
    r: &ItemFeatures,
    step: f64,
) -> Result<GradCheck, NnError> {
    let cache = model.forward_pair(s, r)?;
    let analytic = model.backward_pair(s, r, &cache, 1.0).flatten(model);

    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.2.len()).collect();
    for (t, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.tensors_mut()[t][i];
            probe.tensors_mut()[t][i] = orig + step;
            let up = probe.predict_pair(s, r)?;
            probe.tensors_mut()[t][i] = orig - step;
            let down = probe.predict_pair(s, r)?;
            probe.tensors_mut()[t][i] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
    }
    let max_relative_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n, 1e-6))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        n_params: analytic.len(),
        max_relative_error,
    })
}

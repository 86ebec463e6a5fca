//! Central-difference gradients, the reference the analytic backward pass is
//! checked against.

use std::collections::BTreeMap;

use crate::network::{Gradients, ModelParams};

/// `(L(w + ε) − L(w − ε)) / 2ε` for every parameter entry.
pub fn finite_difference_grad<F>(mut loss_fn: F, params: &ModelParams, epsilon: f64) -> Gradients
where
    F: FnMut(&ModelParams) -> f64,
{
    let mut work = params.clone();
    let mut grads = params.zeros_like();
    let lens: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
    for (t, &len) in lens.iter().enumerate() {
        for i in 0..len {
            let orig = work.tensors_mut()[t].data[i];
            work.tensors_mut()[t].data[i] = orig + epsilon;
            let plus = loss_fn(&work);
            work.tensors_mut()[t].data[i] = orig - epsilon;
            let minus = loss_fn(&work);
            work.tensors_mut()[t].data[i] = orig;
            grads.tensors_mut()[t].data[i] = (plus - minus) / (2.0 * epsilon);
        }
    }
    grads
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error per tensor family (`w_demo`, `alpha_raw`, ...).
    pub per_family: BTreeMap<String, f64>,
    pub max_relative_error: f64,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

pub fn compare_gradients(analytic: &Gradients, numeric: &Gradients) -> GradCheckReport {
    let mut per_family: BTreeMap<String, f64> = BTreeMap::new();
    let mut entries = 0;
    for (a, n) in analytic.tensors().iter().zip(numeric.tensors()) {
        let worst = per_family.entry(a.name.to_string()).or_insert(0.0);
        for (&x, &y) in a.data.iter().zip(n.data) {
            *worst = worst.max(relative_error(x, y));
            entries += 1;
        }
    }
    let max_relative_error = per_family.values().copied().fold(0.0, f64::max);
    GradCheckReport {
        per_family,
        max_relative_error,
        entries_checked: entries,
    }
}

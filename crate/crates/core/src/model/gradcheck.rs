//! Finite-difference check of the hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::transformer::Model;
use crate::error::{Error, Result};
use crate::layout::InputLayout;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub samples: usize,
    /// Tensor and element index of the worst entry.
    pub worst: (String, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares analytic gradients of the mean masked loss over `batch` with
/// central differences on `samples` parameter entries.
///
/// Entries are drawn by first picking a tensor uniformly, so small tensors
/// (biases, gains) are checked as often as large ones.
pub fn grad_check(
    model: &Model,
    batch: &[&InputLayout],
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::Model(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let index = model.params().index().clone();
    let total_cells = model.evaluate(batch)?.cells;
    if total_cells == 0 {
        return Err(Error::Model("gradient check over an empty mask".into()));
    }
    let scale = 1.0 / total_cells as f64;
    let mut grads = vec![0.0; index.total];
    let trainable = vec![true; index.tensors.len()];
    model.loss_and_grad(batch, &trainable, scale, &mut grads)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        samples,
        worst: (String::new(), 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for _ in 0..samples {
        let t = &index.tensors[rng.random_range(0..index.tensors.len())];
        let i = rng.random_range(0..t.len());
        let at = t.offset + i;
        let orig = probe.params().values()[at];
        probe.params_mut().values_mut()[at] = orig + epsilon;
        let up = probe.evaluate(batch)?.mean();
        probe.params_mut().values_mut()[at] = orig - epsilon;
        let down = probe.evaluate(batch)?.mean();
        probe.params_mut().values_mut()[at] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = grads[at];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error || report.worst.0.is_empty() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = (t.name.clone(), i);
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

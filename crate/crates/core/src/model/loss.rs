use super::kernels::softmax_in_place;
use super::transformer::HeadLogits;
use crate::error::{Error, Result};
use crate::grid::TokenGrid;
use crate::vocab::MODEL_LAYERS;

/// Mean negative log-likelihood of `targets` over the masked cells.
///
/// `mask` is layer-major with the shape of `targets`; logits row `s` scores
/// target column `s`. Each head contributes an independent term per cell.
pub fn loss(logits: &HeadLogits, targets: &TokenGrid, mask: &[bool]) -> Result<f64> {
    let steps = targets.n_steps();
    if targets.n_layers() != MODEL_LAYERS || logits.steps != steps || mask.len() != MODEL_LAYERS * steps {
        return Err(Error::Model(format!(
            "shape mismatch: logits {} steps, targets {}x{}, mask {}",
            logits.steps,
            targets.n_layers(),
            steps,
            mask.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut buf = Vec::with_capacity(logits.vocab);
    for l in 0..MODEL_LAYERS {
        for s in 0..steps {
            if !mask[l * steps + s] {
                continue;
            }
            let row = logits.row(l, s);
            let t = targets.get(l, s) as usize;
            if t >= row.len() {
                return Err(Error::TokenOutOfRange {
                    id: t as u32,
                    total: row.len() as u32,
                });
            }
            buf.clear();
            buf.extend_from_slice(row);
            let lse = softmax_in_place(&mut buf);
            sum += lse - row[t];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Model("loss over an empty mask".into()));
    }
    Ok(sum / count as f64)
}

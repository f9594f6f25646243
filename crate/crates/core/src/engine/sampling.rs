use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, MODEL_LAYERS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    Greedy,
    TopK { k: usize, temperature: f64 },
}

/// Per-layer constraint for one decode step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerRule {
    /// Emit this id without looking at the logits.
    Force(TokenId),
    /// Sample among ids with finite logits, minus `exclude`.
    Sample { exclude: Vec<TokenId> },
}

/// Index of the largest finite logit not in `exclude`; the lowest index wins
/// ties.
fn best(logits: &[f64], exclude: &[TokenId]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in logits.iter().enumerate() {
        if x == f64::NEG_INFINITY || x.is_nan() || exclude.contains(&(i as TokenId)) {
            continue;
        }
        if best.is_none_or(|b| x > logits[b]) {
            best = Some(i);
        }
    }
    best
}

/// Picks one id from a single head's logits.
pub fn sample_logits(logits: &[f64], exclude: &[TokenId], sampling: Sampling, rng: &mut ChaCha8Rng) -> Result<TokenId> {
    match sampling {
        Sampling::Greedy => best(logits, exclude)
            .map(|i| i as TokenId)
            .ok_or_else(|| Error::Decode("every logit is masked".into())),
        Sampling::TopK { k, temperature } => {
            if k == 0 || !(temperature > 0.0) {
                return Err(Error::Decode(format!(
                    "top-k needs k >= 1 and temperature > 0 (got k={k}, t={temperature})"
                )));
            }
            let mut cand: Vec<(usize, f64)> = logits
                .iter()
                .enumerate()
                .filter(|&(i, &x)| x != f64::NEG_INFINITY && !x.is_nan() && !exclude.contains(&(i as TokenId)))
                .map(|(i, &x)| (i, x))
                .collect();
            if cand.is_empty() {
                return Err(Error::Decode("every logit is masked".into()));
            }
            // Stable sort keeps the lower index first among equal logits.
            cand.sort_by(|a, b| b.1.total_cmp(&a.1));
            cand.truncate(k);
            let top = cand[0].1;
            let weights: Vec<f64> = cand.iter().map(|&(_, x)| ((x - top) / temperature).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (&(i, _), w) in cand.iter().zip(&weights) {
                if u < *w {
                    return Ok(i as TokenId);
                }
                u -= w;
            }
            Ok(cand[cand.len() - 1].0 as TokenId)
        }
    }
}

/// One id per head. Forced layers bypass sampling; the others are drawn in
/// layer order from `rng`.
pub fn sample_step(
    logits: [&[f64]; MODEL_LAYERS],
    sampling: Sampling,
    rules: &[LayerRule; MODEL_LAYERS],
    rng: &mut ChaCha8Rng,
) -> Result<[TokenId; MODEL_LAYERS]> {
    let mut out = [0; MODEL_LAYERS];
    for l in 0..MODEL_LAYERS {
        out[l] = match &rules[l] {
            LayerRule::Force(id) => *id,
            LayerRule::Sample { exclude } => sample_logits(logits[l], exclude, sampling, rng)
                .map_err(|e| Error::Decode(format!("layer {l}: {e}")))?,
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn greedy_argmax_and_exclusion() {
        let l = [1.0, 3.0, 2.0];
        assert_eq!(sample_logits(&l, &[], Sampling::Greedy, &mut rng()).unwrap(), 1);
        assert_eq!(sample_logits(&l, &[1], Sampling::Greedy, &mut rng()).unwrap(), 2);
        let masked = [f64::NEG_INFINITY; 3];
        assert!(sample_logits(&masked, &[], Sampling::Greedy, &mut rng()).is_err());
        assert!(sample_logits(&l, &[0, 1, 2], Sampling::Greedy, &mut rng()).is_err());
    }

    #[test]
    fn forcing_bypasses_logits() {
        let row = [0.0, 5.0];
        let rows = [&row[..]; MODEL_LAYERS];
        let mut rules: [LayerRule; MODEL_LAYERS] = std::array::from_fn(|_| LayerRule::Sample { exclude: vec![] });
        rules[3] = LayerRule::Force(0);
        let out = sample_step(rows, Sampling::Greedy, &rules, &mut rng()).unwrap();
        assert_eq!(out, [1, 1, 1, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn top_k_stays_in_top_set() {
        let l = [0.0, 4.0, 3.9, -1.0, f64::NEG_INFINITY];
        let mut r = rng();
        let s = Sampling::TopK { k: 2, temperature: 1.0 };
        let mut seen = [0; 5];
        for _ in 0..400 {
            seen[sample_logits(&l, &[], s, &mut r).unwrap() as usize] += 1;
        }
        assert_eq!(seen[0] + seen[3] + seen[4], 0);
        assert!(seen[1] > 150 && seen[2] > 150);
        assert!(sample_logits(&l, &[], Sampling::TopK { k: 0, temperature: 1.0 }, &mut r).is_err());
    }
}

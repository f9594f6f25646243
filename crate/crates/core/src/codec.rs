//! Deterministic seven-layer residual codec over integer signals.
//!
//! Each sample in `[0, B^7)` is split into its base-`B` digits, most
//! significant digit on layer 1. Truncating to the first `k` layers keeps the
//! sample to within `B^(7-k)`, so the layers refine one another coarse to fine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{IdSpace, TokenGrid};
use crate::vocab::{TokenId, AUDIO_LAYERS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    base: u32,
}

impl CodecConfig {
    pub fn new(base: u32) -> Result<Self> {
        if base < 2 {
            return Err(Error::Config(format!("codec base {base} < 2")));
        }
        if (base as u64).checked_pow(AUDIO_LAYERS as u32).is_none() {
            return Err(Error::Config(format!("codec base {base} overflows u64")));
        }
        Ok(Self { base })
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn n_layers(&self) -> usize {
        AUDIO_LAYERS
    }

    /// Exclusive upper bound on sample values, `B^7`.
    pub fn sample_limit(&self) -> u64 {
        (self.base as u64).pow(AUDIO_LAYERS as u32)
    }

    /// Weight of the digit stored on `layer` (1..=7): `B^(7 - layer)`.
    pub fn layer_weight(&self, layer: usize) -> u64 {
        (self.base as u64).pow((AUDIO_LAYERS - layer) as u32)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signal {
    pub samples: Vec<u64>,
}

impl Signal {
    pub fn new(samples: Vec<u64>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl From<Vec<u64>> for Signal {
    fn from(samples: Vec<u64>) -> Self {
        Self { samples }
    }
}

/// Encodes a signal into a 7 x len grid of codebook-local indices.
pub fn encode_signal(signal: &Signal, cfg: &CodecConfig) -> Result<TokenGrid> {
    let limit = cfg.sample_limit();
    let n = signal.len();
    let mut grid = TokenGrid::filled(AUDIO_LAYERS, n, 0, IdSpace::Local);
    let b = cfg.base as u64;
    for (t, &sample) in signal.samples.iter().enumerate() {
        if sample >= limit {
            return Err(Error::SampleOutOfRange {
                step: t,
                value: sample,
                limit,
            });
        }
        let mut rest = sample;
        for layer in (1..=AUDIO_LAYERS).rev() {
            grid.set(layer - 1, t, (rest % b) as TokenId);
            rest /= b;
        }
    }
    Ok(grid)
}

/// Exact inverse of [`encode_signal`].
pub fn decode_grid(grid: &TokenGrid, cfg: &CodecConfig) -> Result<Signal> {
    if grid.n_layers() != AUDIO_LAYERS {
        return Err(Error::Grid(format!(
            "codec grids have {AUDIO_LAYERS} layers, got {}",
            grid.n_layers()
        )));
    }
    let mut samples = Vec::with_capacity(grid.n_steps());
    for t in 0..grid.n_steps() {
        let mut value = 0u64;
        for layer in 1..=AUDIO_LAYERS {
            let token = grid.get(layer - 1, t);
            if token >= cfg.base {
                return Err(Error::Grid(format!(
                    "token {token} at layer {layer}, step {t} not below base {}",
                    cfg.base
                )));
            }
            value = value * cfg.base as u64 + token as u64;
        }
        samples.push(value);
    }
    Ok(Signal { samples })
}

/// Step-major interleaving: every layer of step 0, then step 1, and so on.
pub fn flatten_grid(grid: &TokenGrid) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(grid.n_layers() * grid.n_steps());
    for t in 0..grid.n_steps() {
        for l in 0..grid.n_layers() {
            out.push(grid.get(l, t));
        }
    }
    out
}

/// Inverse of [`flatten_grid`].
pub fn unflatten(seq: &[TokenId], n_layers: usize, id_space: IdSpace) -> Result<TokenGrid> {
    if n_layers == 0 {
        return Err(Error::Grid("zero layers".into()));
    }
    if seq.len() % n_layers != 0 {
        return Err(Error::Grid(format!(
            "length {} not divisible by {n_layers} layers",
            seq.len()
        )));
    }
    let n_steps = seq.len() / n_layers;
    let mut grid = TokenGrid::filled(n_layers, n_steps, 0, id_space);
    for (i, &id) in seq.iter().enumerate() {
        grid.set(i % n_layers, i / n_layers, id);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(grid: &TokenGrid, t: usize) -> Vec<TokenId> {
        grid.column(t)
    }

    #[test]
    fn extremes_at_base_eight() {
        let cfg = CodecConfig::new(8).unwrap();
        let g = encode_signal(&Signal::new(vec![0, 2_097_151]), &cfg).unwrap();
        assert_eq!(column(&g, 0), vec![0; 7]);
        assert_eq!(column(&g, 1), vec![7; 7]);
        let s = Signal::new(vec![0, 1, 2_097_151]);
        assert_eq!(decode_grid(&encode_signal(&s, &cfg).unwrap(), &cfg).unwrap(), s);
    }

    #[test]
    fn base_four_example() {
        let cfg = CodecConfig::new(4).unwrap();
        let g = encode_signal(&Signal::new(vec![27]), &cfg).unwrap();
        assert_eq!(column(&g, 0), vec![0, 0, 0, 0, 1, 2, 3]);
        let back = TokenGrid::from_rows(
            &[vec![0], vec![0], vec![0], vec![0], vec![1], vec![2], vec![3]],
            IdSpace::Local,
        )
        .unwrap();
        assert_eq!(decode_grid(&back, &cfg).unwrap().samples, vec![27]);
    }

    #[test]
    fn out_of_range_sample_names_step() {
        let cfg = CodecConfig::new(8).unwrap();
        let err = encode_signal(&Signal::new(vec![1, 2_097_152]), &cfg).unwrap_err();
        assert!(matches!(err, Error::SampleOutOfRange { step: 1, .. }));
    }

    #[test]
    fn decode_rejects_bad_grids() {
        let cfg = CodecConfig::new(8).unwrap();
        let mut g = TokenGrid::filled(7, 2, 0, IdSpace::Local);
        g.set(3, 1, 9);
        assert!(decode_grid(&g, &cfg).is_err());
        assert!(decode_grid(&TokenGrid::filled(6, 2, 0, IdSpace::Local), &cfg).is_err());
    }

    #[test]
    fn flatten_shapes() {
        let g = TokenGrid::from_rows(&(0..7).map(|l| vec![l]).collect::<Vec<_>>(), IdSpace::Local)
            .unwrap();
        assert_eq!(flatten_grid(&g), vec![0, 1, 2, 3, 4, 5, 6]);
        assert!(flatten_grid(&TokenGrid::filled(7, 0, 0, IdSpace::Local)).is_empty());
        let g2 = TokenGrid::from_rows(
            &(0..7).map(|l| vec![l, 10 + l]).collect::<Vec<_>>(),
            IdSpace::Local,
        )
        .unwrap();
        let flat = flatten_grid(&g2);
        assert_eq!(flat.len(), 14);
        assert_eq!(&flat[..7], &g2.column(0)[..]);
    }

    #[test]
    fn unflatten_edges() {
        let empty = unflatten(&[], 7, IdSpace::Local).unwrap();
        assert_eq!((empty.n_layers(), empty.n_steps()), (7, 0));
        assert!(unflatten(&[0; 13], 7, IdSpace::Local).is_err());
    }
}

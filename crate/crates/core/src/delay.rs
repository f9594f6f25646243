//! Text-first delay pattern over parallel token layers.
//!
//! Layer `l`'s token for time `t` is placed at step `t + offsets[l]`. With the
//! default pattern the text layer leads and each codec layer trails the one
//! above it by one step:
//!
//! ```text
//!        step 0  1  2  3  4 ...
//! text        x  x  x  x  x
//! layer 1     P  x  x  x  x
//! layer 2     P  P  x  x  x
//! ...
//! layer 7     P  P  P  P  P  P  P  x
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TokenGrid;
use crate::vocab::{TokenId, MODEL_LAYERS, TEXT_LAYER};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayPattern {
    offsets: Vec<usize>,
}

impl Default for DelayPattern {
    fn default() -> Self {
        Self {
            offsets: (0..MODEL_LAYERS).collect(),
        }
    }
}

impl DelayPattern {
    /// Any number of layers; the first (text) offset must be zero.
    pub fn new(offsets: Vec<usize>) -> Result<Self> {
        match offsets.first() {
            None => Err(Error::Config("empty delay pattern".into())),
            Some(&o) if o != 0 => Err(Error::Config(format!(
                "text layer offset must be 0, got {o}"
            ))),
            _ => Ok(Self { offsets }),
        }
    }

    /// Eight-layer pattern as used by the model.
    pub fn for_model(offsets: Vec<usize>) -> Result<Self> {
        if offsets.len() != MODEL_LAYERS {
            return Err(Error::Config(format!(
                "delay pattern needs {MODEL_LAYERS} offsets, got {}",
                offsets.len()
            )));
        }
        Self::new(offsets)
    }

    /// All offsets zero: the undelayed parallel layout.
    pub fn flat() -> Self {
        Self {
            offsets: vec![0; MODEL_LAYERS],
        }
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn max_offset(&self) -> usize {
        self.offsets.iter().copied().max().unwrap_or(0)
    }

    /// Pattern with `n` extra steps on every audio layer, so text leads audio
    /// by `n` more steps than the structural stagger.
    pub fn with_text_advance(&self, n: usize) -> Self {
        let offsets = self
            .offsets
            .iter()
            .enumerate()
            .map(|(l, &o)| if l == TEXT_LAYER { o } else { o + n })
            .collect();
        Self { offsets }
    }
}

/// Shifts each layer right by its offset; vacated cells hold `pad`.
pub fn apply_delay(grid: &TokenGrid, pattern: &DelayPattern, pad: TokenId) -> Result<TokenGrid> {
    if grid.n_layers() != pattern.len() {
        return Err(Error::Grid(format!(
            "grid has {} layers, pattern expects {}",
            grid.n_layers(),
            pattern.len()
        )));
    }
    let t = grid.n_steps();
    let out_steps = t + pattern.max_offset();
    let mut out = TokenGrid::filled(grid.n_layers(), out_steps, pad, grid.id_space());
    for (l, &off) in pattern.offsets().iter().enumerate() {
        out.row_mut(l)[off..off + t].copy_from_slice(grid.row(l));
    }
    Ok(out)
}

/// Inverse of [`apply_delay`]. Fails if a cell that the pattern leaves empty
/// holds anything but `pad`.
pub fn revert_delay(grid: &TokenGrid, pattern: &DelayPattern, pad: TokenId) -> Result<TokenGrid> {
    if grid.n_layers() != pattern.len() {
        return Err(Error::Grid(format!(
            "grid has {} layers, pattern expects {}",
            grid.n_layers(),
            pattern.len()
        )));
    }
    let max = pattern.max_offset();
    let t = grid.n_steps().checked_sub(max).ok_or_else(|| {
        Error::Grid(format!(
            "{} steps is shorter than the pattern's maximum offset {max}",
            grid.n_steps()
        ))
    })?;
    let mut out = TokenGrid::filled(grid.n_layers(), t, pad, grid.id_space());
    for (l, &off) in pattern.offsets().iter().enumerate() {
        let row = grid.row(l);
        if let Some(step) = (0..off).chain(off + t..grid.n_steps()).find(|&s| row[s] != pad) {
            return Err(Error::InconsistentPadding { layer: l, step });
        }
        out.row_mut(l).copy_from_slice(&row[off..off + t]);
    }
    Ok(out)
}

/// First decode step at which `layer` emits a non-pad token when audio
/// layers are held back by `text_advance` extra steps.
pub fn first_emission_step(pattern: &DelayPattern, text_advance: usize, layer: usize) -> usize {
    let off = pattern.offsets()[layer];
    if layer == TEXT_LAYER {
        off
    } else {
        off + text_advance
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::IdSpace;

    const P: TokenId = 99;

    #[test]
    fn three_layer_stagger() {
        let g = TokenGrid::from_rows(&[vec![1, 2], vec![3, 4], vec![5, 6]], IdSpace::Global).unwrap();
        let pat = DelayPattern::new(vec![0, 1, 2]).unwrap();
        let d = apply_delay(&g, &pat, P).unwrap();
        assert_eq!(d.row(0), &[1, 2, P, P]);
        assert_eq!(d.row(1), &[P, 3, 4, P]);
        assert_eq!(d.row(2), &[P, P, 5, 6]);
        assert_eq!(revert_delay(&d, &pat, P).unwrap(), g);
    }

    #[test]
    fn zero_pattern_is_identity() {
        let g = TokenGrid::from_rows(&(0..8).map(|l| vec![l, l + 10]).collect::<Vec<_>>(), IdSpace::Global)
            .unwrap();
        assert_eq!(apply_delay(&g, &DelayPattern::flat(), P).unwrap(), g);
    }

    #[test]
    fn default_pattern_single_step() {
        let g = TokenGrid::filled(8, 1, 7, IdSpace::Global);
        let d = apply_delay(&g, &DelayPattern::default(), P).unwrap();
        assert_eq!(d.n_steps(), 8);
        assert_eq!(d.row(7), &[P, P, P, P, P, P, P, 7]);
    }

    #[test]
    fn wrong_layer_count() {
        let g = TokenGrid::filled(7, 2, 0, IdSpace::Global);
        assert!(apply_delay(&g, &DelayPattern::default(), P).is_err());
    }

    #[test]
    fn revert_all_pad_and_impossible_cell() {
        let pat = DelayPattern::default();
        let empty = revert_delay(&TokenGrid::filled(8, 7, P, IdSpace::Global), &pat, P).unwrap();
        assert_eq!((empty.n_layers(), empty.n_steps()), (8, 0));

        let mut bad = TokenGrid::filled(8, 8, P, IdSpace::Global);
        bad.set(7, 0, 3);
        assert!(matches!(
            revert_delay(&bad, &pat, P),
            Err(Error::InconsistentPadding { layer: 7, step: 0 })
        ));
    }

    #[test]
    fn emission_steps() {
        let pat = DelayPattern::default();
        assert_eq!(first_emission_step(&pat, 0, 0), 0);
        assert_eq!(first_emission_step(&pat, 0, 7), 7);
        assert_eq!(first_emission_step(&pat, 3, 1), 4);
        assert_eq!(first_emission_step(&pat, 3, 0), 0);
        let steps: Vec<usize> = (0..8).map(|l| first_emission_step(&pat, 2, l)).collect();
        assert!(steps.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn text_advance_shifts_audio_only() {
        let p = DelayPattern::default().with_text_advance(2);
        assert_eq!(p.offsets(), &[0, 3, 4, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn text_offset_must_be_zero() {
        assert!(DelayPattern::new(vec![1, 2]).is_err());
        assert!(DelayPattern::for_model(vec![0, 1, 2]).is_err());
    }
}

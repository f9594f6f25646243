//! Combined text + audio token id space.
//!
//! Ids are laid out as contiguous, disjoint ranges: text, audio layer 1..=7,
//! then a shared tail of special tokens. Layer 0 of every 8-layer grid is the
//! text layer; layers 1..=7 carry codec tokens.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Number of codec layers.
pub const AUDIO_LAYERS: usize = 7;
/// Text layer plus codec layers.
pub const MODEL_LAYERS: usize = AUDIO_LAYERS + 1;
/// Index of the text layer inside an 8-layer grid.
pub const TEXT_LAYER: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Special {
    Pad,
    Bos,
    EosText,
    EosAudio,
    AnswerText,
    AnswerAudio,
    InputAudioMark,
}

impl Special {
    /// Fixed assignment order of the special tail range.
    pub const ALL: [Special; 7] = [
        Special::Pad,
        Special::Bos,
        Special::EosText,
        Special::EosAudio,
        Special::AnswerText,
        Special::AnswerAudio,
        Special::InputAudioMark,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Special::Pad => "PAD",
            Special::Bos => "BOS",
            Special::EosText => "EOS_TEXT",
            Special::EosAudio => "EOS_AUDIO",
            Special::AnswerText => "ANSWER_TEXT",
            Special::AnswerAudio => "ANSWER_AUDIO",
            Special::InputAudioMark => "INPUT_AUDIO_MARK",
        }
    }

    fn ordinal(self) -> u32 {
        Special::ALL.iter().position(|&s| s == self).unwrap() as u32
    }
}

impl fmt::Display for Special {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What an id means: its role, the layer it belongs to and its index inside
/// that layer's range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenClass {
    Text(u32),
    /// `layer` is 1-based (1..=7), matching grid layer indices.
    Audio { layer: usize, index: u32 },
    Special(Special),
}

impl TokenClass {
    pub fn layer(&self) -> Option<usize> {
        match self {
            TokenClass::Text(_) => Some(TEXT_LAYER),
            TokenClass::Audio { layer, .. } => Some(*layer),
            TokenClass::Special(_) => None,
        }
    }

    pub fn local_index(&self) -> u32 {
        match self {
            TokenClass::Text(i) => *i,
            TokenClass::Audio { index, .. } => *index,
            TokenClass::Special(s) => s.ordinal(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    text_size: u32,
    audio_layer_sizes: [u32; AUDIO_LAYERS],
    total_size: u32,
}

impl VocabSpec {
    pub fn new(text_size: u32, audio_layer_sizes: &[u32]) -> Result<Self> {
        if text_size < 2 {
            return Err(Error::Vocab(format!("text size {text_size} < 2")));
        }
        let sizes: [u32; AUDIO_LAYERS] = audio_layer_sizes.try_into().map_err(|_| {
            Error::Vocab(format!(
                "expected {AUDIO_LAYERS} audio layers, got {}",
                audio_layer_sizes.len()
            ))
        })?;
        if let Some((l, s)) = sizes.iter().enumerate().find(|(_, &s)| s < 2) {
            return Err(Error::Vocab(format!("audio layer {} size {s} < 2", l + 1)));
        }
        let total = sizes
            .iter()
            .try_fold(text_size as u64, |acc, &s| Some(acc + s as u64))
            .map(|t| t + Special::ALL.len() as u64)
            .filter(|&t| t <= u32::MAX as u64)
            .ok_or_else(|| Error::Vocab("total size overflows u32".into()))?;
        Ok(Self {
            text_size,
            audio_layer_sizes: sizes,
            total_size: total as u32,
        })
    }

    /// Uniform codebook size on every audio layer.
    pub fn uniform(text_size: u32, codebook: u32) -> Result<Self> {
        Self::new(text_size, &[codebook; AUDIO_LAYERS])
    }

    pub fn text_size(&self) -> u32 {
        self.text_size
    }

    pub fn audio_layer_sizes(&self) -> &[u32; AUDIO_LAYERS] {
        &self.audio_layer_sizes
    }

    pub fn total_size(&self) -> u32 {
        self.total_size
    }

    pub fn text_range(&self) -> Range<u32> {
        0..self.text_size
    }

    /// Id range of audio layer `layer` (1..=7).
    pub fn audio_range(&self, layer: usize) -> Range<u32> {
        assert!((1..=AUDIO_LAYERS).contains(&layer), "audio layer {layer}");
        let start = self.text_size + self.audio_layer_sizes[..layer - 1].iter().sum::<u32>();
        start..start + self.audio_layer_sizes[layer - 1]
    }

    /// Range of ids that belong to grid layer `layer` (text for 0).
    pub fn layer_range(&self, layer: usize) -> Range<u32> {
        if layer == TEXT_LAYER {
            self.text_range()
        } else {
            self.audio_range(layer)
        }
    }

    pub fn specials_start(&self) -> u32 {
        self.total_size - Special::ALL.len() as u32
    }

    pub fn special(&self, s: Special) -> TokenId {
        self.specials_start() + s.ordinal()
    }

    pub fn pad(&self) -> TokenId {
        self.special(Special::Pad)
    }

    pub fn classify(&self, id: TokenId) -> Result<TokenClass> {
        if id >= self.total_size {
            return Err(Error::TokenOutOfRange {
                id,
                total: self.total_size,
            });
        }
        if id < self.text_size {
            return Ok(TokenClass::Text(id));
        }
        let mut start = self.text_size;
        for (l, &size) in self.audio_layer_sizes.iter().enumerate() {
            if id < start + size {
                return Ok(TokenClass::Audio {
                    layer: l + 1,
                    index: id - start,
                });
            }
            start += size;
        }
        Ok(TokenClass::Special(Special::ALL[(id - start) as usize]))
    }

    /// Inverse of [`classify`](Self::classify).
    pub fn id_of(&self, class: TokenClass) -> Result<TokenId> {
        match class {
            TokenClass::Text(i) if i < self.text_size => Ok(i),
            TokenClass::Audio { layer, index }
                if (1..=AUDIO_LAYERS).contains(&layer)
                    && index < self.audio_layer_sizes[layer - 1] =>
            {
                Ok(self.audio_range(layer).start + index)
            }
            TokenClass::Special(s) => Ok(self.special(s)),
            other => Err(Error::Vocab(format!("no id for {other:?}"))),
        }
    }

    pub fn is_special(&self, id: TokenId, s: Special) -> bool {
        id == self.special(s)
    }

    /// End-of-stream marker emitted by the head of `layer`.
    pub fn eos_for_layer(&self, layer: usize) -> TokenId {
        if layer == TEXT_LAYER {
            self.special(Special::EosText)
        } else {
            self.special(Special::EosAudio)
        }
    }

    /// Ids the output head of `layer` may produce: the layer's own range plus
    /// PAD and the layer's EOS.
    pub fn is_head_legal(&self, layer: usize, id: TokenId) -> bool {
        self.layer_range(layer).contains(&id) || id == self.pad() || id == self.eos_for_layer(layer)
    }

    /// Sorted list of head-legal ids for `layer`.
    pub fn head_legal_ids(&self, layer: usize) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = self.layer_range(layer).collect();
        let mut tail = [self.pad(), self.eos_for_layer(layer)];
        tail.sort_unstable();
        ids.extend(tail);
        ids
    }

    /// Ids that may appear on `layer` of an input grid: the layer's own range
    /// or any special token.
    pub fn is_input_legal(&self, layer: usize, id: TokenId) -> bool {
        self.layer_range(layer).contains(&id) || (id >= self.specials_start() && id < self.total_size)
    }

    /// Flat `key=value` lines used inside config files and checkpoints.
    pub fn to_config_lines(&self, prefix: &str) -> Vec<String> {
        let sizes: Vec<String> = self.audio_layer_sizes.iter().map(u32::to_string).collect();
        vec![
            format!("{prefix}text_size={}", self.text_size),
            format!("{prefix}audio_layer_sizes={}", sizes.join(",")),
        ]
    }
}

pub fn build_vocab(text_size: u32, audio_layer_sizes: &[u32]) -> Result<VocabSpec> {
    VocabSpec::new(text_size, audio_layer_sizes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> VocabSpec {
        build_vocab(10, &[8; 7]).unwrap()
    }

    #[test]
    fn total_size_counts_every_range() {
        assert_eq!(spec().total_size(), 73);
    }

    #[test]
    fn ranges_are_contiguous() {
        let v = build_vocab(2, &[2; 7]).unwrap();
        assert_eq!(v.text_range(), 0..2);
        assert_eq!(v.audio_range(1), 2..4);
        assert_eq!(v.audio_range(7), 14..16);
        assert_eq!(v.special(Special::Pad), 16);
        assert_eq!(v.special(Special::InputAudioMark), 22);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(build_vocab(10, &[8; 6]).is_err());
        assert!(build_vocab(1, &[8; 7]).is_err());
        assert!(build_vocab(10, &[8, 8, 8, 1, 8, 8, 8]).is_err());
        assert!(build_vocab(0, &[8; 7]).is_err());
    }

    #[test]
    fn classify_boundaries() {
        let v = spec();
        assert_eq!(v.classify(0).unwrap(), TokenClass::Text(0));
        assert_eq!(v.classify(10).unwrap(), TokenClass::Audio { layer: 1, index: 0 });
        assert_eq!(v.classify(65).unwrap(), TokenClass::Audio { layer: 7, index: 7 });
        assert_eq!(v.classify(66).unwrap(), TokenClass::Special(Special::Pad));
        assert!(matches!(
            v.classify(73),
            Err(Error::TokenOutOfRange { id: 73, total: 73 })
        ));
    }

    #[test]
    fn classify_is_a_bijection() {
        let v = build_vocab(13, &[3, 5, 2, 9, 4, 4, 6]).unwrap();
        let mut seen = std::collections::HashSet::new();
        for id in 0..v.total_size() {
            let class = v.classify(id).unwrap();
            assert_eq!(v.id_of(class).unwrap(), id);
            assert!(seen.insert(class));
        }
        assert_eq!(seen.len(), v.total_size() as usize);
    }

    #[test]
    fn head_legality() {
        let v = spec();
        assert!(v.is_head_legal(0, 3));
        assert!(v.is_head_legal(0, v.special(Special::EosText)));
        assert!(!v.is_head_legal(0, v.special(Special::EosAudio)));
        assert!(!v.is_head_legal(0, 10));
        assert!(v.is_head_legal(1, 10));
        assert!(!v.is_head_legal(2, 10));
        assert!(!v.is_head_legal(3, v.special(Special::AnswerAudio)));
        assert_eq!(v.head_legal_ids(1).len(), 10);
    }

    #[test]
    fn equal_arguments_serialize_identically() {
        let a = serde_json::to_vec(&build_vocab(10, &[8; 7]).unwrap()).unwrap();
        let b = serde_json::to_vec(&build_vocab(10, &[8; 7]).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

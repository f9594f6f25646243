use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::delay::DelayPattern;
use crate::error::{Error, Result};
use crate::layout::FEATURE_DIM;
use crate::vocab::{VocabSpec, MODEL_LAYERS};

/// How the eight per-layer embeddings are combined into one step vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fusion {
    /// Sum of the summands divided by their count.
    Mean,
    Sum,
}

impl Fusion {
    fn name(self) -> &'static str {
        match self {
            Fusion::Mean => "mean",
            Fusion::Sum => "sum",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_trunk_blocks: usize,
    pub n_extension_blocks: usize,
    /// Attention heads per block.
    pub n_heads: usize,
    /// Longest total (input + output) sequence.
    pub max_seq_len: usize,
    /// Input regions are right-aligned to this position, so the first output
    /// step always sees the same position embedding.
    pub max_input_len: usize,
    pub feature_dim: usize,
    pub vocab: VocabSpec,
    pub pattern: DelayPattern,
    pub fusion: Fusion,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_trunk_blocks: 4,
            n_extension_blocks: 2,
            n_heads: 4,
            max_seq_len: 128,
            max_input_len: 48,
            feature_dim: FEATURE_DIM,
            vocab: VocabSpec::uniform(32, 8).expect("default vocabulary"),
            pattern: DelayPattern::default(),
            fusion: Fusion::Mean,
            seed: 0,
        }
    }
}

pub(crate) const MODEL_KEYS: &[&str] = &[
    "d_model",
    "n_trunk_blocks",
    "n_extension_blocks",
    "n_heads",
    "max_seq_len",
    "max_input_len",
    "feature_dim",
    "text_size",
    "audio_layer_sizes",
    "pattern",
    "fusion",
    "seed",
];

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.pattern.len() != MODEL_LAYERS {
            return Err(Error::Config(format!(
                "pattern needs {MODEL_LAYERS} offsets, got {}",
                self.pattern.len()
            )));
        }
        if self.feature_dim != FEATURE_DIM {
            return Err(Error::Config(format!(
                "feature_dim must be {FEATURE_DIM}, got {}",
                self.feature_dim
            )));
        }
        if self.max_input_len == 0 || self.max_input_len >= self.max_seq_len {
            return Err(Error::Config(format!(
                "max_input_len {} must be in [1, max_seq_len {})",
                self.max_input_len, self.max_seq_len
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut c = KvConfig::default();
        c.set("d_model", self.d_model);
        c.set("n_trunk_blocks", self.n_trunk_blocks);
        c.set("n_extension_blocks", self.n_extension_blocks);
        c.set("n_heads", self.n_heads);
        c.set("max_seq_len", self.max_seq_len);
        c.set("max_input_len", self.max_input_len);
        c.set("feature_dim", self.feature_dim);
        c.set("text_size", self.vocab.text_size());
        let sizes: Vec<String> = self.vocab.audio_layer_sizes().iter().map(u32::to_string).collect();
        c.set("audio_layer_sizes", sizes.join(","));
        let offs: Vec<String> = self.pattern.offsets().iter().map(usize::to_string).collect();
        c.set("pattern", offs.join(","));
        c.set("fusion", self.fusion.name());
        c.set("seed", self.seed);
        c
    }

    /// Reads a `model.`-stripped section; absent keys keep their defaults.
    pub fn from_kv(c: &KvConfig) -> Result<Self> {
        if let Some(k) = c.unknown_keys(MODEL_KEYS).first() {
            return Err(Error::Config(format!("unknown model key {k}")));
        }
        let d = Self::default();
        let text_size = c.get_or("text_size", d.vocab.text_size())?;
        let sizes = c.get_list_or("audio_layer_sizes", d.vocab.audio_layer_sizes().to_vec())?;
        let pattern = c.get_list_or("pattern", d.pattern.offsets().to_vec())?;
        let fusion = match c.raw("fusion").unwrap_or("mean") {
            "mean" => Fusion::Mean,
            "sum" => Fusion::Sum,
            other => return Err(Error::Config(format!("unknown fusion {other}"))),
        };
        let cfg = Self {
            d_model: c.get_or("d_model", d.d_model)?,
            n_trunk_blocks: c.get_or("n_trunk_blocks", d.n_trunk_blocks)?,
            n_extension_blocks: c.get_or("n_extension_blocks", d.n_extension_blocks)?,
            n_heads: c.get_or("n_heads", d.n_heads)?,
            max_seq_len: c.get_or("max_seq_len", d.max_seq_len)?,
            max_input_len: c.get_or("max_input_len", d.max_input_len)?,
            feature_dim: c.get_or("feature_dim", d.feature_dim)?,
            vocab: VocabSpec::new(text_size, &sizes)?,
            pattern: DelayPattern::for_model(pattern)?,
            fusion,
            seed: c.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

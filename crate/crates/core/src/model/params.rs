//! Named parameter tensors stored in one flat buffer, partitioned into
//! freezable groups.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::vocab::MODEL_LAYERS;

/// Unit of freezing during staged training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embeddings,
    InputAdapter,
    Trunk,
    OutputExtension,
    Heads,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Embeddings,
        ParamGroup::InputAdapter,
        ParamGroup::Trunk,
        ParamGroup::OutputExtension,
        ParamGroup::Heads,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Embeddings => "embeddings",
            ParamGroup::InputAdapter => "input_adapter",
            ParamGroup::Trunk => "trunk",
            ParamGroup::OutputExtension => "output_extension",
            ParamGroup::Heads => "heads",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type TensorId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub group: ParamGroup,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BlockTensors {
    pub ln1_gain: TensorId,
    pub ln1_bias: TensorId,
    pub wq: TensorId,
    pub bq: TensorId,
    /// No key bias: it shifts every score of a query equally and so has no
    /// effect after the softmax.
    pub wk: TensorId,
    pub wv: TensorId,
    pub bv: TensorId,
    pub wo: TensorId,
    pub bo: TensorId,
    pub ln2_gain: TensorId,
    pub ln2_bias: TensorId,
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

/// Tensor table derived deterministically from a [`ModelConfig`].
#[derive(Clone, Debug)]
pub struct ParamIndex {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    pub embed: [TensorId; MODEL_LAYERS],
    pub position: TensorId,
    pub adapter_w1: TensorId,
    pub adapter_b1: TensorId,
    pub adapter_w2: TensorId,
    pub adapter_b2: TensorId,
    /// Trunk blocks followed by output extension blocks.
    pub blocks: Vec<BlockTensors>,
    pub head_ln_gain: TensorId,
    pub head_ln_bias: TensorId,
    pub head_w: [TensorId; MODEL_LAYERS],
    pub head_b: [TensorId; MODEL_LAYERS],
}

struct Builder {
    tensors: Vec<TensorInfo>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, group: ParamGroup, rows: usize, cols: usize) -> TensorId {
        self.tensors.push(TensorInfo {
            name,
            group,
            rows,
            cols,
            offset: self.total,
        });
        self.total += rows * cols;
        self.tensors.len() - 1
    }

    fn block(&mut self, prefix: &str, group: ParamGroup, d: usize) -> BlockTensors {
        let mut t = |name: &str, rows, cols| self.add(format!("{prefix}.{name}"), group, rows, cols);
        BlockTensors {
            ln1_gain: t("ln1.gain", 1, d),
            ln1_bias: t("ln1.bias", 1, d),
            wq: t("attn.wq", d, d),
            bq: t("attn.bq", 1, d),
            wk: t("attn.wk", d, d),
            wv: t("attn.wv", d, d),
            bv: t("attn.bv", 1, d),
            wo: t("attn.wo", d, d),
            bo: t("attn.bo", 1, d),
            ln2_gain: t("ln2.gain", 1, d),
            ln2_bias: t("ln2.bias", 1, d),
            w1: t("mlp.w1", d, 4 * d),
            b1: t("mlp.b1", 1, 4 * d),
            w2: t("mlp.w2", 4 * d, d),
            b2: t("mlp.b2", 1, d),
        }
    }
}

impl ParamIndex {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let v = cfg.vocab.total_size() as usize;
        let mut b = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let embed = std::array::from_fn(|l| b.add(format!("embed.layer{l}"), ParamGroup::Embeddings, v, d));
        let position = b.add("embed.position".into(), ParamGroup::Embeddings, cfg.max_seq_len, d);
        let adapter_w1 = b.add("adapter.w1".into(), ParamGroup::InputAdapter, cfg.feature_dim, d);
        let adapter_b1 = b.add("adapter.b1".into(), ParamGroup::InputAdapter, 1, d);
        let adapter_w2 = b.add("adapter.w2".into(), ParamGroup::InputAdapter, d, d);
        let adapter_b2 = b.add("adapter.b2".into(), ParamGroup::InputAdapter, 1, d);
        let mut blocks = Vec::new();
        for i in 0..cfg.n_trunk_blocks {
            blocks.push(b.block(&format!("trunk.{i}"), ParamGroup::Trunk, d));
        }
        for i in 0..cfg.n_extension_blocks {
            blocks.push(b.block(&format!("ext.{i}"), ParamGroup::OutputExtension, d));
        }
        let head_ln_gain = b.add("head.ln.gain".into(), ParamGroup::Heads, 1, d);
        let head_ln_bias = b.add("head.ln.bias".into(), ParamGroup::Heads, 1, d);
        let mut head_w = [0; MODEL_LAYERS];
        let mut head_b = [0; MODEL_LAYERS];
        for l in 0..MODEL_LAYERS {
            let n = cfg.vocab.head_legal_ids(l).len();
            head_w[l] = b.add(format!("head.{l}.w"), ParamGroup::Heads, d, n);
            head_b[l] = b.add(format!("head.{l}.b"), ParamGroup::Heads, 1, n);
        }
        Self {
            tensors: b.tensors,
            total: b.total,
            embed,
            position,
            adapter_w1,
            adapter_b1,
            adapter_w2,
            adapter_b2,
            blocks,
            head_ln_gain,
            head_ln_bias,
            head_w,
            head_b,
        }
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn group_len(&self, group: ParamGroup) -> usize {
        self.tensors.iter().filter(|t| t.group == group).map(TensorInfo::len).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Parameters {
    index: Arc<ParamIndex>,
    values: Vec<f64>,
}

impl PartialEq for Parameters {
    fn eq(&self, other: &Self) -> bool {
        self.index.tensors == other.index.tensors && self.values == other.values
    }
}

impl Parameters {
    /// Seeded initialization. Values are rounded to f32 so a checkpoint
    /// round trip is exact.
    pub fn init(cfg: &ModelConfig) -> Self {
        let index = Arc::new(ParamIndex::new(cfg));
        let mut values = vec![0.0; index.total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n_blocks = (cfg.n_trunk_blocks + cfg.n_extension_blocks).max(1) as f64;
        for t in &index.tensors {
            let name = t.name.as_str();
            let slot = &mut values[t.range()];
            if name.ends_with(".gain") {
                slot.fill(1.0);
                continue;
            }
            if t.rows == 1 {
                continue; // biases start at zero
            }
            let std = if name.starts_with("embed.") {
                0.1
            } else if name.ends_with("attn.wo") || name.ends_with("mlp.w2") {
                0.02 / (2.0 * n_blocks).sqrt()
            } else if name == "adapter.w1" {
                1.0 / (cfg.feature_dim as f64).sqrt()
            } else {
                0.02
            };
            let normal = Normal::new(0.0, std).expect("finite std");
            for v in slot.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        let mut p = Self { index, values };
        p.round_to_f32();
        p
    }

    pub fn from_values(index: Arc<ParamIndex>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), index.total);
        Self { index, values }
    }

    pub fn index(&self) -> &Arc<ParamIndex> {
        &self.index
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, id: TensorId) -> &[f64] {
        &self.values[self.index.tensors[id].range()]
    }

    pub fn get_mut(&mut self, id: TensorId) -> &mut [f64] {
        let r = self.index.tensors[id].range();
        &mut self.values[r]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.index.find(name).map(|id| self.get(id))
    }

    /// Copy of every value in `group`, in tensor order.
    pub fn group_values(&self, group: ParamGroup) -> Vec<f64> {
        self.index
            .tensors
            .iter()
            .filter(|t| t.group == group)
            .flat_map(|t| self.values[t.range()].iter().copied())
            .collect()
    }

    /// Per-entry mask: true where the entry belongs to one of `groups`.
    pub fn group_mask(&self, groups: &[ParamGroup]) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for t in &self.index.tensors {
            if groups.contains(&t.group) {
                mask[t.range()].fill(true);
            }
        }
        mask
    }

    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_entry_has_exactly_one_group() {
        let cfg = ModelConfig {
            d_model: 16,
            n_trunk_blocks: 2,
            n_extension_blocks: 1,
            ..Default::default()
        };
        let p = Parameters::init(&cfg);
        let idx = p.index();
        let mut covered = vec![0u8; idx.total];
        for t in &idx.tensors {
            for c in &mut covered[t.range()] {
                *c += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
        let sum: usize = ParamGroup::ALL.iter().map(|&g| idx.group_len(g)).sum();
        assert_eq!(sum, idx.total);
        assert_eq!(idx.blocks.len(), 3);
        assert_eq!(idx.tensors[idx.blocks[2].wq].group, ParamGroup::OutputExtension);
    }

    #[test]
    fn init_is_seeded_and_f32_exact() {
        let cfg = ModelConfig {
            d_model: 16,
            ..Default::default()
        };
        let a = Parameters::init(&cfg);
        let b = Parameters::init(&cfg);
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&v| v as f32 as f64 == v));
        let c = Parameters::init(&ModelConfig { seed: 1, ..cfg });
        assert_ne!(a.values(), c.values());
    }
}

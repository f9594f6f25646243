//! Decoder-only transformer over fused 8-layer token columns.
//!
//! Each sequence position carries one id per layer. The per-layer embeddings
//! (plus the input-adapter projection of an encoder feature frame, when the
//! position has one) are fused into a single vector, a learned position
//! embedding is added, and the result runs through the trunk blocks, the
//! output extension blocks, a final layer norm and eight output heads.
//!
//! Three code paths share the same row-wise arithmetic:
//! - [`Model::forward`]: full causal pass, logits for every position;
//! - [`Model::loss_and_grad`]: packed minibatch pass plus hand-written
//!   backward;
//! - [`Model::step`]: incremental decoding against a [`KvCache`].

use super::config::{Fusion, ModelConfig};
use super::kernels::{gelu, gelu_grad, gemm, layer_norm, layer_norm_backward, linear, softmax_in_place, LnCache};
use super::params::{BlockTensors, ParamIndex, Parameters, TensorId};
use crate::error::{Error, Result};
use crate::grid::TokenGrid;
use crate::layout::{InputLayout, FEATURE_DIM};
use crate::vocab::{TokenId, VocabSpec, MODEL_LAYERS};

/// One sequence position.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput {
    pub ids: [TokenId; MODEL_LAYERS],
    pub feature: Option<[f64; FEATURE_DIM]>,
    /// Index into the position embedding table.
    pub position: usize,
}

/// Logits of all eight heads in full vocabulary space; ids a head may not
/// produce hold `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadLogits {
    pub steps: usize,
    pub vocab: usize,
    /// `data[layer]` is `steps x vocab`, row-major.
    pub data: [Vec<f64>; MODEL_LAYERS],
}

impl HeadLogits {
    pub fn row(&self, layer: usize, step: usize) -> &[f64] {
        &self.data[layer][step * self.vocab..(step + 1) * self.vocab]
    }

    /// Rows `range` of every head.
    pub fn slice_steps(&self, range: std::ops::Range<usize>) -> HeadLogits {
        let v = self.vocab;
        HeadLogits {
            steps: range.len(),
            vocab: v,
            data: std::array::from_fn(|l| self.data[l][range.start * v..range.end * v].to_vec()),
        }
    }
}

/// Per-sequence attention keys and values for incremental decoding.
#[derive(Clone, Debug)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Statistics of one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    /// Sum of per-cell negative log-likelihoods.
    pub nll_sum: f64,
    pub cells: usize,
    /// Cells whose argmax equals the target.
    pub correct: usize,
}

impl LossStats {
    pub fn mean(&self) -> f64 {
        self.nll_sum / self.cells as f64
    }

    pub fn add(&mut self, other: &LossStats) {
        self.nll_sum += other.nll_sum;
        self.cells += other.cells;
        self.correct += other.correct;
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: Parameters,
    /// Head-legal ids per layer; the compact head output index `i` means
    /// `head_ids[layer][i]`.
    head_ids: [Vec<TokenId>; MODEL_LAYERS],
    /// Global id -> compact head index, `u32::MAX` when illegal.
    head_slot: [Vec<u32>; MODEL_LAYERS],
}

struct Segment {
    start: usize,
    len: usize,
}

struct AdapterTrace {
    rows: Vec<usize>,
    feats: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

struct BlockTrace {
    ln1: LnCache,
    y1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per segment, per head: `len x len` attention weights.
    probs: Vec<Vec<f64>>,
    o: Vec<f64>,
    ln2: LnCache,
    y2: Vec<f64>,
    h: Vec<f64>,
    g: Vec<f64>,
}

struct Trace {
    rows: usize,
    adapter: AdapterTrace,
    blocks: Vec<BlockTrace>,
    final_ln: LnCache,
    z: Vec<f64>,
    /// Compact logits per head, `rows x n_legal`.
    logits: [Vec<f64>; MODEL_LAYERS],
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = Parameters::init(&config);
        Self::with_params(config, params)
    }

    pub fn with_params(config: ModelConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        let expected = ParamIndex::new(&config);
        if expected.tensors != params.index().tensors {
            return Err(Error::Model("parameter layout does not match config".into()));
        }
        let v = config.vocab.total_size() as usize;
        let head_ids: [Vec<TokenId>; MODEL_LAYERS] = std::array::from_fn(|l| config.vocab.head_legal_ids(l));
        let head_slot = std::array::from_fn(|l| {
            let mut slot = vec![u32::MAX; v];
            for (i, &id) in head_ids[l].iter().enumerate() {
                slot[id as usize] = i as u32;
            }
            slot
        });
        Ok(Self {
            config,
            params,
            head_ids,
            head_slot,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &VocabSpec {
        &self.config.vocab
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn into_params(self) -> Parameters {
        self.params
    }

    pub fn head_ids(&self, layer: usize) -> &[TokenId] {
        &self.head_ids[layer]
    }

    /// Compact head index of `id`, if the head of `layer` may produce it.
    pub fn head_slot(&self, layer: usize, id: TokenId) -> Option<usize> {
        match self.head_slot[layer].get(id as usize) {
            Some(&s) if s != u32::MAX => Some(s as usize),
            _ => None,
        }
    }

    fn idx(&self) -> &ParamIndex {
        self.params.index()
    }

    fn p(&self, id: TensorId) -> &[f64] {
        self.params.get(id)
    }

    // ---------------------------------------------------------------------
    // sequence construction

    /// Position-embedding index of input column `p` for an input region of
    /// `input_len` columns.
    pub fn position_of(&self, input_len: usize, p: usize) -> usize {
        p + self.config.max_input_len - input_len
    }

    /// Input columns of `layout` followed by the first `teacher_steps`
    /// columns of `teacher`.
    pub fn sequence(
        &self,
        layout: &InputLayout,
        teacher: &TokenGrid,
        teacher_steps: usize,
    ) -> Result<Vec<StepInput>> {
        let t_in = layout.input_len();
        if t_in > self.config.max_input_len {
            return Err(Error::Overlength {
                len: t_in,
                max: self.config.max_input_len,
            });
        }
        let last = self.position_of(t_in, t_in + teacher_steps);
        if last > self.config.max_seq_len {
            return Err(Error::Overlength {
                len: last,
                max: self.config.max_seq_len,
            });
        }
        if teacher_steps > teacher.n_steps() || teacher.n_layers() != MODEL_LAYERS {
            return Err(Error::Model(format!(
                "teacher grid {}x{} cannot supply {teacher_steps} steps",
                teacher.n_layers(),
                teacher.n_steps()
            )));
        }
        let mut seq = Vec::with_capacity(t_in + teacher_steps);
        for p in 0..t_in {
            let ids = std::array::from_fn(|l| layout.input_ids.get(l, p));
            let feature = layout.features.as_ref().and_then(|f| f.at(p)).copied();
            seq.push(StepInput {
                ids,
                feature,
                position: self.position_of(t_in, p),
            });
        }
        for s in 0..teacher_steps {
            seq.push(StepInput {
                ids: std::array::from_fn(|l| teacher.get(l, s)),
                feature: None,
                position: self.position_of(t_in, t_in + s),
            });
        }
        Ok(seq)
    }

    fn check_inputs(&self, inputs: &[StepInput]) -> Result<()> {
        let vocab = &self.config.vocab;
        for s in inputs {
            for (l, &id) in s.ids.iter().enumerate() {
                if !vocab.is_input_legal(l, id) {
                    return Err(Error::Model(format!(
                        "id {id} is not valid input for layer {l}"
                    )));
                }
            }
            if s.position >= self.config.max_seq_len {
                return Err(Error::Overlength {
                    len: s.position + 1,
                    max: self.config.max_seq_len,
                });
            }
        }
        Ok(())
    }

    // ---------------------------------------------------------------------
    // shared row-wise pieces

    fn fusion_scale(&self, has_feature: bool) -> f64 {
        match self.config.fusion {
            Fusion::Mean => 1.0 / (MODEL_LAYERS + has_feature as usize) as f64,
            Fusion::Sum => 1.0,
        }
    }

    /// Fused per-step vectors (without position) and the adapter trace.
    fn fuse_rows(&self, inputs: &[StepInput]) -> (Vec<f64>, AdapterTrace) {
        let d = self.config.d_model;
        let idx = self.idx();
        let rows: Vec<usize> = (0..inputs.len()).filter(|&r| inputs[r].feature.is_some()).collect();
        let nf = rows.len();
        let mut feats = Vec::with_capacity(nf * FEATURE_DIM);
        for &r in &rows {
            feats.extend_from_slice(inputs[r].feature.as_ref().unwrap());
        }
        let mut pre = vec![0.0; nf * d];
        linear(&feats, nf, self.p(idx.adapter_w1), self.p(idx.adapter_b1), &mut pre);
        let act: Vec<f64> = pre.iter().map(|&x| gelu(x)).collect();
        let mut proj = vec![0.0; nf * d];
        linear(&act, nf, self.p(idx.adapter_w2), self.p(idx.adapter_b2), &mut proj);

        let mut x = vec![0.0; inputs.len() * d];
        let mut next_feature = 0;
        for (r, s) in inputs.iter().enumerate() {
            let out = &mut x[r * d..(r + 1) * d];
            for (l, &id) in s.ids.iter().enumerate() {
                let e = &self.p(idx.embed[l])[id as usize * d..(id as usize + 1) * d];
                for (o, v) in out.iter_mut().zip(e) {
                    *o += v;
                }
            }
            if s.feature.is_some() {
                for (o, v) in out.iter_mut().zip(&proj[next_feature * d..(next_feature + 1) * d]) {
                    *o += v;
                }
                next_feature += 1;
            }
            let scale = self.fusion_scale(s.feature.is_some());
            for o in out.iter_mut() {
                *o *= scale;
            }
        }
        (
            x,
            AdapterTrace {
                rows,
                feats,
                pre,
                act,
            },
        )
    }

    fn embed_rows(&self, inputs: &[StepInput]) -> (Vec<f64>, AdapterTrace) {
        let d = self.config.d_model;
        let (mut x, trace) = self.fuse_rows(inputs);
        let pos = self.p(self.idx().position);
        for (r, s) in inputs.iter().enumerate() {
            let pe = &pos[s.position * d..(s.position + 1) * d];
            for (o, v) in x[r * d..(r + 1) * d].iter_mut().zip(pe) {
                *o += v;
            }
        }
        (x, trace)
    }

    /// Mean (or sum) of the per-layer embeddings of one column, plus the
    /// adapter projection of `feature` when given. Excludes position.
    pub fn embed_fuse(&self, ids: &[TokenId; MODEL_LAYERS], feature: Option<&[f64; FEATURE_DIM]>) -> Result<Vec<f64>> {
        let step = StepInput {
            ids: *ids,
            feature: feature.copied(),
            position: 0,
        };
        self.check_inputs(std::slice::from_ref(&step))?;
        Ok(self.fuse_rows(std::slice::from_ref(&step)).0)
    }

    /// Attention of one query row over `n_keys` key/value rows.
    #[allow(clippy::too_many_arguments)]
    fn attend_row(
        &self,
        q: &[f64],
        keys: &[f64],
        values: &[f64],
        n_keys: usize,
        out: &mut [f64],
        mut probs: Option<&mut [Vec<f64>]>,
        scores: &mut Vec<f64>,
    ) {
        let d = self.config.d_model;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        for h in 0..self.config.n_heads {
            let qh = &q[h * dh..(h + 1) * dh];
            scores.clear();
            for j in 0..n_keys {
                let kh = &keys[j * d + h * dh..j * d + (h + 1) * dh];
                let mut s = 0.0;
                for i in 0..dh {
                    s += qh[i] * kh[i];
                }
                scores.push(s * scale);
            }
            softmax_in_place(scores);
            let oh = &mut out[h * dh..(h + 1) * dh];
            oh.fill(0.0);
            for (j, &p) in scores.iter().enumerate() {
                let vh = &values[j * d + h * dh..j * d + (h + 1) * dh];
                for i in 0..dh {
                    oh[i] += p * vh[i];
                }
            }
            if let Some(pr) = probs.as_deref_mut() {
                pr[h].extend_from_slice(scores);
            }
        }
    }

    fn qkv(&self, b: &BlockTensors, y1: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.config.d_model;
        let mut q = vec![0.0; rows * d];
        let mut k = vec![0.0; rows * d];
        let mut v = vec![0.0; rows * d];
        linear(y1, rows, self.p(b.wq), self.p(b.bq), &mut q);
        gemm(rows, d, d, y1, false, self.p(b.wk), false, 0.0, &mut k);
        linear(y1, rows, self.p(b.wv), self.p(b.bv), &mut v);
        (q, k, v)
    }

    /// Output projection, first residual, MLP and second residual.
    /// Returns (ln2 cache, y2, h, g) for the backward pass.
    fn block_tail(
        &self,
        b: &BlockTensors,
        x: &mut [f64],
        o: &[f64],
        rows: usize,
    ) -> (LnCache, Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.config.d_model;
        let mut a = vec![0.0; rows * d];
        linear(o, rows, self.p(b.wo), self.p(b.bo), &mut a);
        for (xi, ai) in x.iter_mut().zip(&a) {
            *xi += ai;
        }
        let mut y2 = vec![0.0; rows * d];
        let ln2 = layer_norm(x, d, self.p(b.ln2_gain), self.p(b.ln2_bias), &mut y2);
        let mut h = vec![0.0; rows * 4 * d];
        linear(&y2, rows, self.p(b.w1), self.p(b.b1), &mut h);
        let g: Vec<f64> = h.iter().map(|&v| gelu(v)).collect();
        let mut m = vec![0.0; rows * d];
        linear(&g, rows, self.p(b.w2), self.p(b.b2), &mut m);
        for (xi, mi) in x.iter_mut().zip(&m) {
            *xi += mi;
        }
        (ln2, y2, h, g)
    }

    fn heads_forward(&self, x: &[f64], rows: usize) -> (LnCache, Vec<f64>, [Vec<f64>; MODEL_LAYERS]) {
        let d = self.config.d_model;
        let idx = self.idx();
        let mut z = vec![0.0; rows * d];
        let ln = layer_norm(x, d, self.p(idx.head_ln_gain), self.p(idx.head_ln_bias), &mut z);
        let logits = std::array::from_fn(|l| {
            let n = self.head_ids[l].len();
            let mut out = vec![0.0; rows * n];
            linear(&z, rows, self.p(idx.head_w[l]), self.p(idx.head_b[l]), &mut out);
            out
        });
        (ln, z, logits)
    }

    fn expand(&self, compact: &[Vec<f64>; MODEL_LAYERS], rows: usize) -> HeadLogits {
        let v = self.config.vocab.total_size() as usize;
        let data = std::array::from_fn(|l| {
            let n = self.head_ids[l].len();
            let mut full = vec![f64::NEG_INFINITY; rows * v];
            for r in 0..rows {
                for (i, &id) in self.head_ids[l].iter().enumerate() {
                    full[r * v + id as usize] = compact[l][r * n + i];
                }
            }
            full
        });
        HeadLogits { steps: rows, vocab: v, data }
    }

    // ---------------------------------------------------------------------
    // full pass

    fn run(&self, inputs: &[StepInput], segments: &[Segment], keep: bool) -> Trace {
        let d = self.config.d_model;
        let rows = inputs.len();
        let (mut x, adapter) = self.embed_rows(inputs);
        let mut blocks = Vec::with_capacity(self.idx().blocks.len());
        let mut scores = Vec::new();
        for b in &self.idx().blocks {
            let mut y1 = vec![0.0; rows * d];
            let ln1 = layer_norm(&x, d, self.p(b.ln1_gain), self.p(b.ln1_bias), &mut y1);
            let (q, k, v) = self.qkv(b, &y1, rows);
            let mut o = vec![0.0; rows * d];
            let mut probs = Vec::new();
            for seg in segments {
                let mut per_head: Vec<Vec<f64>> = if keep {
                    vec![Vec::with_capacity(seg.len * (seg.len + 1) / 2); self.config.n_heads]
                } else {
                    Vec::new()
                };
                let ks = &k[seg.start * d..(seg.start + seg.len) * d];
                let vs = &v[seg.start * d..(seg.start + seg.len) * d];
                for i in 0..seg.len {
                    let r = seg.start + i;
                    self.attend_row(
                        &q[r * d..(r + 1) * d],
                        ks,
                        vs,
                        i + 1,
                        &mut o[r * d..(r + 1) * d],
                        keep.then_some(per_head.as_mut_slice()),
                        &mut scores,
                    );
                }
                probs.extend(per_head);
            }
            let (ln2, y2, h, g) = self.block_tail(b, &mut x, &o, rows);
            if keep {
                blocks.push(BlockTrace {
                    ln1,
                    y1,
                    q,
                    k,
                    v,
                    probs,
                    o,
                    ln2,
                    y2,
                    h,
                    g,
                });
            }
        }
        let (final_ln, z, logits) = self.heads_forward(&x, rows);
        Trace {
            rows,
            adapter,
            blocks,
            final_ln,
            z,
            logits,
        }
    }

    /// Causal pass over `inputs`; logits for every position.
    pub fn forward_inputs(&self, inputs: &[StepInput]) -> Result<HeadLogits> {
        self.check_inputs(inputs)?;
        let seg = [Segment {
            start: 0,
            len: inputs.len(),
        }];
        let trace = self.run(inputs, &seg, false);
        Ok(self.expand(&trace.logits, trace.rows))
    }

    /// Causal pass over the input region of `layout` followed by every
    /// column of `teacher`. Row `T_in - 1 + s` predicts output step `s`.
    pub fn forward(&self, layout: &InputLayout, teacher: &TokenGrid) -> Result<HeadLogits> {
        let seq = self.sequence(layout, teacher, teacher.n_steps())?;
        self.forward_inputs(&seq)
    }

    /// Logits aligned with `layout.target_ids` (one row per output step),
    /// teacher forced with the targets themselves.
    pub fn output_logits(&self, layout: &InputLayout) -> Result<HeadLogits> {
        let t_out = layout.output_len();
        let seq = self.sequence(layout, &layout.target_ids, t_out.saturating_sub(1))?;
        let all = self.forward_inputs(&seq)?;
        let t_in = layout.input_len();
        Ok(all.slice_steps(t_in - 1..t_in - 1 + t_out))
    }

    /// Final-layer-norm output at the last position of `inputs`.
    pub fn final_hidden(&self, inputs: &[StepInput]) -> Result<Vec<f64>> {
        self.check_inputs(inputs)?;
        let d = self.config.d_model;
        let seg = [Segment {
            start: 0,
            len: inputs.len(),
        }];
        let trace = self.run(inputs, &seg, false);
        Ok(trace.z[(trace.rows - 1) * d..].to_vec())
    }

    // ---------------------------------------------------------------------
    // training pass

    /// Packs `batch` into one row set with one causal segment per example.
    /// Returns the rows, segments and masked cells `(row, layer, slot)`.
    fn pack(&self, batch: &[&InputLayout]) -> Result<(Vec<StepInput>, Vec<Segment>, Vec<(usize, usize, usize)>)> {
        let mut inputs = Vec::new();
        let mut segments = Vec::new();
        let mut cells = Vec::new();
        for lay in batch {
            let t_out = lay.output_len();
            let seq = self.sequence(lay, &lay.target_ids, t_out.saturating_sub(1))?;
            let start = inputs.len();
            let t_in = lay.input_len();
            for l in 0..MODEL_LAYERS {
                for s in 0..t_out {
                    if !lay.mask(l, s) {
                        continue;
                    }
                    let id = lay.target_ids.get(l, s);
                    let slot = self.head_slot(l, id).ok_or_else(|| {
                        Error::Model(format!("target {id} not producible by head {l}"))
                    })?;
                    cells.push((start + t_in - 1 + s, l, slot));
                }
            }
            segments.push(Segment {
                start,
                len: seq.len(),
            });
            inputs.extend(seq);
        }
        self.check_inputs(&inputs)?;
        Ok((inputs, segments, cells))
    }

    fn score(&self, trace: &Trace, cells: &[(usize, usize, usize)], mut dlogits: Option<(&mut [Vec<f64>; MODEL_LAYERS], f64)>) -> LossStats {
        let mut stats = LossStats::default();
        let mut buf = Vec::new();
        for &(row, l, target) in cells {
            let n = self.head_ids[l].len();
            let logits = &trace.logits[l][row * n..(row + 1) * n];
            buf.clear();
            buf.extend_from_slice(logits);
            let lse = softmax_in_place(&mut buf);
            stats.nll_sum += lse - logits[target];
            stats.cells += 1;
            if argmax(logits) == target {
                stats.correct += 1;
            }
            if let Some((dl, scale)) = dlogits.as_mut() {
                let g = &mut dl[l][row * n..(row + 1) * n];
                for (gi, p) in g.iter_mut().zip(&buf) {
                    *gi += *scale * p;
                }
                g[target] -= *scale;
            }
        }
        stats
    }

    /// Teacher-forced loss statistics over `batch`, no gradient.
    pub fn evaluate(&self, batch: &[&InputLayout]) -> Result<LossStats> {
        let (inputs, segments, cells) = self.pack(batch)?;
        let trace = self.run(&inputs, &segments, false);
        Ok(self.score(&trace, &cells, None))
    }

    /// Summed masked NLL over `batch` and its gradient. Gradients are
    /// accumulated into `grads` (flat, parameter layout) scaled by
    /// `grad_scale`; tensors with `trainable[id] == false` receive none.
    pub fn loss_and_grad(
        &self,
        batch: &[&InputLayout],
        trainable: &[bool],
        grad_scale: f64,
        grads: &mut [f64],
    ) -> Result<LossStats> {
        let (inputs, segments, cells) = self.pack(batch)?;
        let trace = self.run(&inputs, &segments, true);
        let mut dlogits: [Vec<f64>; MODEL_LAYERS] = std::array::from_fn(|l| vec![0.0; trace.logits[l].len()]);
        let stats = self.score(&trace, &cells, Some((&mut dlogits, grad_scale)));
        self.backward(&inputs, &segments, &trace, &dlogits, trainable, grads);
        Ok(stats)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        inputs: &[StepInput],
        segments: &[Segment],
        trace: &Trace,
        dlogits: &[Vec<f64>; MODEL_LAYERS],
        trainable: &[bool],
        grads: &mut [f64],
    ) {
        let d = self.config.d_model;
        let rows = trace.rows;
        let idx = self.idx().clone();
        let mut g = GradSink {
            idx: &idx,
            trainable,
            grads,
        };

        // heads
        let mut dz = vec![0.0; rows * d];
        for l in 0..MODEL_LAYERS {
            let n = self.head_ids[l].len();
            if let Some(dw) = g.slot(idx.head_w[l]) {
                gemm(d, rows, n, &trace.z, true, &dlogits[l], false, 1.0, dw);
            }
            if let Some(db) = g.slot(idx.head_b[l]) {
                add_rows(db, &dlogits[l]);
            }
            gemm(rows, n, d, &dlogits[l], false, self.p(idx.head_w[l]), true, 1.0, &mut dz);
        }
        let mut dx = vec![0.0; rows * d];
        {
            let (dg, db) = g.pair(idx.head_ln_gain, idx.head_ln_bias);
            layer_norm_backward(&trace.final_ln, d, self.p(idx.head_ln_gain), &dz, dg, db, &mut dx);
        }

        // blocks, last to first
        let mut tmp = vec![0.0; rows * d];
        for (b, bt) in idx.blocks.iter().zip(&trace.blocks).rev() {
            // MLP: x2 = x1 + gelu(y2 W1 + b1) W2 + b2
            let mut dgact = vec![0.0; rows * 4 * d];
            if let Some(dw) = g.slot(b.w2) {
                gemm(4 * d, rows, d, &bt.g, true, &dx, false, 1.0, dw);
            }
            if let Some(db) = g.slot(b.b2) {
                add_rows(db, &dx);
            }
            gemm(rows, d, 4 * d, &dx, false, self.p(b.w2), true, 0.0, &mut dgact);
            for (gv, &hv) in dgact.iter_mut().zip(&bt.h) {
                *gv *= gelu_grad(hv);
            }
            if let Some(dw) = g.slot(b.w1) {
                gemm(d, rows, 4 * d, &bt.y2, true, &dgact, false, 1.0, dw);
            }
            if let Some(db) = g.slot(b.b1) {
                add_rows(db, &dgact);
            }
            let mut dy2 = vec![0.0; rows * d];
            gemm(rows, 4 * d, d, &dgact, false, self.p(b.w1), true, 0.0, &mut dy2);
            {
                let (dg, db) = g.pair(b.ln2_gain, b.ln2_bias);
                layer_norm_backward(&bt.ln2, d, self.p(b.ln2_gain), &dy2, dg, db, &mut tmp);
            }
            for (a, t) in dx.iter_mut().zip(&tmp) {
                *a += t;
            }

            // attention: x1 = x + o Wo + bo
            if let Some(dw) = g.slot(b.wo) {
                gemm(d, rows, d, &bt.o, true, &dx, false, 1.0, dw);
            }
            if let Some(db) = g.slot(b.bo) {
                add_rows(db, &dx);
            }
            let mut d_o = vec![0.0; rows * d];
            gemm(rows, d, d, &dx, false, self.p(b.wo), true, 0.0, &mut d_o);
            let (dq, dk, dv) = self.attention_backward(segments, bt, &d_o);
            let mut dy1 = vec![0.0; rows * d];
            for (w, bias, dproj) in [(b.wq, Some(b.bq), &dq), (b.wk, None, &dk), (b.wv, Some(b.bv), &dv)] {
                if let Some(dw) = g.slot(w) {
                    gemm(d, rows, d, &bt.y1, true, dproj, false, 1.0, dw);
                }
                if let Some(db) = bias.and_then(|id| g.slot(id)) {
                    add_rows(db, dproj);
                }
                gemm(rows, d, d, dproj, false, self.p(w), true, 1.0, &mut dy1);
            }
            {
                let (dg, db) = g.pair(b.ln1_gain, b.ln1_bias);
                layer_norm_backward(&bt.ln1, d, self.p(b.ln1_gain), &dy1, dg, db, &mut tmp);
            }
            for (a, t) in dx.iter_mut().zip(&tmp) {
                *a += t;
            }
        }

        // embeddings: x0 = scale * (sum_l E_l[id_l] + adapter(f)) + P[pos]
        let mut dproj = vec![0.0; trace.adapter.rows.len() * d];
        let mut next_feature = 0;
        for (r, s) in inputs.iter().enumerate() {
            let dr = &dx[r * d..(r + 1) * d];
            if let Some(dp) = g.slot(idx.position) {
                for (a, v) in dp[s.position * d..(s.position + 1) * d].iter_mut().zip(dr) {
                    *a += v;
                }
            }
            let scale = self.fusion_scale(s.feature.is_some());
            for (l, &id) in s.ids.iter().enumerate() {
                if let Some(de) = g.slot(idx.embed[l]) {
                    for (a, v) in de[id as usize * d..(id as usize + 1) * d].iter_mut().zip(dr) {
                        *a += scale * v;
                    }
                }
            }
            if s.feature.is_some() {
                for (a, v) in dproj[next_feature * d..(next_feature + 1) * d].iter_mut().zip(dr) {
                    *a = scale * v;
                }
                next_feature += 1;
            }
        }
        let ad = &trace.adapter;
        let nf = ad.rows.len();
        if nf > 0 {
            if let Some(dw) = g.slot(idx.adapter_w2) {
                gemm(d, nf, d, &ad.act, true, &dproj, false, 1.0, dw);
            }
            if let Some(db) = g.slot(idx.adapter_b2) {
                add_rows(db, &dproj);
            }
            let mut dact = vec![0.0; nf * d];
            gemm(nf, d, d, &dproj, false, self.p(idx.adapter_w2), true, 0.0, &mut dact);
            for (a, &p) in dact.iter_mut().zip(&ad.pre) {
                *a *= gelu_grad(p);
            }
            if let Some(dw) = g.slot(idx.adapter_w1) {
                gemm(FEATURE_DIM, nf, d, &ad.feats, true, &dact, false, 1.0, dw);
            }
            if let Some(db) = g.slot(idx.adapter_b1) {
                add_rows(db, &dact);
            }
        }
    }

    fn attention_backward(&self, segments: &[Segment], bt: &BlockTrace, d_o: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.config.d_model;
        let dh = self.config.head_dim();
        let nh = self.config.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let rows = d_o.len() / d;
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut dp = Vec::new();
        for (si, seg) in segments.iter().enumerate() {
            for h in 0..nh {
                let probs = &bt.probs[si * nh + h];
                let mut off = 0;
                for i in 0..seg.len {
                    let r = seg.start + i;
                    let p = &probs[off..off + i + 1];
                    off += i + 1;
                    let doh = &d_o[r * d + h * dh..r * d + (h + 1) * dh];
                    dp.clear();
                    let mut dot = 0.0;
                    for (j, &pj) in p.iter().enumerate() {
                        let c = (seg.start + j) * d + h * dh;
                        let vh = &bt.v[c..c + dh];
                        let mut s = 0.0;
                        for t in 0..dh {
                            s += doh[t] * vh[t];
                            dv[c + t] += pj * doh[t];
                        }
                        dp.push(s);
                        dot += pj * s;
                    }
                    let qh = &bt.q[r * d + h * dh..r * d + (h + 1) * dh];
                    for (j, &pj) in p.iter().enumerate() {
                        let ds = pj * (dp[j] - dot) * scale;
                        let c = (seg.start + j) * d + h * dh;
                        for t in 0..dh {
                            dq[r * d + h * dh + t] += ds * bt.k[c + t];
                            dk[c + t] += ds * qh[t];
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }

    // ---------------------------------------------------------------------
    // incremental decoding

    pub fn new_cache(&self) -> KvCache {
        let n = self.idx().blocks.len();
        KvCache {
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            len: 0,
        }
    }

    /// Appends one position to each cache (one input per cache) and returns
    /// each sequence's full-vocabulary logits at that position. The rows are
    /// evaluated as one batch.
    pub fn step(&self, caches: &mut [&mut KvCache], inputs: &[StepInput]) -> Result<HeadLogits> {
        if caches.len() != inputs.len() {
            return Err(Error::Model(format!(
                "{} caches for {} inputs",
                caches.len(),
                inputs.len()
            )));
        }
        self.check_inputs(inputs)?;
        let d = self.config.d_model;
        let rows = inputs.len();
        let (mut x, _) = self.embed_rows(inputs);
        let mut scores = Vec::new();
        for (bi, b) in self.idx().blocks.iter().enumerate() {
            let mut y1 = vec![0.0; rows * d];
            layer_norm(&x, d, self.p(b.ln1_gain), self.p(b.ln1_bias), &mut y1);
            let (q, k, v) = self.qkv(b, &y1, rows);
            let mut o = vec![0.0; rows * d];
            for (r, cache) in caches.iter_mut().enumerate() {
                cache.keys[bi].extend_from_slice(&k[r * d..(r + 1) * d]);
                cache.values[bi].extend_from_slice(&v[r * d..(r + 1) * d]);
                let n_keys = cache.keys[bi].len() / d;
                self.attend_row(
                    &q[r * d..(r + 1) * d],
                    &cache.keys[bi],
                    &cache.values[bi],
                    n_keys,
                    &mut o[r * d..(r + 1) * d],
                    None,
                    &mut scores,
                );
            }
            self.block_tail(b, &mut x, &o, rows);
        }
        for cache in caches.iter_mut() {
            cache.len += 1;
        }
        let (_, _, logits) = self.heads_forward(&x, rows);
        Ok(self.expand(&logits, rows))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn add_rows(acc: &mut [f64], rows: &[f64]) {
    for r in rows.chunks_exact(acc.len()) {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
}

struct GradSink<'a> {
    idx: &'a ParamIndex,
    trainable: &'a [bool],
    grads: &'a mut [f64],
}

impl GradSink<'_> {
    fn slot(&mut self, id: TensorId) -> Option<&mut [f64]> {
        if !self.trainable[id] {
            return None;
        }
        Some(&mut self.grads[self.idx.tensors[id].range()])
    }

    /// Two distinct tensors at once (layer-norm gain and bias).
    fn pair(&mut self, a: TensorId, b: TensorId) -> (Option<&mut [f64]>, Option<&mut [f64]>) {
        let ra = self.idx.tensors[a].range();
        let rb = self.idx.tensors[b].range();
        assert!(ra.end <= rb.start, "pair expects tensors in layout order");
        let (lo, hi) = self.grads.split_at_mut(rb.start);
        let ga = self.trainable[a].then(|| &mut lo[ra]);
        let gb = self.trainable[b].then(|| &mut hi[..rb.end - rb.start]);
        (ga, gb)
    }
}

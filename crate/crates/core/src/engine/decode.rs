use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::{sample_logits, LayerRule, Sampling};
use super::sink::{Sink, StreamEvent};
use crate::config::KvConfig;
use crate::delay::{revert_delay, DelayPattern};
use crate::error::{Error, Result};
use crate::grid::{IdSpace, TokenGrid};
use crate::layout::InputLayout;
use crate::model::{HeadLogits, KvCache, Model, StepInput};
use crate::vocab::{Special, TokenClass, TokenId, VocabSpec, AUDIO_LAYERS, MODEL_LAYERS, TEXT_LAYER};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Parallel,
    BatchParallel,
}

impl DecodeMode {
    pub fn name(self) -> &'static str {
        match self {
            DecodeMode::Parallel => "parallel",
            DecodeMode::BatchParallel => "batch_parallel",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Output steps before the decode is cut off and flagged truncated.
    pub max_steps: usize,
    pub sampling: Sampling,
    /// Extra steps audio waits behind text.
    pub text_advance: usize,
    pub pattern: DelayPattern,
    pub mode: DecodeMode,
    pub seed: u64,
    /// Re-run the whole sequence every step instead of using the KV cache.
    /// Slow; exists as the oracle for the cached path.
    pub recompute: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 64,
            sampling: Sampling::Greedy,
            text_advance: 0,
            pattern: DelayPattern::default(),
            mode: DecodeMode::Parallel,
            seed: 0,
            recompute: false,
        }
    }
}

pub(crate) const DECODE_KEYS: &[&str] = &[
    "max_steps",
    "sampling",
    "top_k",
    "temperature",
    "text_advance",
    "pattern",
    "mode",
    "seed",
    "recompute",
];

impl DecodeConfig {
    pub fn to_kv(&self) -> KvConfig {
        let mut c = KvConfig::default();
        c.set("max_steps", self.max_steps);
        match self.sampling {
            Sampling::Greedy => c.set("sampling", "greedy"),
            Sampling::TopK { k, temperature } => {
                c.set("sampling", "top_k");
                c.set("top_k", k);
                c.set("temperature", temperature);
            }
        }
        c.set("text_advance", self.text_advance);
        let offs: Vec<String> = self.pattern.offsets().iter().map(usize::to_string).collect();
        c.set("pattern", offs.join(","));
        c.set("mode", self.mode.name());
        c.set("seed", self.seed);
        c.set("recompute", self.recompute);
        c
    }

    /// Reads a `decode.`-stripped section; absent keys keep their defaults.
    pub fn from_kv(c: &KvConfig) -> Result<Self> {
        if let Some(k) = c.unknown_keys(DECODE_KEYS).first() {
            return Err(Error::Config(format!("unknown decode key {k}")));
        }
        let d = Self::default();
        let sampling = match c.raw("sampling").unwrap_or("greedy") {
            "greedy" => Sampling::Greedy,
            "top_k" => Sampling::TopK {
                k: c.get_or("top_k", 8)?,
                temperature: c.get_or("temperature", 1.0)?,
            },
            other => return Err(Error::Config(format!("unknown sampling {other}"))),
        };
        let mode = match c.raw("mode").unwrap_or("parallel") {
            "parallel" => DecodeMode::Parallel,
            "batch" | "batch_parallel" => DecodeMode::BatchParallel,
            other => return Err(Error::Config(format!("unknown mode {other}"))),
        };
        Ok(Self {
            max_steps: c.get_or("max_steps", d.max_steps)?,
            sampling,
            text_advance: c.get_or("text_advance", d.text_advance)?,
            pattern: DelayPattern::for_model(c.get_list_or("pattern", d.pattern.offsets().to_vec())?)?,
            mode,
            seed: c.get_or("seed", d.seed)?,
            recompute: c.get_or("recompute", d.recompute)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mode: String,
    pub prefill_steps: usize,
    /// Output steps computed.
    pub steps: usize,
    pub first_text_step: Option<usize>,
    pub first_audio_step: Option<usize>,
    pub truncated: bool,
    pub prefill_seconds: f64,
    pub decode_seconds: f64,
    pub seconds_per_step: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    /// Undelayed 8 x T global ids, EOS tokens included.
    pub grid: TokenGrid,
    /// Delayed emission grid as produced step by step.
    pub raw: TokenGrid,
    pub report: LatencyReport,
}

impl DecodeOutput {
    /// Text tokens, without EOS.
    pub fn text(&self, spec: &VocabSpec) -> Vec<TokenId> {
        self.grid
            .row(TEXT_LAYER)
            .iter()
            .copied()
            .filter(|&t| t < spec.text_size())
            .collect()
    }

    /// Complete audio columns as a 7-layer codebook-local grid.
    pub fn audio(&self, spec: &VocabSpec) -> TokenGrid {
        let mut out = TokenGrid::filled(AUDIO_LAYERS, 0, 0, IdSpace::Local);
        for s in 0..self.grid.n_steps() {
            let col: Option<Vec<TokenId>> = (1..MODEL_LAYERS)
                .map(|l| match spec.classify(self.grid.get(l, s)) {
                    Ok(TokenClass::Audio { layer, index }) if layer == l => Some(index),
                    _ => None,
                })
                .collect();
            match col {
                Some(c) => out.push_column(&c),
                None => break,
            }
        }
        out
    }
}

/// Stream bookkeeping of one batch member.
#[derive(Clone, Debug)]
pub struct DecodeState {
    wants_text: bool,
    wants_audio: bool,
    offsets: Vec<usize>,
    /// Undelayed index of `EOS_TEXT`.
    text_eos: Option<usize>,
    /// Undelayed index of layer 1's `EOS_AUDIO`.
    audio_eos: Option<usize>,
    pad: TokenId,
    eos_text: TokenId,
    eos_audio: TokenId,
    /// Delayed emissions so far.
    raw: TokenGrid,
}

impl DecodeState {
    fn new(layout: &InputLayout, pattern: &DelayPattern, spec: &VocabSpec) -> Self {
        Self {
            wants_text: layout.wants_text(),
            wants_audio: layout.wants_audio(),
            offsets: pattern.offsets().to_vec(),
            text_eos: None,
            audio_eos: None,
            pad: spec.pad(),
            eos_text: spec.special(Special::EosText),
            eos_audio: spec.special(Special::EosAudio),
            raw: TokenGrid::filled(MODEL_LAYERS, 0, spec.pad(), IdSpace::Global),
        }
    }

    pub fn raw(&self) -> &TokenGrid {
        &self.raw
    }

    pub fn text_finished(&self) -> bool {
        !self.wants_text || self.text_eos.is_some()
    }

    /// Audio is finished once the last layer has flushed layer 1's EOS.
    pub fn audio_finished(&self, step: usize) -> bool {
        let last = self.offsets[1..].iter().copied().max().unwrap_or(0);
        !self.wants_audio || self.audio_eos.is_some_and(|e| step >= e + last)
    }

    /// Constraint for `layer` at decode `step`, given everything observed
    /// so far (including earlier layers of this step).
    ///
    /// Live cells never sample PAD: PAD is never a training target inside a
    /// stream. A stream cannot end on its very first token. Layers 2..=7 never
    /// sample `EOS_AUDIO`; it is placed in the column where layer 1 ended.
    pub fn rule(&self, layer: usize, step: usize) -> LayerRule {
        let off = self.offsets[layer];
        if step < off {
            return LayerRule::Force(self.pad);
        }
        let u = step - off;
        if layer == TEXT_LAYER {
            if !self.wants_text || self.text_eos.is_some() {
                return LayerRule::Force(self.pad);
            }
            let mut exclude = vec![self.pad];
            if u == 0 {
                exclude.push(self.eos_text);
            }
            return LayerRule::Sample { exclude };
        }
        if !self.wants_audio {
            return LayerRule::Force(self.pad);
        }
        match self.audio_eos {
            Some(e) if u == e => LayerRule::Force(self.eos_audio),
            Some(e) if u > e => LayerRule::Force(self.pad),
            _ => {
                let mut exclude = vec![self.pad];
                if layer != 1 || u == 0 {
                    exclude.push(self.eos_audio);
                }
                LayerRule::Sample { exclude }
            }
        }
    }

    fn observe(&mut self, layer: usize, step: usize, id: TokenId) {
        let u = step.saturating_sub(self.offsets[layer]);
        if layer == TEXT_LAYER && id == self.eos_text && self.text_eos.is_none() {
            self.text_eos = Some(u);
        }
        if layer == 1 && id == self.eos_audio && self.audio_eos.is_none() {
            self.audio_eos = Some(u);
        }
    }

    fn done(&self, step: usize) -> bool {
        self.text_finished() && self.audio_finished(step)
    }

    /// Undelayed grid of everything emitted; structural cells are PAD by
    /// construction so the revert cannot fail on engine output.
    fn finalize(&self) -> Result<TokenGrid> {
        let real = (0..MODEL_LAYERS)
            .map(|l| self.raw.row(l).iter().filter(|&&t| t != self.pad).count())
            .max()
            .unwrap_or(0);
        let maxoff = self.offsets.iter().copied().max().unwrap_or(0);
        let want = real + maxoff;
        let mut raw = if self.raw.n_steps() > want {
            self.raw.slice_steps(0..want)
        } else {
            self.raw.clone()
        };
        let pad_col = [self.pad; MODEL_LAYERS];
        while raw.n_steps() < want {
            raw.push_column(&pad_col);
        }
        revert_delay(&raw, &DelayPattern::new(self.offsets.clone())?, self.pad)
    }
}

/// One sequence being decoded: its input, cache and streams.
struct Member<'a> {
    layout: &'a InputLayout,
    cache: KvCache,
    history: Vec<StepInput>,
    state: DecodeState,
}

impl<'a> Member<'a> {
    fn new(model: &Model, layout: &'a InputLayout, pattern: &DelayPattern) -> Self {
        Self {
            layout,
            cache: model.new_cache(),
            history: Vec::new(),
            state: DecodeState::new(layout, pattern, model.vocab()),
        }
    }
}

/// Evaluates one new position for every member; returns each member's
/// logits at that position.
fn advance(model: &Model, members: &mut [&mut Member], inputs: Vec<StepInput>, recompute: bool) -> Result<Vec<HeadLogits>> {
    if recompute {
        let mut out = Vec::with_capacity(members.len());
        for (m, inp) in members.iter_mut().zip(inputs) {
            m.history.push(inp);
            let all = model.forward_inputs(&m.history)?;
            out.push(all.slice_steps(all.steps - 1..all.steps));
        }
        return Ok(out);
    }
    let mut caches: Vec<&mut KvCache> = members.iter_mut().map(|m| &mut m.cache).collect();
    let logits = model.step(&mut caches, &inputs)?;
    Ok((0..members.len()).map(|r| logits.slice_steps(r..r + 1)).collect())
}

/// Runs every input column of every member; returns logits for output
/// step 0.
fn prefill(model: &Model, members: &mut [&mut Member], recompute: bool) -> Result<Vec<HeadLogits>> {
    let t_in = members[0].layout.input_len();
    let max_in = model.config().max_input_len;
    let mut last = Vec::new();
    for p in 0..t_in {
        let inputs: Vec<StepInput> = members
            .iter()
            .map(|m| StepInput {
                ids: std::array::from_fn(|l| m.layout.input_ids.get(l, p)),
                feature: m.layout.features.as_ref().and_then(|f| f.at(p)).copied(),
                position: p + max_in - t_in,
            })
            .collect();
        if recompute && p + 1 < t_in {
            for (m, inp) in members.iter_mut().zip(inputs) {
                m.history.push(inp);
            }
            continue;
        }
        last = advance(model, members, inputs, recompute)?;
    }
    Ok(last)
}

fn check_common(model: &Model, layout: &InputLayout, cfg: &DecodeConfig) -> Result<DelayPattern> {
    if cfg.pattern.len() != MODEL_LAYERS {
        return Err(Error::Decode(format!(
            "pattern has {} layers, expected {MODEL_LAYERS}",
            cfg.pattern.len()
        )));
    }
    let t_in = layout.input_len();
    if t_in == 0 || t_in > model.config().max_input_len {
        return Err(Error::Overlength {
            len: t_in,
            max: model.config().max_input_len,
        });
    }
    Ok(cfg.pattern.with_text_advance(cfg.text_advance))
}

/// Emits the events that become available with the column just pushed.
fn emit(state: &DecodeState, step: usize, spec: &VocabSpec, report: &mut LatencyReport, sink: &mut dyn Sink) {
    let text = state.raw.get(TEXT_LAYER, step);
    if text < spec.text_size() {
        report.first_text_step.get_or_insert(step);
        sink.event(&StreamEvent::TextToken { step, id: text });
    }
    let last = state.offsets[1..].iter().copied().max().unwrap_or(0);
    if state.wants_audio && step >= last {
        let u = step - last;
        let tokens: [TokenId; AUDIO_LAYERS] = std::array::from_fn(|i| state.raw.get(i + 1, u + state.offsets[i + 1]));
        let complete = tokens
            .iter()
            .enumerate()
            .all(|(i, &t)| spec.layer_range(i + 1).contains(&t));
        if complete {
            report.first_audio_step.get_or_insert(step);
            sink.event(&StreamEvent::AudioColumn {
                step,
                column: u,
                tokens,
            });
        }
    }
}

fn next_input(model: &Model, layout: &InputLayout, step: usize, column: [TokenId; MODEL_LAYERS]) -> Result<StepInput> {
    let cfg = model.config();
    let position = cfg.max_input_len + step;
    if position >= cfg.max_seq_len {
        return Err(Error::Overlength {
            len: layout.input_len() + step + 1,
            max: cfg.max_seq_len,
        });
    }
    Ok(StepInput {
        ids: column,
        feature: None,
        position,
    })
}

/// Text-delay parallel decoding of one layout: every step fuses the previous
/// column, advances the model by one position and samples all eight heads
/// under the forcing rules of [`DecodeState::rule`].
pub fn decode_parallel(model: &Model, layout: &InputLayout, cfg: &DecodeConfig, sink: &mut dyn Sink) -> Result<DecodeOutput> {
    let pattern = check_common(model, layout, cfg)?;
    let spec = model.vocab().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = LatencyReport {
        mode: DecodeMode::Parallel.name().into(),
        prefill_steps: layout.input_len(),
        ..Default::default()
    };
    let t0 = Instant::now();
    let mut m = Member::new(model, layout, &pattern);
    sink.step_started(0);
    let mut logits = prefill(model, &mut [&mut m], cfg.recompute)?.remove(0);
    report.prefill_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();

    let mut step = 0;
    let mut truncated = true;
    while step < cfg.max_steps {
        let mut column = [spec.pad(); MODEL_LAYERS];
        for (l, slot) in column.iter_mut().enumerate() {
            *slot = match m.state.rule(l, step) {
                LayerRule::Force(id) => id,
                LayerRule::Sample { exclude } => sample_logits(logits.row(l, 0), &exclude, cfg.sampling, &mut rng)?,
            };
            m.state.observe(l, step, *slot);
        }
        m.state.raw.push_column(&column);
        emit(&m.state, step, &spec, &mut report, sink);
        step += 1;
        if m.state.done(step - 1) {
            truncated = false;
            break;
        }
        if step == cfg.max_steps {
            break;
        }
        let input = match next_input(model, layout, step - 1, column) {
            Ok(i) => i,
            Err(Error::Overlength { .. }) => break,
            Err(e) => return Err(e),
        };
        sink.step_started(step);
        logits = advance(model, &mut [&mut m], vec![input], cfg.recompute)?.remove(0);
    }
    finish(&m.state, step, truncated, t1, report, sink)
}

fn finish(
    state: &DecodeState,
    steps: usize,
    truncated: bool,
    t1: Instant,
    mut report: LatencyReport,
    sink: &mut dyn Sink,
) -> Result<DecodeOutput> {
    report.steps = steps;
    report.truncated = truncated;
    report.decode_seconds = t1.elapsed().as_secs_f64();
    report.seconds_per_step = if steps > 0 {
        report.decode_seconds / steps as f64
    } else {
        0.0
    };
    sink.event(&StreamEvent::Done {
        step: steps.saturating_sub(1),
        truncated,
    });
    Ok(DecodeOutput {
        grid: state.finalize()?,
        raw: state.raw.clone(),
        report,
    })
}

/// Batch-of-two decoding. Member A is `layout`; member B is its text-only
/// variant. Each step B's text head picks the text token; A's text head is
/// never consulted, B's token is written into A's column (so A's next input
/// and the emitted stream carry it), and A's audio heads sample as usual.
/// B leaves the batch once its text has ended.
pub fn decode_batch_parallel(
    model: &Model,
    layout: &InputLayout,
    cfg: &DecodeConfig,
    sink: &mut dyn Sink,
) -> Result<DecodeOutput> {
    let pattern = check_common(model, layout, cfg)?;
    let spec = model.vocab().clone();
    let text_only = layout.text_only_variant(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = LatencyReport {
        mode: DecodeMode::BatchParallel.name().into(),
        prefill_steps: layout.input_len(),
        ..Default::default()
    };
    let t0 = Instant::now();
    let mut a = Member::new(model, layout, &pattern);
    let mut b = Member::new(model, &text_only, &pattern);
    sink.step_started(0);
    let mut logits = prefill(model, &mut [&mut a, &mut b], cfg.recompute)?;
    report.prefill_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();

    let mut b_alive = true;
    let mut step = 0;
    let mut truncated = true;
    while step < cfg.max_steps {
        let text = if b_alive {
            let id = match b.state.rule(TEXT_LAYER, step) {
                LayerRule::Force(id) => id,
                LayerRule::Sample { exclude } => {
                    sample_logits(logits[1].row(TEXT_LAYER, 0), &exclude, cfg.sampling, &mut rng)?
                }
            };
            b.state.observe(TEXT_LAYER, step, id);
            id
        } else {
            spec.pad()
        };
        let mut column = [spec.pad(); MODEL_LAYERS];
        column[TEXT_LAYER] = text;
        a.state.observe(TEXT_LAYER, step, text);
        for (l, slot) in column.iter_mut().enumerate().skip(1) {
            *slot = match a.state.rule(l, step) {
                LayerRule::Force(id) => id,
                LayerRule::Sample { exclude } => sample_logits(logits[0].row(l, 0), &exclude, cfg.sampling, &mut rng)?,
            };
            a.state.observe(l, step, *slot);
        }
        a.state.raw.push_column(&column);
        let mut b_column = [spec.pad(); MODEL_LAYERS];
        b_column[TEXT_LAYER] = text;
        if b_alive {
            b.state.raw.push_column(&b_column);
        }
        emit(&a.state, step, &spec, &mut report, sink);
        step += 1;
        if a.state.done(step - 1) {
            truncated = false;
            break;
        }
        if step == cfg.max_steps {
            break;
        }
        let input_a = match next_input(model, layout, step - 1, column) {
            Ok(i) => i,
            Err(Error::Overlength { .. }) => break,
            Err(e) => return Err(e),
        };
        b_alive = b_alive && !b.state.text_finished();
        sink.step_started(step);
        logits = if b_alive {
            let input_b = next_input(model, &text_only, step - 1, b_column)?;
            advance(model, &mut [&mut a, &mut b], vec![input_a, input_b], cfg.recompute)?
        } else {
            advance(model, &mut [&mut a], vec![input_a], cfg.recompute)?
        };
    }
    finish(&a.state, step, truncated, t1, report, sink)
}

/// Dispatches on `cfg.mode`.
pub fn decode(model: &Model, layout: &InputLayout, cfg: &DecodeConfig, sink: &mut dyn Sink) -> Result<DecodeOutput> {
    match cfg.mode {
        DecodeMode::Parallel => decode_parallel(model, layout, cfg, sink),
        DecodeMode::BatchParallel => decode_batch_parallel(model, layout, cfg, sink),
    }
}

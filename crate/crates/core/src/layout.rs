//! Task-specific arrangement of the eight parallel input sequences and the
//! delayed target grid the model is trained to produce.
//!
//! Input region, one column per step:
//!
//! ```text
//!            start        payload (right aligned)     answer
//! text       BOS          PAD .. PAD t0 t1 .. tn      ANSWER_TEXT | PAD
//! layer l    MARK | PAD   a0 a1 ..              am    ANSWER_AUDIO | PAD
//! ```
//!
//! The output region follows the answer column. Its targets are the text
//! answer plus `EOS_TEXT` on layer 0 and the codec tokens plus `EOS_AUDIO` on
//! layers 1..=7, shifted by the delay pattern.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{encode_signal, CodecConfig, Signal};
use crate::delay::{apply_delay, DelayPattern};
use crate::error::{Error, Result};
use crate::grid::{IdSpace, TokenGrid};
use crate::vocab::{Special, TokenId, VocabSpec, AUDIO_LAYERS, MODEL_LAYERS, TEXT_LAYER};

/// Dimension of one synthetic encoder feature frame: the normalized sample
/// plus its seven normalized codec digits.
pub const FEATURE_DIM: usize = 1 + AUDIO_LAYERS;

/// Modality signature of a training task (`A`/`T` = audio/text, `1` = input,
/// `2` = output).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// A1|T1
    Asr,
    /// T1|A1
    Tts,
    /// T1|T2
    TextQa,
    /// A1|T2
    AudioQaTextOut,
    /// A1|T1|A2|T2
    AudioQaFull,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Asr,
        TaskKind::Tts,
        TaskKind::TextQa,
        TaskKind::AudioQaTextOut,
        TaskKind::AudioQaFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Asr => "asr",
            TaskKind::Tts => "tts",
            TaskKind::TextQa => "text_qa",
            TaskKind::AudioQaTextOut => "audio_qa_text_out",
            TaskKind::AudioQaFull => "audio_qa_full",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == name || t.modality() == name)
            .ok_or_else(|| Error::Layout(format!("unknown task {name:?}")))
    }

    pub fn modality(self) -> &'static str {
        match self {
            TaskKind::Asr => "A1|T1",
            TaskKind::Tts => "T1|A1",
            TaskKind::TextQa => "T1|T2",
            TaskKind::AudioQaTextOut => "A1|T2",
            TaskKind::AudioQaFull => "A1|T1|A2|T2",
        }
    }

    pub fn text_input(self) -> bool {
        matches!(self, TaskKind::Tts | TaskKind::TextQa)
    }

    pub fn audio_input(self) -> bool {
        !self.text_input()
    }

    pub fn text_output(self) -> bool {
        !matches!(self, TaskKind::Tts)
    }

    pub fn audio_output(self) -> bool {
        matches!(self, TaskKind::Tts | TaskKind::AudioQaFull)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One corpus line. Signals are stored raw; token grids are always derived.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub task: TaskKind,
    #[serde(default)]
    pub text_in: Vec<TokenId>,
    #[serde(default)]
    pub signal_in: Signal,
    #[serde(default)]
    pub text_out: Vec<TokenId>,
    #[serde(default)]
    pub signal_out: Signal,
}

impl TrainingExample {
    /// Max of the text and audio output lengths.
    pub fn n_tokens(&self) -> usize {
        self.text_out.len().max(self.signal_out.len())
    }

    /// Checks payload presence against the task and ids/samples against the
    /// vocabulary.
    pub fn validate(&self, spec: &VocabSpec) -> Result<()> {
        let task = self.task;
        let check = |present: bool, allowed: bool, what: &str| -> Result<()> {
            match (present, allowed) {
                (false, true) => Err(Error::Layout(format!("{task}: missing {what}"))),
                (true, false) => Err(Error::Layout(format!("{task}: {what} not allowed"))),
                _ => Ok(()),
            }
        };
        check(!self.text_in.is_empty(), task.text_input(), "text input")?;
        check(!self.signal_in.is_empty(), task.audio_input(), "audio input")?;
        check(!self.text_out.is_empty(), task.text_output(), "text output")?;
        check(!self.signal_out.is_empty(), task.audio_output(), "audio output")?;
        if let Some(&bad) = self
            .text_in
            .iter()
            .chain(&self.text_out)
            .find(|&&t| t >= spec.text_size())
        {
            return Err(Error::Layout(format!("text id {bad} outside text vocabulary")));
        }
        let codec = codec_for(spec)?;
        for s in [&self.signal_in, &self.signal_out] {
            if let Some((step, &value)) = s.samples.iter().enumerate().find(|(_, &v)| v >= codec.sample_limit()) {
                return Err(Error::SampleOutOfRange {
                    step,
                    value,
                    limit: codec.sample_limit(),
                });
            }
        }
        Ok(())
    }
}

/// A set of training examples sharing one vocabulary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub examples: Vec<TrainingExample>,
}

impl Corpus {
    pub fn new(examples: Vec<TrainingExample>) -> Self {
        Self { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn validate(&self, spec: &VocabSpec) -> Result<()> {
        for (i, ex) in self.examples.iter().enumerate() {
            ex.validate(spec)
                .map_err(|e| Error::Layout(format!("example {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn filter_tasks(&self, tasks: &[TaskKind]) -> Corpus {
        Corpus::new(
            self.examples
                .iter()
                .filter(|e| tasks.contains(&e.task))
                .cloned()
                .collect(),
        )
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(&mut w, ex)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut examples = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("corpus line {}: {e}", i + 1)))?;
            examples.push(ex);
        }
        Ok(Self { examples })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Codec paired with a vocabulary; every audio layer must share one size.
pub fn codec_for(spec: &VocabSpec) -> Result<CodecConfig> {
    let sizes = spec.audio_layer_sizes();
    if sizes.iter().any(|&s| s != sizes[0]) {
        return Err(Error::Config(format!(
            "codec needs equal audio layer sizes, got {sizes:?}"
        )));
    }
    CodecConfig::new(sizes[0])
}

/// Codec grid in global vocabulary ids (7 layers).
pub fn audio_tokens(signal: &Signal, spec: &VocabSpec) -> Result<TokenGrid> {
    let codec = codec_for(spec)?;
    let mut grid = encode_signal(signal, &codec)?;
    for layer in 1..=AUDIO_LAYERS {
        let start = spec.audio_range(layer).start;
        for t in grid.row_mut(layer - 1) {
            *t += start;
        }
    }
    Ok(grid.with_id_space(IdSpace::Global))
}

/// Synthetic encoder features: the normalized sample followed by its seven
/// digits, all scaled to `[-1, 1]`.
pub fn feature_frames(signal: &Signal, codec: &CodecConfig) -> Vec<[f64; FEATURE_DIM]> {
    let limit = codec.sample_limit() as f64;
    let b = codec.base() as u64;
    signal
        .samples
        .iter()
        .map(|&s| {
            let mut f = [0.0; FEATURE_DIM];
            f[0] = 2.0 * s as f64 / (limit - 1.0) - 1.0;
            let mut rest = s;
            for layer in (1..=AUDIO_LAYERS).rev() {
                f[layer] = 2.0 * (rest % b) as f64 / (b - 1) as f64 - 1.0;
                rest /= b;
            }
            f
        })
        .collect()
}

/// Feature frames aligned to consecutive input positions starting at `start`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrack {
    pub start: usize,
    pub frames: Vec<[f64; FEATURE_DIM]>,
}

impl FeatureTrack {
    pub fn at(&self, position: usize) -> Option<&[f64; FEATURE_DIM]> {
        position
            .checked_sub(self.start)
            .and_then(|i| self.frames.get(i))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputLayout {
    pub task: TaskKind,
    /// 8 x T_in, global ids.
    pub input_ids: TokenGrid,
    pub features: Option<FeatureTrack>,
    /// Position of the `ANSWER_*` token on each layer, if any.
    pub answer_positions: [Option<usize>; MODEL_LAYERS],
    /// 8 x T_out delayed targets, global ids.
    pub target_ids: TokenGrid,
    /// Layer-major, same shape as `target_ids`.
    pub loss_mask: Vec<bool>,
    /// Effective pattern including the text advance.
    pub pattern: DelayPattern,
}

impl InputLayout {
    pub fn input_len(&self) -> usize {
        self.input_ids.n_steps()
    }

    pub fn output_len(&self) -> usize {
        self.target_ids.n_steps()
    }

    pub fn mask(&self, layer: usize, step: usize) -> bool {
        self.loss_mask[layer * self.target_ids.n_steps() + step]
    }

    pub fn mask_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    pub fn wants_text(&self) -> bool {
        self.answer_positions[TEXT_LAYER].is_some()
    }

    pub fn wants_audio(&self) -> bool {
        self.answer_positions[1..].iter().any(Option::is_some)
    }

    /// Same input, but asking only for a text answer: `ANSWER_AUDIO` markers
    /// are replaced by PAD and audio targets are dropped from the loss.
    pub fn text_only_variant(&self, spec: &VocabSpec) -> InputLayout {
        let pad = spec.pad();
        let mut out = self.clone();
        if let TaskKind::AudioQaFull = self.task {
            out.task = TaskKind::AudioQaTextOut;
        }
        for layer in 1..MODEL_LAYERS {
            if let Some(p) = out.answer_positions[layer].take() {
                out.input_ids.set(layer, p, pad);
            }
        }
        let steps = out.target_ids.n_steps();
        for layer in 1..MODEL_LAYERS {
            out.target_ids.row_mut(layer).fill(pad);
            out.loss_mask[layer * steps..(layer + 1) * steps].fill(false);
        }
        out
    }
}

/// Arranges one example into input sequences, delayed targets and a loss mask.
pub fn build_layout(
    ex: &TrainingExample,
    spec: &VocabSpec,
    pattern: &DelayPattern,
    text_advance: usize,
) -> Result<InputLayout> {
    if pattern.len() != MODEL_LAYERS {
        return Err(Error::Config(format!(
            "delay pattern has {} layers, expected {MODEL_LAYERS}",
            pattern.len()
        )));
    }
    ex.validate(spec)?;
    let pad = spec.pad();
    let task = ex.task;
    let (input, features, answer_positions) = input_region(task, &ex.text_in, &ex.signal_in, spec)?;

    // Undelayed targets: payload followed by the layer's EOS.
    let text_len = task.text_output().then(|| ex.text_out.len() + 1);
    let audio_len = task.audio_output().then(|| ex.signal_out.len() + 1);
    let t_u = text_len.unwrap_or(0).max(audio_len.unwrap_or(0));
    let mut undelayed = TokenGrid::filled(MODEL_LAYERS, t_u, pad, IdSpace::Global);
    let mut real_len = [0usize; MODEL_LAYERS];
    if let Some(n) = text_len {
        let row = undelayed.row_mut(TEXT_LAYER);
        row[..n - 1].copy_from_slice(&ex.text_out);
        row[n - 1] = spec.special(Special::EosText);
        real_len[TEXT_LAYER] = n;
    }
    if let Some(n) = audio_len {
        let audio = audio_tokens(&ex.signal_out, spec)?;
        for layer in 1..MODEL_LAYERS {
            let row = undelayed.row_mut(layer);
            row[..n - 1].copy_from_slice(audio.row(layer - 1));
            row[n - 1] = spec.special(Special::EosAudio);
            real_len[layer] = n;
        }
    }

    let effective = pattern.with_text_advance(text_advance);
    let target_ids = apply_delay(&undelayed, &effective, pad)?;
    let steps = target_ids.n_steps();
    let mut loss_mask = vec![false; MODEL_LAYERS * steps];
    for (layer, &off) in effective.offsets().iter().enumerate() {
        loss_mask[layer * steps + off..layer * steps + off + real_len[layer]].fill(true);
    }

    Ok(InputLayout {
        task,
        input_ids: input,
        features,
        answer_positions,
        target_ids,
        loss_mask,
        pattern: effective,
    })
}

/// Input columns, feature track and answer positions for a prompt.
fn input_region(
    task: TaskKind,
    text_in: &[TokenId],
    signal_in: &Signal,
    spec: &VocabSpec,
) -> Result<(TokenGrid, Option<FeatureTrack>, [Option<usize>; MODEL_LAYERS])> {
    let codec = codec_for(spec)?;
    let pad = spec.pad();
    let audio_in = if task.audio_input() {
        Some(audio_tokens(signal_in, spec)?)
    } else {
        None
    };
    let payload = text_in.len().max(signal_in.len());
    let t_in = payload + 2;
    let mut input = TokenGrid::filled(MODEL_LAYERS, t_in, pad, IdSpace::Global);

    input.set(TEXT_LAYER, 0, spec.special(Special::Bos));
    let text_start = 1 + payload - text_in.len();
    input.row_mut(TEXT_LAYER)[text_start..text_start + text_in.len()].copy_from_slice(text_in);

    let mut features = None;
    if let Some(audio) = &audio_in {
        let start = 1 + payload - audio.n_steps();
        for layer in 1..MODEL_LAYERS {
            input.set(layer, 0, spec.special(Special::InputAudioMark));
            input.row_mut(layer)[start..start + audio.n_steps()].copy_from_slice(audio.row(layer - 1));
        }
        features = Some(FeatureTrack {
            start,
            frames: feature_frames(signal_in, &codec),
        });
    }

    let mut answer_positions = [None; MODEL_LAYERS];
    let last = t_in - 1;
    if task.text_output() {
        input.set(TEXT_LAYER, last, spec.special(Special::AnswerText));
        answer_positions[TEXT_LAYER] = Some(last);
    }
    if task.audio_output() {
        for layer in 1..MODEL_LAYERS {
            input.set(layer, last, spec.special(Special::AnswerAudio));
            answer_positions[layer] = Some(last);
        }
    }
    Ok((input, features, answer_positions))
}

/// Layout of a prompt alone, for decoding: the input region of
/// [`build_layout`] with an empty target grid.
pub fn build_prompt(
    task: TaskKind,
    text_in: &[TokenId],
    signal_in: &Signal,
    spec: &VocabSpec,
    pattern: &DelayPattern,
    text_advance: usize,
) -> Result<InputLayout> {
    let probe = TrainingExample {
        task,
        text_in: text_in.to_vec(),
        signal_in: signal_in.clone(),
        text_out: if task.text_output() { vec![0] } else { Vec::new() },
        signal_out: Signal::new(if task.audio_output() { vec![0] } else { Vec::new() }),
    };
    probe.validate(spec)?;
    if pattern.len() != MODEL_LAYERS {
        return Err(Error::Config(format!(
            "delay pattern has {} layers, expected {MODEL_LAYERS}",
            pattern.len()
        )));
    }
    let (input_ids, features, answer_positions) = input_region(task, text_in, signal_in, spec)?;
    Ok(InputLayout {
        task,
        input_ids,
        features,
        answer_positions,
        target_ids: TokenGrid::filled(MODEL_LAYERS, 0, spec.pad(), IdSpace::Global),
        loss_mask: Vec::new(),
        pattern: pattern.with_text_advance(text_advance),
    })
}

/// One broken layout invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub layer: usize,
    pub step: usize,
    pub rule: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {} step {}: {}", self.layer, self.step, self.rule)
    }
}

/// Every broken invariant of `layout`; empty when the layout is well formed.
pub fn validate_layout(layout: &InputLayout, spec: &VocabSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let v = |layer, step, rule| Violation { layer, step, rule };
    let input = &layout.input_ids;
    let target = &layout.target_ids;
    if input.n_layers() != MODEL_LAYERS {
        out.push(v(input.n_layers(), 0, "input grid must have 8 layers"));
        return out;
    }
    if target.n_layers() != MODEL_LAYERS {
        out.push(v(target.n_layers(), 0, "target grid must have 8 layers"));
        return out;
    }
    if layout.loss_mask.len() != MODEL_LAYERS * target.n_steps() {
        out.push(v(0, 0, "loss mask shape differs from target grid"));
        return out;
    }
    if layout.pattern.len() != MODEL_LAYERS {
        out.push(v(0, 0, "delay pattern must have 8 offsets"));
        return out;
    }
    for layer in 0..MODEL_LAYERS {
        for step in 0..input.n_steps() {
            if !spec.is_input_legal(layer, input.get(layer, step)) {
                out.push(v(layer, step, "input id not valid for layer"));
            }
        }
        if let Some(p) = layout.answer_positions[layer] {
            let want = if layer == TEXT_LAYER {
                Special::AnswerText
            } else {
                Special::AnswerAudio
            };
            if p >= input.n_steps() || input.get(layer, p) != spec.special(want) {
                out.push(v(layer, p, "answer position does not hold the answer token"));
            }
        }
    }
    let pad = spec.pad();
    let max = layout.pattern.max_offset();
    let Some(t_u) = target.n_steps().checked_sub(max) else {
        out.push(v(0, 0, "target grid shorter than pattern offset"));
        return out;
    };
    for (layer, &off) in layout.pattern.offsets().iter().enumerate() {
        for step in 0..target.n_steps() {
            let id = target.get(layer, step);
            let structural = step < off || step >= off + t_u;
            let masked = layout.mask(layer, step);
            if structural && id != pad {
                out.push(v(layer, step, "non-pad token in structural pad cell"));
            }
            if structural && masked {
                out.push(v(layer, step, "loss mask set on structural pad"));
            }
            if !structural && masked && (id == pad || !spec.is_head_legal(layer, id)) {
                out.push(v(layer, step, "masked target not valid for layer"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::revert_delay;

    fn spec() -> VocabSpec {
        VocabSpec::uniform(10, 8).unwrap()
    }

    fn text_qa() -> TrainingExample {
        TrainingExample {
            task: TaskKind::TextQa,
            text_in: vec![5, 6],
            signal_in: Signal::default(),
            text_out: vec![7],
            signal_out: Signal::default(),
        }
    }

    #[test]
    fn text_qa_fixture() {
        let s = spec();
        let lay = build_layout(&text_qa(), &s, &DelayPattern::default(), 0).unwrap();
        let bos = s.special(Special::Bos);
        let ans = s.special(Special::AnswerText);
        assert_eq!(lay.input_ids.row(0), &[bos, 5, 6, ans]);
        for l in 1..8 {
            assert!(lay.input_ids.row(l).iter().all(|&t| t == s.pad()));
        }
        assert_eq!(&lay.target_ids.row(0)[..2], &[7, s.special(Special::EosText)]);
        assert_eq!(lay.output_len(), 2 + 7);
        for l in 1..8 {
            assert!((0..lay.output_len()).all(|t| !lay.mask(l, t)));
        }
        assert_eq!(lay.mask_count(), 2);
        assert!(validate_layout(&lay, &s).is_empty());
        assert!(lay.features.is_none());
    }

    #[test]
    fn audio_qa_full_fixture() {
        let s = spec();
        let ex = TrainingExample {
            task: TaskKind::AudioQaFull,
            text_in: vec![],
            signal_in: Signal::new(vec![4096, 4097, 4098]),
            text_out: vec![3, 4],
            signal_out: Signal::new(vec![1, 2, 3, 4, 5]),
        };
        let lay = build_layout(&ex, &s, &DelayPattern::default(), 0).unwrap();
        assert_eq!(lay.answer_positions, [Some(4); 8]);
        assert_eq!(lay.input_ids.get(0, 4), s.special(Special::AnswerText));
        assert_eq!(lay.input_ids.get(3, 4), s.special(Special::AnswerAudio));
        assert_eq!(lay.input_ids.get(1, 0), s.special(Special::InputAudioMark));
        for l in 0..8 {
            let want = if l == 0 { 3 } else { 6 };
            let got = (0..lay.output_len()).filter(|&t| lay.mask(l, t)).count();
            assert_eq!(got, want, "layer {l}");
        }
        assert_eq!(lay.output_len(), 6 + 7);
        assert!(validate_layout(&lay, &s).is_empty());
        assert_eq!(lay.features.as_ref().unwrap().start, 1);

        let reverted = revert_delay(&lay.target_ids, &lay.pattern, s.pad()).unwrap();
        let audio = audio_tokens(&ex.signal_out, &s).unwrap();
        assert_eq!(&reverted.row(1)[..5], audio.row(0));
        assert_eq!(reverted.get(7, 5), s.special(Special::EosAudio));
    }

    #[test]
    fn missing_or_forbidden_payloads() {
        let s = spec();
        let asr = TrainingExample {
            task: TaskKind::Asr,
            text_in: vec![],
            signal_in: Signal::default(),
            text_out: vec![1],
            signal_out: Signal::default(),
        };
        assert!(build_layout(&asr, &s, &DelayPattern::default(), 0).is_err());
        let mut bad = text_qa();
        bad.signal_out = Signal::new(vec![1]);
        assert!(build_layout(&bad, &s, &DelayPattern::default(), 0).is_err());
    }

    #[test]
    fn validator_flags_constructed_faults() {
        let s = spec();
        let mut lay = build_layout(&text_qa(), &s, &DelayPattern::default(), 0).unwrap();
        lay.input_ids.set(0, 1, s.audio_range(2).start);
        assert_eq!(validate_layout(&lay, &s).len(), 1);

        let mut lay = build_layout(&text_qa(), &s, &DelayPattern::default(), 0).unwrap();
        let steps = lay.output_len();
        lay.loss_mask[7 * steps] = true;
        let v = validate_layout(&lay, &s);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, "loss mask set on structural pad");
    }

    #[test]
    fn text_advance_lengthens_targets() {
        let s = spec();
        let ex = TrainingExample {
            task: TaskKind::Tts,
            text_in: vec![1, 2],
            signal_in: Signal::default(),
            text_out: vec![],
            signal_out: Signal::new(vec![9; 8]),
        };
        let a = build_layout(&ex, &s, &DelayPattern::default(), 0).unwrap();
        let b = build_layout(&ex, &s, &DelayPattern::default(), 3).unwrap();
        assert_eq!(b.output_len(), a.output_len() + 3);
        assert!(!b.mask(1, 3) && b.mask(1, 4));
        assert!(validate_layout(&b, &s).is_empty());
    }

    #[test]
    fn text_only_variant_drops_audio() {
        let s = spec();
        let ex = TrainingExample {
            task: TaskKind::AudioQaFull,
            text_in: vec![],
            signal_in: Signal::new(vec![4096; 4]),
            text_out: vec![3],
            signal_out: Signal::new(vec![4096; 4]),
        };
        let full = build_layout(&ex, &s, &DelayPattern::default(), 0).unwrap();
        let txt = full.text_only_variant(&s);
        assert!(txt.wants_text() && !txt.wants_audio());
        assert_eq!(txt.task, TaskKind::AudioQaTextOut);
        assert_eq!(txt.input_ids.get(4, 5), s.pad());
        assert_eq!(txt.mask_count(), 2);
        assert!(validate_layout(&txt, &s).is_empty());
    }

    #[test]
    fn jsonl_roundtrip() {
        let c = Corpus::new(vec![text_qa()]);
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert!(line.contains("\"task\":\"text_qa\""));
        assert!(line.contains("\"signal_in\":[]"));
        assert_eq!(Corpus::read_jsonl(&buf[..]).unwrap(), c);
    }

    #[test]
    fn feature_frames_are_scaled() {
        let codec = CodecConfig::new(8).unwrap();
        let f = feature_frames(&Signal::new(vec![0, 2_097_151]), &codec);
        assert_eq!(f[0], [-1.0; FEATURE_DIM]);
        assert_eq!(f[1], [1.0; FEATURE_DIM]);
    }
}

//! Whole-run operations behind the command line: corpus generation, staged
//! training, decoding to files, benchmarking and file inspection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{run_bench, BenchReport};
use crate::codec::{decode_grid, Signal};
use crate::config::KvConfig;
use crate::engine::{decode, DecodeConfig, DecodeOutput, GridCaptureSink, Sink, StreamEvent, Tee, TextLineSink};
use crate::error::{Error, Result};
use crate::grammar::{gen_data, Grammar};
use crate::grid::{TokenGrid, GRID_MAGIC};
use crate::layout::{build_prompt, codec_for, Corpus, InputLayout, TaskKind};
use crate::model::checkpoint::CHECKPOINT_MAGIC;
use crate::model::{train_stage, Checkpoint, Model, ModelConfig, ParamGroup, StageMetrics, StagePlan, TrainConfig};
use crate::vocab::TokenClass;

/// Everything a run depends on besides the corpus file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    /// Examples produced by `gen-data`.
    pub data_count: usize,
    pub data_seed: u64,
}

const DATA_KEYS: &[&str] = &["count", "seed"];

impl RunConfig {
    pub fn to_kv(&self) -> KvConfig {
        let mut c = KvConfig::default();
        c.merge_prefixed("model.", &self.model.to_kv());
        c.merge_prefixed("train.", &self.train.to_kv());
        c.merge_prefixed("decode.", &self.decode.to_kv());
        c.set("data.count", self.data_count);
        c.set("data.seed", self.data_seed);
        c
    }

    pub fn from_kv(c: &KvConfig) -> Result<Self> {
        let known = ["model.", "train.", "decode.", "data."];
        if let Some(k) = c
            .unknown_keys(&[])
            .into_iter()
            .find(|k| !known.iter().any(|p| k.starts_with(p)))
        {
            return Err(Error::Config(format!("key {k} has no known section prefix")));
        }
        let data = c.section("data.");
        if let Some(k) = data.unknown_keys(DATA_KEYS).first() {
            return Err(Error::Config(format!("unknown data key {k}")));
        }
        Ok(Self {
            model: ModelConfig::from_kv(&c.section("model."))?,
            train: TrainConfig::from_kv(&c.section("train."))?,
            decode: DecodeConfig::from_kv(&c.section("decode."))?,
            data_count: data.get_or("count", 2000)?,
            data_seed: data.get_or("seed", 0)?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvConfig::load(path)?)
    }
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<Corpus> {
    let grammar = Grammar::for_vocab(&cfg.model.vocab)?;
    let corpus = gen_data(&grammar, &cfg.model.vocab, cfg.data_count, cfg.data_seed)?;
    corpus.save(out)?;
    Ok(corpus)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageSelect {
    One(u8),
    All,
}

impl std::str::FromStr for StageSelect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(StageSelect::All),
            "1" | "2" | "3" => Ok(StageSelect::One(s.parse().expect("digit"))),
            _ => Err(Error::Config(format!("stage must be 1, 2, 3 or all, got {s:?}"))),
        }
    }
}

pub fn checkpoint_path(dir: &Path, stage: u8) -> PathBuf {
    dir.join(format!("stage{stage}.omnp"))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stages: Vec<StageMetrics>,
}

/// Runs the selected stages, writing `stage{n}.omnp` after each and
/// `metrics.json` (all stages run so far in `dir`) at the end. A single stage
/// above 1 resumes from the previous stage's checkpoint in `dir`.
pub fn cmd_train(
    cfg: &RunConfig,
    corpus: &Corpus,
    dir: &Path,
    select: StageSelect,
    mut progress: impl FnMut(&StageMetrics),
) -> Result<TrainReport> {
    std::fs::create_dir_all(dir)?;
    let stages: Vec<u8> = match select {
        StageSelect::All => vec![1, 2, 3],
        StageSelect::One(s) => vec![s],
    };
    let mut model = if stages[0] == 1 {
        Model::new(cfg.model.clone())?
    } else {
        let prev = checkpoint_path(dir, stages[0] - 1);
        if !prev.exists() {
            return Err(Error::Training(format!(
                "stage {} resumes from {}, which does not exist",
                stages[0],
                prev.display()
            )));
        }
        Checkpoint::load(&prev)?.into_model()?
    };
    std::fs::write(dir.join("run.cfg"), cfg.to_kv().to_text())?;

    let metrics_path = dir.join("metrics.json");
    let mut report: TrainReport = if metrics_path.exists() && stages[0] != 1 {
        serde_json::from_str(&std::fs::read_to_string(&metrics_path)?)?
    } else {
        TrainReport::default()
    };
    for stage in stages {
        let plan = StagePlan::standard(stage)?;
        let m = train_stage(&mut model, &plan, corpus, &cfg.train)?;
        Checkpoint::from_model(&model, stage).save(checkpoint_path(dir, stage))?;
        progress(&m);
        report.stages.retain(|s| s.stage != stage);
        report.stages.push(m);
    }
    report.stages.sort_by_key(|s| s.stage);
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// A decode prompt: a task and its text. Audio-input tasks hear the text
/// through the grammar's synthesizer.
pub fn prompt_layout(model: &Model, task: TaskKind, text: &str, cfg: &DecodeConfig) -> Result<InputLayout> {
    let spec = model.vocab();
    let grammar = Grammar::for_vocab(spec)?;
    let tokens = grammar.parse(text)?;
    if tokens.is_empty() {
        return Err(Error::Config("empty prompt".into()));
    }
    let (text_in, signal_in) = if task.audio_input() {
        (Vec::new(), grammar.synthesize(&tokens))
    } else {
        (tokens, Signal::default())
    };
    build_prompt(task, &text_in, &signal_in, spec, &cfg.pattern, cfg.text_advance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeMeta {
    pub task: TaskKind,
    pub prompt: String,
    pub text: String,
    pub audio_columns: usize,
    pub report: crate::engine::LatencyReport,
}

/// Decoded audio samples as `step value` lines.
pub fn signal_dump(signal: &Signal) -> String {
    let mut s = String::new();
    for (i, v) in signal.samples.iter().enumerate() {
        writeln!(s, "{i} {v}").expect("writing to a String cannot fail");
    }
    s
}

pub struct DecodeFiles<'a> {
    /// Undelayed 8-layer output grid.
    pub grid: Option<&'a Path>,
    /// Grid of the streamed audio columns, as captured by the sink.
    pub stream_grid: Option<&'a Path>,
    pub signal: Option<&'a Path>,
    pub meta: Option<&'a Path>,
}

/// Decodes a prompt, streaming its text through `out` as it arrives.
pub fn cmd_decode<W: Write>(
    model: &Model,
    task: TaskKind,
    prompt: &str,
    cfg: &DecodeConfig,
    out: W,
    files: &DecodeFiles,
) -> Result<(DecodeOutput, DecodeMeta)> {
    let spec = model.vocab().clone();
    let grammar = Grammar::for_vocab(&spec)?;
    let layout = prompt_layout(model, task, prompt, cfg)?;
    let mut text_sink = TextLineSink::new(out, |id| grammar.token_name(id));
    let mut capture = GridCaptureSink::default();
    let result = {
        let mut tee = Tee(&mut text_sink, &mut capture);
        decode(model, &layout, cfg, &mut tee as &mut dyn Sink)?
    };
    if let Some(e) = text_sink.error.take() {
        return Err(e.into());
    }
    let audio = result.audio(&spec);
    let signal = decode_grid(&audio, &codec_for(&spec)?)?;
    let meta = DecodeMeta {
        task,
        prompt: prompt.to_string(),
        text: grammar.render(&result.text(&spec)),
        audio_columns: audio.n_steps(),
        report: result.report.clone(),
    };
    if let Some(p) = files.grid {
        result.grid.save(p)?;
    }
    if let Some(p) = files.stream_grid {
        capture.grid.save(p)?;
    }
    if let Some(p) = files.signal {
        std::fs::write(p, signal_dump(&signal))?;
    }
    if let Some(p) = files.meta {
        std::fs::write(p, serde_json::to_string_pretty(&meta)? + "\n")?;
    }
    Ok((result, meta))
}

/// Benchmark prompts: `n` audio-in, audio-out questions from the grammar.
pub fn bench_prompts(model: &Model, n: usize, seed: u64, cfg: &DecodeConfig) -> Result<Vec<InputLayout>> {
    let spec = model.vocab();
    let grammar = Grammar::for_vocab(spec)?;
    let corpus = gen_data(&grammar, spec, 5 * n.max(1), seed)?;
    corpus
        .filter_tasks(&[TaskKind::AudioQaFull])
        .examples
        .iter()
        .take(n)
        .map(|ex| build_prompt(ex.task, &ex.text_in, &ex.signal_in, spec, &cfg.pattern, cfg.text_advance))
        .collect()
}

pub fn cmd_bench(model: &Model, n_prompts: usize, seed: u64, cfg: &DecodeConfig) -> Result<BenchReport> {
    let prompts = bench_prompts(model, n_prompts, seed, cfg)?;
    run_bench(model, &prompts, cfg)
}

fn histogram_line(row: &[u32], spec: &crate::vocab::VocabSpec) -> String {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &t in row {
        *counts.entry(t).or_default() += 1;
    }
    let mut top: Vec<(u32, usize)> = counts.into_iter().collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    top.iter()
        .take(8)
        .map(|&(t, n)| match spec.classify(t) {
            Ok(TokenClass::Special(s)) => format!("{}:{n}", s.name()),
            _ => format!("{t}:{n}"),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Human-readable summary of a grid, checkpoint or corpus file.
pub fn inspect(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 {
        return Err(Error::Format(format!(
            "truncated file while reading magic ({} bytes)",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    let mut s = String::new();
    if magic == GRID_MAGIC {
        let g = TokenGrid::read_from(bytes.as_slice())?;
        writeln!(s, "grid file {}", path.display()).ok();
        writeln!(s, "n_layers={} n_steps={} id_space={:?}", g.n_layers(), g.n_steps(), g.id_space()).ok();
        let spec = crate::vocab::VocabSpec::uniform(32, 8)?;
        // A 7-layer grid holds audio only; number its rows as codec layers.
        let first = if g.n_layers() == crate::vocab::AUDIO_LAYERS { 1 } else { 0 };
        for l in 0..g.n_layers() {
            writeln!(s, "layer {}: {}", l + first, histogram_line(g.row(l), &spec)).ok();
        }
    } else if magic == CHECKPOINT_MAGIC {
        let ck = Checkpoint::read_from(bytes.as_slice())?;
        let index = ck.params.index();
        writeln!(s, "checkpoint {} stage={}", path.display(), ck.stage).ok();
        writeln!(s, "{}", ck.config.to_kv().to_text().trim_end()).ok();
        let v = &ck.config.vocab;
        writeln!(
            s,
            "vocab: text 0..{} audio {}..{} specials {}..{}",
            v.text_size(),
            v.text_size(),
            v.specials_start(),
            v.specials_start(),
            v.total_size()
        )
        .ok();
        writeln!(s, "groups:").ok();
        for g in ParamGroup::ALL {
            writeln!(s, "  {:<17} {:>9} elements", g.name(), index.group_len(g)).ok();
        }
        writeln!(s, "  {:<17} {:>9} elements", "total", index.total).ok();
        writeln!(s, "tensors: {}", index.tensors.len()).ok();
    } else if bytes[0] == b'{' {
        let corpus = Corpus::read_jsonl(bytes.as_slice())?;
        writeln!(s, "corpus {} examples={}", path.display(), corpus.len()).ok();
        for t in TaskKind::ALL {
            let sub = corpus.filter_tasks(&[t]);
            let n: usize = sub.examples.iter().map(|e| e.n_tokens()).sum();
            writeln!(s, "  {:<18} {:<12} {:>6} examples {:>8} output tokens", t.name(), t.modality(), sub.len(), n).ok();
        }
    } else {
        return Err(Error::UnknownMagic(magic));
    }
    Ok(s)
}

/// Convenience for callers streaming events to stdout as JSON lines.
pub fn event_json(e: &StreamEvent) -> String {
    serde_json::to_string(e).expect("events serialize")
}


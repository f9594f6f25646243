//! Free-running (not teacher-forced) accuracy of a trained model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::encode_signal;
use crate::engine::{decode, DecodeConfig, NullSink};
use crate::error::Result;
use crate::layout::{build_prompt, codec_for, TaskKind, TrainingExample};
use crate::model::Model;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeAccuracy {
    pub prompts: usize,
    /// Prompts whose decoded text equals the reference exactly.
    pub text_exact: usize,
    /// Audio columns equal to the reference column at the same index.
    pub audio_columns_matched: usize,
    /// Sum over prompts of max(reference, decoded) column counts.
    pub audio_columns_total: usize,
    pub truncated: usize,
}

impl DecodeAccuracy {
    pub fn text_rate(&self) -> f64 {
        self.text_exact as f64 / self.prompts.max(1) as f64
    }

    pub fn audio_rate(&self) -> f64 {
        self.audio_columns_matched as f64 / self.audio_columns_total.max(1) as f64
    }
}

/// Decodes each example's prompt and scores it against the example's
/// outputs, grouped by task.
pub fn decode_accuracy(
    model: &Model,
    examples: &[TrainingExample],
    cfg: &DecodeConfig,
) -> Result<BTreeMap<TaskKind, DecodeAccuracy>> {
    let spec = model.vocab();
    let codec = codec_for(spec)?;
    let mut out: BTreeMap<TaskKind, DecodeAccuracy> = BTreeMap::new();
    for ex in examples {
        let lay = build_prompt(ex.task, &ex.text_in, &ex.signal_in, spec, &cfg.pattern, cfg.text_advance)?;
        let res = decode(model, &lay, cfg, &mut NullSink)?;
        let acc = out.entry(ex.task).or_default();
        acc.prompts += 1;
        acc.truncated += res.report.truncated as usize;
        if ex.task.text_output() && res.text(spec) == ex.text_out {
            acc.text_exact += 1;
        }
        if ex.task.audio_output() {
            let want = encode_signal(&ex.signal_out, &codec)?;
            let got = res.audio(spec);
            acc.audio_columns_total += want.n_steps().max(got.n_steps());
            acc.audio_columns_matched += (0..want.n_steps().min(got.n_steps()))
                .filter(|&s| want.column(s) == got.column(s))
                .count();
        }
    }
    Ok(out)
}

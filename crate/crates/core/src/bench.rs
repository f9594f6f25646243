//! Step counts and wall clock of delayed parallel decoding against a
//! flattened one-token-per-step layout.

use serde::{Deserialize, Serialize};

use crate::codec::flatten_grid;
use crate::delay::DelayPattern;
use crate::engine::{decode, DecodeConfig, DecodeMode, StreamEvent};
use crate::error::Result;
use crate::layout::InputLayout;
use crate::model::Model;

/// Steps until the last of `audio_steps` columns is complete when audio
/// trails text by the pattern plus `text_advance`.
pub fn delayed_steps(audio_steps: usize, pattern: &DelayPattern, text_advance: usize) -> usize {
    if audio_steps == 0 {
        return 0;
    }
    audio_steps + pattern.offsets()[1..].iter().copied().max().unwrap_or(0) + text_advance
}

/// Steps to emit the same content one token at a time: every audio layer
/// token plus the text.
pub fn flattened_steps(audio_steps: usize, text_len: usize) -> usize {
    7 * audio_steps + text_len
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub mode: String,
    pub prompt: usize,
    pub text_len: usize,
    pub audio_steps: usize,
    pub first_text_step: Option<usize>,
    pub first_audio_step: Option<usize>,
    /// Decode step after which the last audio column was complete.
    pub delayed_steps_measured: usize,
    pub delayed_steps_formula: usize,
    /// Length of the flattened token sequence of the decoded content.
    pub flattened_steps_measured: usize,
    pub flattened_steps_formula: usize,
    pub seconds_per_step: f64,
    pub truncated: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub text_advance: usize,
    pub runs: Vec<BenchRun>,
    pub mean_seconds_per_step_parallel: f64,
    pub mean_seconds_per_step_batch: f64,
    /// Batch over parallel per-step wall clock. Reported, not asserted.
    pub batch_over_parallel: f64,
    pub batch_over_parallel_reference_limit: f64,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<15} {:>6} {:>5} {:>6} {:>10} {:>11} {:>8} {:>10} {:>12}\n",
            "mode", "prompt", "text", "audio", "first_text", "first_audio", "delayed", "flattened", "us/step"
        );
        for r in &self.runs {
            let opt = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
            s.push_str(&format!(
                "{:<15} {:>6} {:>5} {:>6} {:>10} {:>11} {:>8} {:>10} {:>12.1}\n",
                r.mode,
                r.prompt,
                r.text_len,
                r.audio_steps,
                opt(r.first_text_step),
                opt(r.first_audio_step),
                r.delayed_steps_measured,
                r.flattened_steps_measured,
                r.seconds_per_step * 1e6
            ));
        }
        s.push_str(&format!(
            "per-step wall clock: parallel {:.1} us, batch {:.1} us, ratio {:.2} (reference limit {:.1})\n",
            self.mean_seconds_per_step_parallel * 1e6,
            self.mean_seconds_per_step_batch * 1e6,
            self.batch_over_parallel,
            self.batch_over_parallel_reference_limit
        ));
        s
    }
}

/// Decodes every prompt in both modes. Sessions run one after another.
pub fn run_bench(model: &Model, prompts: &[InputLayout], base: &DecodeConfig) -> Result<BenchReport> {
    let spec = model.vocab();
    let mut report = BenchReport {
        text_advance: base.text_advance,
        batch_over_parallel_reference_limit: 2.5,
        ..Default::default()
    };
    let mut per_mode = [(0.0, 0usize), (0.0, 0usize)];
    for (i, lay) in prompts.iter().enumerate() {
        for (m, mode) in [DecodeMode::Parallel, DecodeMode::BatchParallel].into_iter().enumerate() {
            let cfg = DecodeConfig {
                mode,
                ..base.clone()
            };
            let mut events: Vec<StreamEvent> = Vec::new();
            let out = decode(model, lay, &cfg, &mut events)?;
            let text = out.text(spec);
            let audio = out.audio(spec);
            let delayed_measured = events
                .iter()
                .filter_map(|e| match e {
                    StreamEvent::AudioColumn { step, .. } => Some(step + 1),
                    _ => None,
                })
                .max()
                .unwrap_or(0);
            per_mode[m].0 += out.report.decode_seconds;
            per_mode[m].1 += out.report.steps;
            report.runs.push(BenchRun {
                mode: mode.name().into(),
                prompt: i,
                text_len: text.len(),
                audio_steps: audio.n_steps(),
                first_text_step: out.report.first_text_step,
                first_audio_step: out.report.first_audio_step,
                delayed_steps_measured: delayed_measured,
                delayed_steps_formula: delayed_steps(audio.n_steps(), &cfg.pattern, cfg.text_advance),
                flattened_steps_measured: flatten_grid(&audio).len() + text.len(),
                flattened_steps_formula: flattened_steps(audio.n_steps(), text.len()),
                seconds_per_step: out.report.seconds_per_step,
                truncated: out.report.truncated,
            });
        }
    }
    let mean = |(t, n): (f64, usize)| if n > 0 { t / n as f64 } else { 0.0 };
    report.mean_seconds_per_step_parallel = mean(per_mode[0]);
    report.mean_seconds_per_step_batch = mean(per_mode[1]);
    if report.mean_seconds_per_step_parallel > 0.0 {
        report.batch_over_parallel = report.mean_seconds_per_step_batch / report.mean_seconds_per_step_parallel;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_four_step_ratio() {
        let p = DelayPattern::default();
        for lead in [0, 2, 5] {
            let d = delayed_steps(64, &p, lead);
            assert_eq!(d, 64 + 7 + lead);
            assert_eq!(flattened_steps(64, 0), 7 * 64);
        }
        let r = flattened_steps(4096, 0) as f64 / delayed_steps(4096, &p, 0) as f64;
        assert!(r > 6.98 && r < 7.0);
    }
}

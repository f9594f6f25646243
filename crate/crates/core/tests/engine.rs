mod common;

use dualstream::delay::DelayPattern;
use dualstream::engine::*;
use dualstream::grammar::{gen_data, Grammar};
use dualstream::layout::{build_prompt, InputLayout, TaskKind};
use dualstream::model::{Model, ModelConfig};
use dualstream::vocab::MODEL_LAYERS;

fn tiny() -> Model {
    Model::new(ModelConfig {
        d_model: 32,
        n_trunk_blocks: 1,
        n_extension_blocks: 1,
        n_heads: 4,
        ..Default::default()
    })
    .unwrap()
}

fn prompts(model: &Model, n: usize, seed: u64, n_adv: usize) -> Vec<InputLayout> {
    let spec = model.vocab();
    let g = Grammar::for_vocab(spec).unwrap();
    gen_data(&g, spec, n, seed)
        .unwrap()
        .examples
        .iter()
        .map(|ex| build_prompt(ex.task, &ex.text_in, &ex.signal_in, spec, &DelayPattern::default(), n_adv).unwrap())
        .collect()
}

fn audio_prompt(model: &Model, n_adv: usize) -> InputLayout {
    let spec = model.vocab();
    let g = Grammar::for_vocab(spec).unwrap();
    build_prompt(TaskKind::AudioQaFull, &[], &g.synthesize(&[3, 10, 4]), spec, &DelayPattern::default(), n_adv).unwrap()
}

#[test]
fn first_audio_column_at_seven_plus_n() {
    let model = tiny();
    for n in [0, 2, 5] {
        let lay = audio_prompt(&model, n);
        let cfg = DecodeConfig {
            text_advance: n,
            max_steps: 40,
            ..Default::default()
        };
        let mut events = Vec::new();
        let out = decode_parallel(&model, &lay, &cfg, &mut events).unwrap();
        assert_eq!(out.report.first_text_step, Some(0));
        assert_eq!(out.report.first_audio_step, Some(7 + n), "N={n}");
        let first_col = events.iter().find(|e| matches!(e, StreamEvent::AudioColumn { .. })).unwrap();
        assert_eq!(first_col.step(), 7 + n);
        assert!(events.windows(2).all(|w| w[0].step() <= w[1].step()));
        assert!(matches!(events.last(), Some(StreamEvent::Done { .. })));
    }
}

#[test]
fn cached_matches_recompute() {
    let model = tiny();
    for lay in prompts(&model, 10, 7, 0) {
        for mode in [DecodeMode::Parallel, DecodeMode::BatchParallel] {
            let cfg = DecodeConfig {
                max_steps: 24,
                mode,
                ..Default::default()
            };
            let fast = decode(&model, &lay, &cfg, &mut NullSink).unwrap();
            let slow = decode(&model, &lay, &DecodeConfig { recompute: true, ..cfg }, &mut NullSink).unwrap();
            assert_eq!(fast.raw, slow.raw);
        }
    }
}

#[test]
fn batch_text_equals_text_only_decode() {
    let model = tiny();
    let spec = model.vocab().clone();
    for lay in prompts(&model, 10, 3, 0) {
        let cfg = DecodeConfig {
            max_steps: 30,
            ..Default::default()
        };
        let batch = decode_batch_parallel(&model, &lay, &cfg, &mut NullSink).unwrap();
        let plain = decode_parallel(&model, &lay.text_only_variant(&spec), &cfg, &mut NullSink).unwrap();
        let pad = spec.pad();
        let stream = |g: &dualstream::grid::TokenGrid| -> Vec<u32> { g.row(0).iter().copied().filter(|&t| t != pad).collect() };
        assert_eq!(stream(&batch.grid), stream(&plain.grid));
        let par = decode_parallel(&model, &lay, &cfg, &mut NullSink).unwrap();
        assert_eq!(batch.report.first_text_step, par.report.first_text_step);
        assert_eq!(batch.report.first_audio_step, par.report.first_audio_step);
    }
}

#[test]
fn truncation_is_flagged() {
    let model = tiny();
    let lay = audio_prompt(&model, 0);
    let cfg = DecodeConfig {
        max_steps: 1,
        ..Default::default()
    };
    let out = decode_parallel(&model, &lay, &cfg, &mut NullSink).unwrap();
    assert!(out.report.truncated);
    assert_eq!(out.report.steps, 1);
}

#[test]
fn top_k_is_seeded() {
    let model = tiny();
    let lay = audio_prompt(&model, 0);
    let cfg = DecodeConfig {
        sampling: Sampling::TopK { k: 4, temperature: 1.5 },
        seed: 11,
        max_steps: 30,
        ..Default::default()
    };
    let a = decode_parallel(&model, &lay, &cfg, &mut NullSink).unwrap();
    let b = decode_parallel(&model, &lay, &cfg, &mut NullSink).unwrap();
    assert_eq!(a.raw, b.raw);
}

#[derive(Default)]
struct Interleaving(Vec<(char, usize)>);

impl Sink for Interleaving {
    fn event(&mut self, e: &StreamEvent) {
        self.0.push(('e', e.step()));
    }

    fn step_started(&mut self, step: usize) {
        self.0.push(('c', step));
    }
}

/// Every event of step t reaches the sink before the computation of step
/// t + 1 starts.
#[test]
fn events_precede_next_step() {
    let model = tiny();
    for mode in [DecodeMode::Parallel, DecodeMode::BatchParallel] {
        let lay = audio_prompt(&model, 1);
        let cfg = DecodeConfig {
            max_steps: 30,
            text_advance: 1,
            mode,
            ..Default::default()
        };
        let mut log = Interleaving::default();
        decode(&model, &lay, &cfg, &mut log).unwrap();
        let mut computed = None;
        let mut events = 0;
        for &(kind, step) in &log.0 {
            match kind {
                'c' => {
                    assert_eq!(computed.map_or(0, |c| c + 1), step);
                    computed = Some(step);
                }
                _ => {
                    assert_eq!(Some(step), computed, "event of step {step} arrived late");
                    events += 1;
                }
            }
        }
        assert!(events > 3);
    }
}

#[test]
fn engine_output_reverts_cleanly_and_is_head_legal() {
    let model = tiny();
    let spec = model.vocab().clone();
    for lay in prompts(&model, 10, 5, 2) {
        for mode in [DecodeMode::Parallel, DecodeMode::BatchParallel] {
            let cfg = DecodeConfig {
                max_steps: 40,
                text_advance: 2,
                mode,
                ..Default::default()
            };
            let out = decode(&model, &lay, &cfg, &mut NullSink).unwrap();
            for l in 0..MODEL_LAYERS {
                for &t in out.raw.row(l) {
                    assert!(spec.is_head_legal(l, t), "layer {l} id {t}");
                }
            }
        }
    }
}


/// The rigged model's audio-conditioned text head disagrees with the
/// text-only context at step 0, yet the batch text still follows the
/// text-only decode.
#[test]
fn rigged_divergence_batch_follows_text_only() {
    let base = tiny();
    let spec = base.vocab().clone();
    let g = Grammar::for_vocab(&spec).unwrap();
    for q in [[3, 10, 4], [12, 13, 14]] {
        let lay = build_prompt(TaskKind::AudioQaFull, &[], &g.synthesize(&q), &spec, &DelayPattern::default(), 0).unwrap();
        let model = common::rig_text_head(&base, &lay);
        let cfg = DecodeConfig { max_steps: 12, ..Default::default() };
        let par = decode_parallel(&model, &lay, &cfg, &mut NullSink).unwrap();
        let batch = decode_batch_parallel(&model, &lay, &cfg, &mut NullSink).unwrap();
        let plain = decode_parallel(&model, &lay.text_only_variant(&spec), &cfg, &mut NullSink).unwrap();
        assert_eq!(par.text(&spec)[0], common::RIG_A);
        assert_eq!(plain.text(&spec)[0], common::RIG_B);
        assert_eq!(batch.text(&spec), plain.text(&spec));
    }
}

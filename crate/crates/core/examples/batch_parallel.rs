//! Batch-parallel decoding: a text-only companion sequence writes the text,
//! and the audio sequence voices it.
//!
//! The text head here is rigged so that the audio-conditioned context and
//! the text-only context disagree on the first token. Plain parallel decoding
//! follows the audio-conditioned choice; batch-parallel decoding follows the
//! text-only one, token for token.

use dualstream::engine::{decode_batch_parallel, decode_parallel, DecodeConfig, NullSink};
use dualstream::grammar::Grammar;
use dualstream::grid::{IdSpace, TokenGrid};
use dualstream::layout::{InputLayout, TaskKind};
use dualstream::model::{Model, ModelConfig};
use dualstream::ops::prompt_layout;
use dualstream::vocab::MODEL_LAYERS;

fn hidden(model: &Model, lay: &InputLayout) -> dualstream::Result<Vec<f64>> {
    let seq = model.sequence(lay, &TokenGrid::filled(MODEL_LAYERS, 0, 0, IdSpace::Global), 0)?;
    model.final_hidden(&seq)
}

/// Text head logits for ids `a` and `b` become +-(z_full - z_text).(z - mid).
fn rig(model: &mut Model, lay: &InputLayout, a: u32, b: u32) -> dualstream::Result<()> {
    let spec = model.vocab().clone();
    let za = hidden(model, lay)?;
    let zb = hidden(model, &lay.text_only_variant(&spec))?;
    let u: Vec<f64> = za.iter().zip(&zb).map(|(x, y)| x - y).collect();
    let um: f64 = u.iter().zip(za.iter().zip(&zb)).map(|(u, (x, y))| u * 0.5 * (x + y)).sum();
    let (sa, sb, n) = (model.head_slot(0, a).unwrap(), model.head_slot(0, b).unwrap(), model.head_ids(0).len());
    let p = model.params_mut();
    let (w, bias) = (p.index().find("head.0.w").unwrap(), p.index().find("head.0.b").unwrap());
    for (i, ui) in u.iter().enumerate() {
        p.get_mut(w)[i * n + sa] = 100.0 * ui;
        p.get_mut(w)[i * n + sb] = -100.0 * ui;
    }
    for (j, x) in p.get_mut(bias).iter_mut().enumerate() {
        *x = if j == sa { -100.0 * um } else if j == sb { 100.0 * um } else { -1e3 };
    }
    Ok(())
}

fn main() -> dualstream::Result<()> {
    let mut model = Model::new(ModelConfig { d_model: 32, n_trunk_blocks: 1, n_extension_blocks: 1, ..Default::default() })?;
    let spec = model.vocab().clone();
    let g = Grammar::for_vocab(&spec)?;
    let cfg = DecodeConfig { max_steps: 16, ..Default::default() };
    let lay = prompt_layout(&model, TaskKind::AudioQaFull, "echo cat dog", &cfg)?;
    rig(&mut model, &lay, 5, 9)?;

    let par = decode_parallel(&model, &lay, &cfg, &mut NullSink)?;
    let batch = decode_batch_parallel(&model, &lay, &cfg, &mut NullSink)?;
    let text_only = decode_parallel(&model, &lay.text_only_variant(&spec), &cfg, &mut NullSink)?;
    println!("parallel:        {}", g.render(&par.text(&spec)));
    println!("batch parallel:  {}", g.render(&batch.text(&spec)));
    println!("text-only:       {}", g.render(&text_only.text(&spec)));
    assert_eq!(batch.text(&spec), text_only.text(&spec));
    println!(
        "per step: parallel {:.0} us, batch {:.0} us",
        par.report.seconds_per_step * 1e6,
        batch.report.seconds_per_step * 1e6
    );
    Ok(())
}

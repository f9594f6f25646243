//! Streams text tokens and audio columns as the engine produces them.
//!
//! Pass a checkpoint written by `dualstream train` to decode with it;
//! otherwise a small model is trained on the spot, which takes a minute and
//! answers only some prompts correctly.
//!
//!     cargo run --release --example streaming_decode [stage3.omnp]

use dualstream::engine::{decode, DecodeConfig, StreamEvent};
use dualstream::grammar::{gen_data, Grammar};
use dualstream::model::{train_stage, Checkpoint, Model, ModelConfig, Optimizer, StagePlan, TrainConfig};
use dualstream::ops::prompt_layout;
use dualstream::layout::TaskKind;

fn quick_model() -> dualstream::Result<Model> {
    let cfg = ModelConfig { d_model: 48, n_trunk_blocks: 1, n_extension_blocks: 1, ..Default::default() };
    let g = Grammar::for_vocab(&cfg.vocab)?;
    let corpus = gen_data(&g, &cfg.vocab, 400, 0)?;
    let train = TrainConfig { epochs: [2, 6, 12], optimizer: Optimizer::adam(), ..Default::default() };
    let mut model = Model::new(cfg)?;
    for plan in StagePlan::all() {
        let m = train_stage(&mut model, &plan, &corpus, &train)?;
        eprintln!("stage {}: loss {:.3} -> {:.3}", m.stage, m.initial_loss, m.final_loss);
    }
    Ok(model)
}

fn main() -> dualstream::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => Checkpoint::load(p)?.into_model()?,
        None => quick_model()?,
    };
    let g = Grammar::for_vocab(model.vocab())?;
    let cfg = DecodeConfig { text_advance: 2, ..Default::default() };
    let lay = prompt_layout(&model, TaskKind::AudioQaFull, "4 + 5", &cfg)?;

    let mut sink = |e: &StreamEvent| match e {
        StreamEvent::TextToken { step, id } => println!("step {step:>2}  text  {}", g.token_name(*id)),
        StreamEvent::AudioColumn { step, column, tokens } => println!("step {step:>2}  audio column {column} {tokens:?}"),
        StreamEvent::Done { step, truncated } => println!("step {step:>2}  done (truncated: {truncated})"),
    };
    let out = decode(&model, &lay, &cfg, &mut sink)?;
    let r = &out.report;
    println!(
        "first text at step {:?}, first audio column at step {:?}, {:.0} us per step",
        r.first_text_step,
        r.first_audio_step,
        r.seconds_per_step * 1e6
    );
    Ok(())
}

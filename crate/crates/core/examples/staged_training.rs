//! The three training stages on a small corpus, showing which parameter
//! groups each stage moves.

use dualstream::grammar::{gen_data, Grammar};
use dualstream::model::{train_stage, Model, ModelConfig, Optimizer, ParamGroup, StagePlan, TrainConfig};

fn main() -> dualstream::Result<()> {
    let cfg = ModelConfig { d_model: 32, n_trunk_blocks: 1, n_extension_blocks: 1, ..Default::default() };
    let g = Grammar::for_vocab(&cfg.vocab)?;
    let corpus = gen_data(&g, &cfg.vocab, 200, 0)?;
    let train = TrainConfig { epochs: [3, 6, 10], optimizer: Optimizer::adam(), ..Default::default() };
    let mut model = Model::new(cfg)?;
    for plan in StagePlan::all() {
        let before: Vec<Vec<f64>> = ParamGroup::ALL.iter().map(|&g| model.params().group_values(g)).collect();
        let m = train_stage(&mut model, &plan, &corpus, &train)?;
        println!("stage {}: {} examples, loss {:.3} -> {:.3}", m.stage, m.examples, m.initial_loss, m.final_loss);
        for (g, old) in ParamGroup::ALL.iter().zip(before) {
            let moved = model.params().group_values(*g) != old;
            println!("  {:<17} {}", g.name(), if moved { "trained" } else { "frozen" });
        }
        for (task, t) in &m.final_per_task {
            println!("  {task:<18} loss {:.3} token accuracy {:.3}", t.loss, t.token_accuracy);
        }
    }
    Ok(())
}

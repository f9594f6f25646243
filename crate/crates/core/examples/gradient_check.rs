//! Finite differences against the hand-written backward pass.

use dualstream::grammar::{gen_data, Grammar};
use dualstream::layout::{build_layout, InputLayout};
use dualstream::model::{grad_check, Model, ModelConfig};

fn main() -> dualstream::Result<()> {
    let cfg = ModelConfig { d_model: 32, n_trunk_blocks: 2, n_extension_blocks: 1, ..Default::default() };
    let g = Grammar::for_vocab(&cfg.vocab)?;
    let corpus = gen_data(&g, &cfg.vocab, 5, 0)?;
    let lays = corpus
        .examples
        .iter()
        .map(|ex| build_layout(ex, &cfg.vocab, &cfg.pattern, 0))
        .collect::<dualstream::Result<Vec<InputLayout>>>()?;
    let batch: Vec<&InputLayout> = lays.iter().collect();
    let model = Model::new(cfg)?;
    let r = grad_check(&model, &batch, 1e-4, 200, 0)?;
    println!("{} samples, max relative error {:.2e}", r.samples, r.max_rel_error);
    println!("worst: {} [{}] analytic {:.6e} numeric {:.6e}", r.worst.0, r.worst.1, r.worst_analytic, r.worst_numeric);
    Ok(())
}

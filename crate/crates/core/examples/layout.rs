//! How one training example becomes input columns, delayed targets and a
//! loss mask.

use dualstream::delay::DelayPattern;
use dualstream::grammar::Grammar;
use dualstream::layout::{build_layout, validate_layout, TaskKind};
use dualstream::vocab::{TokenClass, VocabSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cell(spec: &VocabSpec, id: u32) -> String {
    match spec.classify(id) {
        Ok(TokenClass::Special(s)) => match s.name() {
            "PAD" => ".".into(),
            n => n.chars().take(4).collect(),
        },
        Ok(c) => c.local_index().to_string(),
        Err(_) => "?".into(),
    }
}

fn main() -> dualstream::Result<()> {
    let spec = VocabSpec::uniform(32, 8)?;
    let g = Grammar::for_vocab(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for task in [TaskKind::TextQa, TaskKind::AudioQaFull] {
        let ex = g.example(task, &mut rng);
        let lay = build_layout(&ex, &spec, &DelayPattern::default(), 0)?;
        println!("{} ({}): text out {:?}", task.name(), task.modality(), g.render(&ex.text_out));
        println!("  input {} columns, output {} steps", lay.input_len(), lay.output_len());
        for l in 0..8 {
            let inp: Vec<String> = lay.input_ids.row(l).iter().map(|&t| cell(&spec, t)).collect();
            let out: Vec<String> = (0..lay.output_len())
                .map(|s| {
                    let c = cell(&spec, lay.target_ids.get(l, s));
                    if lay.mask(l, s) { c } else { format!("({c})") }
                })
                .collect();
            println!("  {l}: {:>40} | {}", inp.join(" "), out.join(" "));
        }
        assert!(validate_layout(&lay, &spec).is_empty());
    }
    println!("targets in parentheses are not scored");
    Ok(())
}

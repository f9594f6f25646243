//! Writes each file the command line produces and reads it back through
//! `inspect`.

use dualstream::grammar::{gen_data, Grammar};
use dualstream::layout::audio_tokens;
use dualstream::model::{Checkpoint, Model, ModelConfig};
use dualstream::ops::inspect;

fn main() -> dualstream::Result<()> {
    let dir = std::env::temp_dir().join("dualstream-formats");
    std::fs::create_dir_all(&dir)?;
    let cfg = ModelConfig { d_model: 16, n_trunk_blocks: 1, n_extension_blocks: 1, n_heads: 2, ..Default::default() };

    let corpus_path = dir.join("corpus.jsonl");
    let g = Grammar::for_vocab(&cfg.vocab)?;
    gen_data(&g, &cfg.vocab, 25, 0)?.save(&corpus_path)?;

    let grid_path = dir.join("audio.omng");
    let grid = audio_tokens(&g.synthesize(&[3, 10, 4]), &cfg.vocab)?;
    grid.save(&grid_path)?;

    let ck_path = dir.join("model.omnp");
    Checkpoint::from_model(&Model::new(cfg)?, 0).save(&ck_path)?;

    for p in [&corpus_path, &grid_path, &ck_path] {
        println!("== {}", p.display());
        print!("{}", inspect(p)?);
    }

    let bad = dir.join("bad.bin");
    std::fs::write(&bad, b"RIFF....")?;
    println!("== {}: {}", bad.display(), inspect(&bad).unwrap_err());
    Ok(())
}

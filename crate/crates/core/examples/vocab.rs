//! The shared id space: text, seven codec layers, then the specials.

use dualstream::vocab::{Special, TokenClass, VocabSpec, MODEL_LAYERS};

fn main() -> dualstream::Result<()> {
    let spec = VocabSpec::uniform(32, 8)?;
    println!("total ids: {}", spec.total_size());
    println!("text: {:?}", spec.text_range());
    for l in 1..MODEL_LAYERS {
        println!("audio layer {l}: {:?}", spec.audio_range(l));
    }
    for s in Special::ALL {
        println!("{:<18} {}", s.name(), spec.special(s));
    }

    // Every id classifies to exactly one (role, layer, index) and back.
    for id in [0, 31, 32, 40, 87, 88, 94] {
        let c = spec.classify(id)?;
        assert_eq!(spec.id_of(c)?, id);
        println!("{id:>3} -> {c:?}");
    }
    let id = spec.id_of(TokenClass::Audio { layer: 3, index: 5 })?;
    println!("layer 3 code 5 is id {id}");

    // What each output head may produce.
    for l in [0, 1, 7] {
        let legal: Vec<u32> = (0..spec.total_size()).filter(|&i| spec.is_head_legal(l, i)).collect();
        println!("head {l}: {} legal ids, first {:?} last {:?}", legal.len(), legal.first(), legal.last());
    }
    Ok(())
}

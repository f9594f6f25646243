//! Toy residual codec: each sample becomes seven base-B digits, coarse first.

use dualstream::codec::{decode_grid, encode_signal, flatten_grid, CodecConfig, Signal};

fn main() -> dualstream::Result<()> {
    let cfg = CodecConfig::new(8)?;
    let signal = Signal::new(vec![0, 1, 8, 262_143, 123_456]);
    let grid = encode_signal(&signal, &cfg)?;
    for l in 0..grid.n_layers() {
        println!("layer {}: {:?}", l + 1, grid.row(l));
    }
    assert_eq!(decode_grid(&grid, &cfg)?, signal);

    // Keeping only the coarse layers still lands close to the original.
    let x = 123_456;
    for k in 1..=7 {
        let mut g = encode_signal(&Signal::new(vec![x]), &cfg)?;
        for l in k..7 {
            g.set(l, 0, 0);
        }
        let y = decode_grid(&g, &cfg)?.samples[0];
        println!("{k} layers: {y:>7} (off by {})", x - y);
    }

    // The flattened baseline emits one codec token per step.
    println!("flattened: {:?}", flatten_grid(&grid.slice_steps(0..2)));
    Ok(())
}

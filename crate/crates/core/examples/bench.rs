//! Delayed parallel decoding against a flattened one-token-per-step layout.

use dualstream::bench::{delayed_steps, flattened_steps};
use dualstream::delay::DelayPattern;
use dualstream::engine::DecodeConfig;
use dualstream::model::{Model, ModelConfig};
use dualstream::ops::cmd_bench;

fn main() -> dualstream::Result<()> {
    let p = DelayPattern::default();
    println!("{:>6} {:>4} {:>8} {:>10} {:>6}", "audio", "N", "delayed", "flattened", "ratio");
    for t in [8, 64, 512, 4096] {
        for n in [0, 5] {
            let (d, f) = (delayed_steps(t, &p, n), flattened_steps(t, 0));
            println!("{t:>6} {n:>4} {d:>8} {f:>10} {:>6.2}", f as f64 / d as f64);
        }
    }

    // Measured on live decodes; an untrained model emits arbitrary content
    // but the step laws hold all the same.
    let model = Model::new(ModelConfig { d_model: 32, n_trunk_blocks: 1, n_extension_blocks: 1, ..Default::default() })?;
    let report = cmd_bench(&model, 3, 0, &DecodeConfig { max_steps: 40, ..Default::default() })?;
    print!("{}", report.to_text());
    Ok(())
}

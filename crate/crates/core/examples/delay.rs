//! Staggering the layers so each codec layer trails the one above it.

use dualstream::delay::{apply_delay, first_emission_step, revert_delay, DelayPattern};
use dualstream::grid::{IdSpace, TokenGrid};
use dualstream::vocab::MODEL_LAYERS;

const PAD: u32 = 88;

fn show(g: &TokenGrid) {
    for l in 0..g.n_layers() {
        let row: Vec<String> = g
            .row(l)
            .iter()
            .map(|&t| if t == PAD { " .".into() } else { format!("{t:>2}") })
            .collect();
        println!("  {l}: {}", row.join(" "));
    }
}

fn main() -> dualstream::Result<()> {
    let rows: Vec<Vec<u32>> = (0..MODEL_LAYERS).map(|l| (0..4).map(|s| (10 * l + s) as u32).collect()).collect();
    let grid = TokenGrid::from_rows(&rows, IdSpace::Global)?;
    println!("undelayed:");
    show(&grid);

    for n in [0, 2] {
        let p = DelayPattern::default().with_text_advance(n);
        let d = apply_delay(&grid, &p, PAD)?;
        println!("delayed, text advance {n} ({} steps):", d.n_steps());
        show(&d);
        assert_eq!(revert_delay(&d, &p, PAD)?, grid);
        let first: Vec<usize> = (0..MODEL_LAYERS).map(|l| first_emission_step(&DelayPattern::default(), n, l)).collect();
        println!("  first emission per layer: {first:?}");
    }
    Ok(())
}

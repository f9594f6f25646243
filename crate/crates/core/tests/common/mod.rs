//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use dualstream::grid::{IdSpace, TokenGrid};
use dualstream::layout::InputLayout;
use dualstream::model::Model;
use dualstream::vocab::{TokenId, MODEL_LAYERS};

/// Text ids the rigged head chooses between.
pub const RIG_A: TokenId = 5;
pub const RIG_B: TokenId = 9;

/// Final hidden state feeding output step 0 of `layout`.
pub fn first_step_hidden(model: &Model, layout: &InputLayout) -> Vec<f64> {
    let empty = TokenGrid::filled(MODEL_LAYERS, 0, 0, IdSpace::Global);
    let seq = model.sequence(layout, &empty, 0).unwrap();
    model.final_hidden(&seq).unwrap()
}

/// Rewrites the text head so that at output step 0 the audio-conditioned
/// context of `layout` picks `RIG_A` while its text-only variant picks
/// `RIG_B`. With u = z_a - z_b and m the midpoint, the two logits are
/// +-u.(z - m), which is +-|u|^2/2 at the two contexts. Every other text-head
/// id gets a large negative bias so neither comparison depends on them.
pub fn rig_text_head(model: &Model, layout: &InputLayout) -> Model {
    let spec = model.vocab().clone();
    let z_a = first_step_hidden(model, layout);
    let z_b = first_step_hidden(model, &layout.text_only_variant(&spec));
    let d = z_a.len();
    let u: Vec<f64> = z_a.iter().zip(&z_b).map(|(a, b)| a - b).collect();
    let m: Vec<f64> = z_a.iter().zip(&z_b).map(|(a, b)| 0.5 * (a + b)).collect();
    let um: f64 = u.iter().zip(&m).map(|(a, b)| a * b).sum();
    let uu: f64 = u.iter().map(|x| x * x).sum();
    assert!(uu > 0.0, "contexts coincide; nothing to rig");
    let scale = 50.0 / uu;

    let n = model.head_ids(0).len();
    let sa = model.head_slot(0, RIG_A).unwrap();
    let sb = model.head_slot(0, RIG_B).unwrap();
    let mut rigged = model.clone();
    let params = rigged.params_mut();
    let w = params.index().find("head.0.w").unwrap();
    let b = params.index().find("head.0.b").unwrap();
    let wv = params.get_mut(w);
    for i in 0..d {
        wv[i * n + sa] = scale * u[i];
        wv[i * n + sb] = -scale * u[i];
    }
    let bv = params.get_mut(b);
    for (j, x) in bv.iter_mut().enumerate() {
        *x = if j == sa {
            -scale * um
        } else if j == sb {
            scale * um
        } else {
            -1e3
        };
    }
    rigged
}

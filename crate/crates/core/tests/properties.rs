use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dualstream::codec::{decode_grid, encode_signal, flatten_grid, unflatten, CodecConfig, Signal};
use dualstream::delay::{apply_delay, first_emission_step, revert_delay, DelayPattern};
use dualstream::engine::{sample_logits, Sampling};
use dualstream::grammar::{gen_data, Grammar};
use dualstream::grid::{IdSpace, TokenGrid};
use dualstream::layout::{build_layout, validate_layout, TaskKind, FEATURE_DIM};
use dualstream::model::kernels::gelu;
use dualstream::model::{loss, Fusion, HeadLogits, Model, ModelConfig, StepInput};
use dualstream::vocab::{Special, TokenClass, VocabSpec, MODEL_LAYERS};

fn small_cfg(seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_trunk_blocks: 1,
        n_extension_blocks: 1,
        n_heads: 2,
        seed,
        ..Default::default()
    }
}

// ---- vocab ----

proptest! {
    #[test]
    fn vocab_classify_is_a_bijection(text in 2u32..64, sizes in prop::array::uniform7(2u32..12)) {
        let spec = VocabSpec::new(text, &sizes).unwrap();
        let mut seen = HashSet::new();
        for id in 0..spec.total_size() {
            let c = spec.classify(id).unwrap();
            prop_assert_eq!(spec.id_of(c).unwrap(), id);
            prop_assert!(seen.insert(c));
        }
        prop_assert_eq!(seen.len() as u32, spec.total_size());
        prop_assert!(spec.classify(spec.total_size()).is_err());
        // Specials sit in the tail in their fixed order, PAD first.
        prop_assert_eq!(spec.pad(), text + sizes.iter().sum::<u32>());
        prop_assert_eq!(spec.classify(spec.pad()).unwrap(), TokenClass::Special(Special::Pad));
    }

    #[test]
    fn vocab_build_is_deterministic(text in 2u32..64, sizes in prop::array::uniform7(2u32..12)) {
        let a = serde_json::to_string(&VocabSpec::new(text, &sizes).unwrap()).unwrap();
        let b = serde_json::to_string(&VocabSpec::new(text, &sizes).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}

// ---- codec ----

fn signal_strategy(base: u32) -> impl Strategy<Value = Signal> {
    let limit = (base as u64).pow(7);
    prop::collection::vec(0..limit, 0..40).prop_map(Signal::new)
}

proptest! {
    #[test]
    fn codec_round_trip((base, sig) in (2u32..=8).prop_flat_map(|b| (Just(b), signal_strategy(b)))) {
        let cfg = CodecConfig::new(base).unwrap();
        let grid = encode_signal(&sig, &cfg).unwrap();
        prop_assert_eq!(grid.n_layers(), 7);
        prop_assert_eq!(grid.n_steps(), sig.len());
        prop_assert!(grid.tokens().iter().all(|&t| t < base));
        prop_assert_eq!(decode_grid(&grid, &cfg).unwrap(), sig);
    }

    #[test]
    fn codec_coarse_prefix_is_close(base in 2u32..=8, raw in any::<u64>(), k in 0usize..=7) {
        let cfg = CodecConfig::new(base).unwrap();
        let x = raw % cfg.sample_limit();
        let mut grid = encode_signal(&Signal::new(vec![x]), &cfg).unwrap();
        for l in k..7 {
            grid.set(l, 0, 0);
        }
        let y = decode_grid(&grid, &cfg).unwrap().samples[0];
        // Oracle: dropping the 7-k least significant base-B digits loses less
        // than one unit of the k-th digit.
        let unit = (base as u64).pow((7 - k) as u32);
        prop_assert!(y <= x && x - y < unit, "x={} y={} unit={}", x, y, unit);
    }

    #[test]
    fn flatten_round_trip(layers in 1usize..9, steps in 0usize..30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let toks: Vec<u32> = (0..layers * steps).map(|_| rand::Rng::random_range(&mut rng, 0..1000)).collect();
        let g = TokenGrid::from_tokens(layers, steps, toks, IdSpace::Global).unwrap();
        let flat = flatten_grid(&g);
        prop_assert_eq!(flat.len(), layers * steps);
        prop_assert_eq!(unflatten(&flat, layers, IdSpace::Global).unwrap(), g);
    }
}

// ---- delay ----

fn pattern_strategy() -> impl Strategy<Value = DelayPattern> {
    prop::collection::vec(0usize..10, MODEL_LAYERS - 1).prop_map(|v| {
        DelayPattern::new(std::iter::once(0).chain(v).collect()).unwrap()
    })
}

fn grid_strategy() -> impl Strategy<Value = TokenGrid> {
    (0usize..65).prop_flat_map(|t| {
        prop::collection::vec(0u32..88, MODEL_LAYERS * t)
            .prop_map(move |v| TokenGrid::from_tokens(MODEL_LAYERS, t, v, IdSpace::Global).unwrap())
    })
}

const PAD: u32 = 88;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn delay_laws(grid in grid_strategy(), pattern in pattern_strategy()) {
        let d = apply_delay(&grid, &pattern, PAD).unwrap();
        let t = grid.n_steps();
        let shift = pattern.max_offset();
        prop_assert_eq!(d.n_steps(), t + shift);
        for l in 0..MODEL_LAYERS {
            let off = pattern.offsets()[l];
            for s in 0..d.n_steps() {
                let want = if s >= off && s - off < t { grid.get(l, s - off) } else { PAD };
                prop_assert_eq!(d.get(l, s), want);
            }
        }
        prop_assert_eq!(revert_delay(&d, &pattern, PAD).unwrap(), grid);
    }

    #[test]
    fn default_latency_is_monotone(n in 0usize..10) {
        let p = DelayPattern::default();
        for l in 1..MODEL_LAYERS {
            prop_assert!(first_emission_step(&p, n, l) >= first_emission_step(&p, n, l - 1));
        }
        prop_assert_eq!(first_emission_step(&p, n, 7), 7 + n);
        prop_assert_eq!(first_emission_step(&p, n, 0), 0);
    }
}

// ---- layout ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_layouts_validate(seed in any::<u64>(), advance in 0usize..4) {
        let spec = VocabSpec::uniform(32, 8).unwrap();
        let g = Grammar::for_vocab(&spec).unwrap();
        let pattern = DelayPattern::default();
        // 80 examples cycle through all five tasks.
        let corpus = gen_data(&g, &spec, 80, seed).unwrap();
        for ex in &corpus.examples {
            let lay = build_layout(ex, &spec, &pattern, advance).unwrap();
            let v = validate_layout(&lay, &spec);
            prop_assert!(v.is_empty(), "{:?}: {:?}", ex.task, v);

            let steps = lay.target_ids.n_steps();
            let count = |l: usize| (0..steps).filter(|&s| lay.mask(l, s)).count();
            if ex.task.text_output() {
                prop_assert_eq!(count(0), ex.text_out.len() + 1);
            } else {
                prop_assert_eq!(count(0), 0);
            }
            for l in 1..MODEL_LAYERS {
                let want = if ex.task.audio_output() { ex.signal_out.len() + 1 } else { 0 };
                prop_assert_eq!(count(l), want);
            }
            // Undelaying the targets puts every layer's stream back at step 0.
            let undelayed = revert_delay(&lay.target_ids, &lay.pattern, spec.pad()).unwrap();
            if ex.task.text_output() {
                prop_assert_eq!(&undelayed.row(0)[..ex.text_out.len()], &ex.text_out[..]);
                prop_assert_eq!(undelayed.get(0, ex.text_out.len()), spec.special(Special::EosText));
            }
            if ex.task.audio_output() {
                let audio = dualstream::layout::audio_tokens(&ex.signal_out, &spec).unwrap();
                for l in 1..MODEL_LAYERS {
                    prop_assert_eq!(&undelayed.row(l)[..ex.signal_out.len()], audio.row(l - 1));
                    prop_assert_eq!(undelayed.get(l, ex.signal_out.len()), spec.special(Special::EosAudio));
                }
            }
        }
    }
}

// ---- model ----

fn random_step(spec: &VocabSpec, rng: &mut ChaCha8Rng, position: usize, with_feature: bool) -> StepInput {
    use rand::Rng;
    let ids = std::array::from_fn(|l| loop {
        let id = rng.random_range(0..spec.total_size());
        if spec.is_input_legal(l, id) {
            break id;
        }
    });
    let feature = with_feature.then(|| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
    StepInput { ids, feature, position }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn embed_fuse_matches_oracle(seed in any::<u64>(), with_feature in any::<bool>(), sum in any::<bool>()) {
        let mut cfg = small_cfg(seed % 1000);
        if sum {
            cfg.fusion = Fusion::Sum;
        }
        let model = Model::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_step(&cfg.vocab, &mut rng, 0, with_feature);
        let got = model.embed_fuse(&s.ids, s.feature.as_ref()).unwrap();

        // Oracle: sum of each layer's row for its id, plus the two-layer gelu
        // adapter of the feature, divided by the summand count under mean
        // fusion.
        let d = cfg.d_model;
        let p = model.params();
        let mut want = vec![0.0; d];
        for l in 0..MODEL_LAYERS {
            let table = p.by_name(&format!("embed.layer{l}")).unwrap();
            let id = s.ids[l] as usize;
            for i in 0..d {
                want[i] += table[id * d + i];
            }
        }
        if let Some(f) = &s.feature {
            let (w1, b1) = (p.by_name("adapter.w1").unwrap(), p.by_name("adapter.b1").unwrap());
            let (w2, b2) = (p.by_name("adapter.w2").unwrap(), p.by_name("adapter.b2").unwrap());
            let h: Vec<f64> = (0..d)
                .map(|j| gelu(b1[j] + (0..FEATURE_DIM).map(|i| f[i] * w1[i * d + j]).sum::<f64>()))
                .collect();
            for j in 0..d {
                want[j] += b2[j] + (0..d).map(|i| h[i] * w2[i * d + j]).sum::<f64>();
            }
        }
        let n = if sum { 1.0 } else if with_feature { 9.0 } else { 8.0 };
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w / n).abs() < 1e-12, "{} vs {}", g, w / n);
        }
    }

    #[test]
    fn future_inputs_do_not_change_past_logits(seed in any::<u64>(), len in 2usize..12, cut in 0usize..11) {
        let cut = cut % (len - 1) + 1;
        let cfg = small_cfg(seed % 1000);
        let model = Model::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<StepInput> = (0..len).map(|p| random_step(&cfg.vocab, &mut rng, p, p % 3 == 0)).collect();
        let mut b = a.clone();
        for s in &mut b[cut..] {
            *s = random_step(&cfg.vocab, &mut rng, s.position, s.feature.is_none());
        }
        let la = model.forward_inputs(&a).unwrap();
        let lb = model.forward_inputs(&b).unwrap();
        for l in 0..MODEL_LAYERS {
            for s in 0..cut {
                prop_assert_eq!(la.row(l, s), lb.row(l, s));
            }
        }
    }

    #[test]
    fn heads_give_illegal_ids_zero_probability(seed in any::<u64>()) {
        let cfg = small_cfg(seed % 1000);
        let model = Model::new(cfg.clone()).unwrap();
        let spec = &cfg.vocab;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<StepInput> = (0..4).map(|p| random_step(spec, &mut rng, p, false)).collect();
        let logits = model.forward_inputs(&xs).unwrap();
        for l in 0..MODEL_LAYERS {
            for s in 0..xs.len() {
                let row = logits.row(l, s);
                let mut probs = row.to_vec();
                dualstream::model::kernels::softmax_in_place(&mut probs);
                for id in 0..spec.total_size() {
                    if spec.is_head_legal(l, id) {
                        prop_assert!(row[id as usize].is_finite());
                    } else {
                        prop_assert_eq!(probs[id as usize], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn loss_matches_log_softmax_oracle(seed in any::<u64>(), steps in 1usize..6) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = 5;
        let logits = HeadLogits {
            steps,
            vocab: v,
            data: std::array::from_fn(|_| (0..steps * v).map(|_| rng.random_range(-3.0..3.0)).collect()),
        };
        let targets: Vec<u32> = (0..MODEL_LAYERS * steps).map(|_| rng.random_range(0..v as u32)).collect();
        let mut mask: Vec<bool> = (0..MODEL_LAYERS * steps).map(|_| rng.random_bool(0.5)).collect();
        mask[0] = true;
        let grid = TokenGrid::from_tokens(MODEL_LAYERS, steps, targets.clone(), IdSpace::Global).unwrap();
        let got = loss(&logits, &grid, &mask).unwrap();

        // Oracle: -log(exp(z_t) / sum exp(z)) averaged over masked cells.
        let mut total = 0.0;
        let mut n = 0.0;
        for l in 0..MODEL_LAYERS {
            for s in 0..steps {
                if mask[l * steps + s] {
                    let row = logits.row(l, s);
                    let z: f64 = row.iter().map(|x| x.exp()).sum();
                    total -= (row[targets[l * steps + s] as usize].exp() / z).ln();
                    n += 1.0;
                }
            }
        }
        prop_assert!((got - total / n).abs() < 1e-12);
    }

    #[test]
    fn top_one_equals_greedy(seed in any::<u64>(), temp in 0.1f64..4.0, n in 3usize..40) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut logits: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        logits[rng.random_range(0..n)] = f64::NEG_INFINITY;
        let exclude = vec![rng.random_range(0..n as u32)];
        let greedy = sample_logits(&logits, &exclude, Sampling::Greedy, &mut rng).unwrap();
        let top1 = sample_logits(&logits, &exclude, Sampling::TopK { k: 1, temperature: temp }, &mut rng).unwrap();
        prop_assert_eq!(greedy, top1);
    }
}

#[test]
fn every_task_appears_in_generated_data() {
    let spec = VocabSpec::uniform(32, 8).unwrap();
    let g = Grammar::for_vocab(&spec).unwrap();
    let corpus = gen_data(&g, &spec, 10, 1).unwrap();
    for t in TaskKind::ALL {
        assert_eq!(corpus.filter_tasks(&[t]).len(), 2);
    }
}

use dualstream::grammar::{gen_data, Grammar};
use dualstream::layout::{build_layout, Corpus, InputLayout};
use dualstream::model::{grad_check, train_stage, Model, ModelConfig, Optimizer, ParamGroup, StagePlan, TrainConfig};
use proptest::prelude::*;

fn layouts(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<InputLayout> {
    let g = Grammar::for_vocab(&cfg.vocab).unwrap();
    let corpus = gen_data(&g, &cfg.vocab, n, seed).unwrap();
    corpus
        .examples
        .iter()
        .map(|ex| build_layout(ex, &cfg.vocab, &cfg.pattern, 0).unwrap())
        .collect()
}

#[test]
fn grad_check_desk_config() {
    for seed in 0..3 {
        let cfg = ModelConfig { seed, ..Default::default() };
        let model = Model::new(cfg.clone()).unwrap();
        let lays = layouts(&cfg, 5, seed);
        let batch: Vec<&InputLayout> = lays.iter().collect();
        let t = std::time::Instant::now();
        let r = grad_check(&model, &batch, 1e-4, 200, seed).unwrap();
        eprintln!("seed {seed}: {r:?} in {:?}", t.elapsed());
        assert!(r.max_rel_error < 1e-4);
    }
}

#[test]
fn grad_check_rejects_bad_epsilon() {
    let cfg = ModelConfig { d_model: 16, ..Default::default() };
    let model = Model::new(cfg.clone()).unwrap();
    let lays = layouts(&cfg, 1, 0);
    assert!(grad_check(&model, &[&lays[0]], 1e-2, 10, 0).is_err());
    assert!(grad_check(&model, &[&lays[0]], 1e-7, 10, 0).is_err());
}

fn tiny(seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_trunk_blocks: 1,
        n_extension_blocks: 1,
        n_heads: 2,
        seed,
        ..Default::default()
    }
}

fn corpus(cfg: &ModelConfig, n: usize, seed: u64) -> Corpus {
    gen_data(&Grammar::for_vocab(&cfg.vocab).unwrap(), &cfg.vocab, n, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn frozen_groups_are_bit_identical(seed in 0u64..1000, adam in any::<bool>()) {
        let cfg = tiny(seed);
        let data = corpus(&cfg, 30, seed);
        let train = TrainConfig {
            epochs: [2, 2, 2],
            batch_size: 4,
            optimizer: if adam { Optimizer::adam() } else { Optimizer::Sgd { momentum: 0.9 } },
            seed,
            ..Default::default()
        };
        let mut model = Model::new(cfg).unwrap();
        for plan in StagePlan::all() {
            let before: Vec<(ParamGroup, Vec<f64>)> =
                ParamGroup::ALL.iter().map(|&g| (g, model.params().group_values(g))).collect();
            train_stage(&mut model, &plan, &data, &train).unwrap();
            for (g, old) in before {
                let new = model.params().group_values(g);
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                if plan.trainable_groups.contains(&g) {
                    prop_assert_ne!(bits(&old), bits(&new), "stage {} left {:?} untouched", plan.stage, g);
                } else {
                    prop_assert_eq!(bits(&old), bits(&new), "stage {} moved frozen {:?}", plan.stage, g);
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic(seed in 0u64..1000) {
        let cfg = tiny(seed);
        let data = corpus(&cfg, 20, seed);
        let train = TrainConfig { epochs: [1, 1, 2], batch_size: 4, seed, ..Default::default() };
        let run = || {
            let mut m = Model::new(cfg.clone()).unwrap();
            let metrics: Vec<_> = StagePlan::all()
                .iter()
                .map(|p| train_stage(&mut m, p, &data, &train).unwrap())
                .collect();
            (m.into_params().values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), metrics)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ma, mb);
    }
}

#[test]
fn memorizes_a_small_corpus() {
    let cfg = ModelConfig { d_model: 32, ..tiny(3) };
    let data = corpus(&cfg, 50, 3);
    let train = TrainConfig {
        epochs: [0, 0, 60],
        batch_size: 10,
        optimizer: Optimizer::adam(),
        lr_max: 1e-2,
        lr_min: 1e-3,
        ..Default::default()
    };
    let mut model = Model::new(cfg).unwrap();
    let m = train_stage(&mut model, &StagePlan::standard(3).unwrap(), &data, &train).unwrap();
    eprintln!("loss {:.4} -> {:.4}", m.initial_loss, m.final_loss);
    assert!(m.final_loss < 0.1 * m.initial_loss);
}

#[test]
fn frozen_tensors_get_exactly_zero_gradient() {
    let cfg = tiny(1);
    let model = Model::new(cfg.clone()).unwrap();
    let lays = layouts(&cfg, 5, 1);
    let batch: Vec<&InputLayout> = lays.iter().collect();
    for plan in StagePlan::all() {
        let index = model.params().index();
        let trainable: Vec<bool> = index.tensors.iter().map(|t| plan.trainable_groups.contains(&t.group)).collect();
        let mut grads = vec![0.0; index.total];
        model.loss_and_grad(&batch, &trainable, 1.0, &mut grads).unwrap();
        let mask = model.params().group_mask(&plan.trainable_groups);
        assert!(grads.iter().zip(&mask).all(|(g, &m)| m || *g == 0.0));
        assert!(grads.iter().zip(&mask).any(|(g, &m)| m && *g != 0.0));
    }
}

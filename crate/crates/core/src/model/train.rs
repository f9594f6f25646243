//! Three-stage training: adapters only, then the trunk with adapters frozen,
//! then everything.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamGroup;
use super::transformer::{LossStats, Model};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::layout::{build_layout, Corpus, InputLayout, TaskKind};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: u8,
    pub trainable_groups: Vec<ParamGroup>,
    pub tasks: Vec<TaskKind>,
}

impl StagePlan {
    pub fn standard(stage: u8) -> Result<Self> {
        use ParamGroup::*;
        use TaskKind::*;
        let (trainable_groups, tasks) = match stage {
            1 => (vec![InputAdapter, OutputExtension], vec![Asr, Tts]),
            2 => (vec![Trunk, Embeddings, Heads], vec![Asr, TextQa, AudioQaTextOut]),
            3 => (ParamGroup::ALL.to_vec(), TaskKind::ALL.to_vec()),
            s => return Err(Error::Training(format!("no stage {s}; stages are 1, 2, 3"))),
        };
        Ok(Self {
            stage,
            trainable_groups,
            tasks,
        })
    }

    pub fn all() -> [StagePlan; 3] {
        [1, 2, 3].map(|s| Self::standard(s).expect("standard stage"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Epochs per stage, indexed by stage - 1.
    pub epochs: [usize; 3],
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub text_advance: usize,
    /// Shuffling seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: [4, 4, 4],
            batch_size: 16,
            lr_max: 3e-3,
            lr_min: 3e-5,
            optimizer: Optimizer::Sgd { momentum: 0.9 },
            clip_norm: Some(1.0),
            text_advance: 0,
            seed: 0,
        }
    }
}

pub(crate) const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr_max",
    "lr_min",
    "optimizer",
    "momentum",
    "beta1",
    "beta2",
    "adam_eps",
    "clip_norm",
    "text_advance",
    "seed",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr_max > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 <= lr_min <= lr_max, lr_max > 0 (got {} .. {})",
                self.lr_min, self.lr_max
            )));
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return Err(Error::Config(format!("clip_norm {c} must be positive")));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut c = KvConfig::default();
        let e: Vec<String> = self.epochs.iter().map(usize::to_string).collect();
        c.set("epochs", e.join(","));
        c.set("batch_size", self.batch_size);
        c.set("lr_max", self.lr_max);
        c.set("lr_min", self.lr_min);
        match self.optimizer {
            Optimizer::Sgd { momentum } => {
                c.set("optimizer", "sgd");
                c.set("momentum", momentum);
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                c.set("optimizer", "adam");
                c.set("beta1", beta1);
                c.set("beta2", beta2);
                c.set("adam_eps", eps);
            }
        }
        c.set("clip_norm", self.clip_norm.map_or("none".to_string(), |v| v.to_string()));
        c.set("text_advance", self.text_advance);
        c.set("seed", self.seed);
        c
    }

    /// Reads a `train.`-stripped section; absent keys keep their defaults.
    pub fn from_kv(c: &KvConfig) -> Result<Self> {
        if let Some(k) = c.unknown_keys(TRAIN_KEYS).first() {
            return Err(Error::Config(format!("unknown train key {k}")));
        }
        let d = Self::default();
        let epochs: Vec<usize> = c.get_list_or("epochs", d.epochs.to_vec())?;
        let epochs: [usize; 3] = epochs
            .try_into()
            .map_err(|_| Error::Config("epochs needs three comma separated values".into()))?;
        let optimizer = match c.raw("optimizer").unwrap_or("sgd") {
            "sgd" => Optimizer::Sgd {
                momentum: c.get_or("momentum", 0.9)?,
            },
            "adam" => Optimizer::Adam {
                beta1: c.get_or("beta1", 0.9)?,
                beta2: c.get_or("beta2", 0.999)?,
                eps: c.get_or("adam_eps", 1e-8)?,
            },
            other => return Err(Error::Config(format!("unknown optimizer {other}"))),
        };
        let clip_norm = match c.raw("clip_norm") {
            None => d.clip_norm,
            Some("none") => None,
            Some(_) => Some(c.get_or("clip_norm", 1.0)?),
        };
        let cfg = Self {
            epochs,
            batch_size: c.get_or("batch_size", d.batch_size)?,
            lr_max: c.get_or("lr_max", d.lr_max)?,
            lr_min: c.get_or("lr_min", d.lr_min)?,
            optimizer,
            clip_norm,
            text_advance: c.get_or("text_advance", d.text_advance)?,
            seed: c.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Cosine annealing from `max` at step 0 to `min` at the last step.
pub fn cosine_lr(step: usize, total: usize, max: f64, min: f64) -> f64 {
    if total <= 1 {
        return max;
    }
    let t = step as f64 / (total - 1) as f64;
    min + 0.5 * (max - min) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub loss: f64,
    pub token_accuracy: f64,
    pub cells: usize,
}

impl TaskMetrics {
    fn from_stats(s: &LossStats) -> Self {
        Self {
            loss: s.mean(),
            token_accuracy: s.correct as f64 / s.cells as f64,
            cells: s.cells,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, before each update.
    pub loss: f64,
    pub token_accuracy: f64,
    pub lr_end: f64,
    pub per_task: BTreeMap<String, TaskMetrics>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: u8,
    pub examples: usize,
    pub steps: usize,
    /// Teacher-forced loss over the stage corpus before the first update.
    pub initial_loss: f64,
    /// The same after the last update.
    pub final_loss: f64,
    pub epochs: Vec<EpochMetrics>,
    /// Teacher-forced metrics per task after the last update.
    pub final_per_task: BTreeMap<String, TaskMetrics>,
}

/// Builds layouts for the tasks of `plan`.
pub fn stage_layouts(model: &Model, plan: &StagePlan, corpus: &Corpus, text_advance: usize) -> Result<Vec<InputLayout>> {
    let filtered = corpus.filter_tasks(&plan.tasks);
    if filtered.is_empty() {
        return Err(Error::Training(format!(
            "no examples for stage {} tasks {:?}",
            plan.stage, plan.tasks
        )));
    }
    let cfg = model.config();
    filtered
        .examples
        .iter()
        .map(|ex| build_layout(ex, &cfg.vocab, &cfg.pattern, text_advance))
        .collect()
}

/// Teacher-forced metrics per task, evaluated in chunks of `batch`.
pub fn evaluate_tasks(model: &Model, layouts: &[InputLayout], batch: usize) -> Result<(LossStats, BTreeMap<String, TaskMetrics>)> {
    let mut by_task: BTreeMap<TaskKind, Vec<&InputLayout>> = BTreeMap::new();
    for l in layouts {
        by_task.entry(l.task).or_default().push(l);
    }
    let mut total = LossStats::default();
    let mut out = BTreeMap::new();
    for (task, lays) in by_task {
        let mut s = LossStats::default();
        for chunk in lays.chunks(batch.max(1)) {
            s.add(&model.evaluate(chunk)?);
        }
        total.add(&s);
        out.insert(task.name().to_string(), TaskMetrics::from_stats(&s));
    }
    Ok((total, out))
}

struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Runs one stage in place. Entries outside `plan.trainable_groups` are
/// never written. Trainable entries are rounded to f32 at the end so the
/// stage result survives a checkpoint round trip exactly.
pub fn train_stage(model: &mut Model, plan: &StagePlan, corpus: &Corpus, cfg: &TrainConfig) -> Result<StageMetrics> {
    cfg.validate()?;
    let layouts = stage_layouts(model, plan, corpus, cfg.text_advance)?;
    let index = model.params().index().clone();
    let trainable: Vec<bool> = index
        .tensors
        .iter()
        .map(|t| plan.trainable_groups.contains(&t.group))
        .collect();
    let ranges: Vec<std::ops::Range<usize>> = index
        .tensors
        .iter()
        .zip(&trainable)
        .filter(|(_, &tr)| tr)
        .map(|(t, _)| t.range())
        .collect();

    let epochs = cfg.epochs[(plan.stage as usize).clamp(1, 3) - 1];
    let batches_per_epoch = layouts.len().div_ceil(cfg.batch_size);
    let total_steps = epochs * batches_per_epoch;
    let (initial, _) = evaluate_tasks(model, &layouts, cfg.batch_size)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (plan.stage as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..layouts.len()).collect();
    let mut grads = vec![0.0; index.total];
    let mut opt = OptState {
        m: vec![0.0; index.total],
        v: match cfg.optimizer {
            Optimizer::Adam { .. } => vec![0.0; index.total],
            Optimizer::Sgd { .. } => Vec::new(),
        },
        t: 0,
    };
    let mut metrics = StageMetrics {
        stage: plan.stage,
        examples: layouts.len(),
        steps: total_steps,
        initial_loss: initial.mean(),
        ..Default::default()
    };
    let mut step = 0;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_stats = LossStats::default();
        let mut task_stats: BTreeMap<TaskKind, LossStats> = BTreeMap::new();
        let mut lr = cfg.lr_max;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&InputLayout> = chunk.iter().map(|&i| &layouts[i]).collect();
            let cells: usize = batch.iter().map(|l| l.mask_count()).sum();
            if cells == 0 {
                continue;
            }
            for r in &ranges {
                grads[r.clone()].fill(0.0);
            }
            // Per-example evaluation keeps per-task statistics exact; the
            // gradient of the batch mean is the sum of scaled parts.
            for lay in &batch {
                let s = model.loss_and_grad(std::slice::from_ref(lay), &trainable, 1.0 / cells as f64, &mut grads)?;
                epoch_stats.add(&s);
                task_stats.entry(lay.task).or_default().add(&s);
            }
            if let Some(clip) = cfg.clip_norm {
                let norm = ranges
                    .iter()
                    .flat_map(|r| grads[r.clone()].iter())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > clip {
                    let k = clip / norm;
                    for r in &ranges {
                        grads[r.clone()].iter_mut().for_each(|g| *g *= k);
                    }
                }
            }
            lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
            apply_update(model.params_mut().values_mut(), &grads, &ranges, &mut opt, cfg.optimizer, lr);
            step += 1;
        }
        metrics.epochs.push(EpochMetrics {
            epoch,
            loss: epoch_stats.mean(),
            token_accuracy: epoch_stats.correct as f64 / epoch_stats.cells as f64,
            lr_end: lr,
            per_task: task_stats
                .iter()
                .map(|(t, s)| (t.name().to_string(), TaskMetrics::from_stats(s)))
                .collect(),
        });
    }
    let values = model.params_mut().values_mut();
    for r in &ranges {
        for v in &mut values[r.clone()] {
            *v = *v as f32 as f64;
        }
    }
    let (fin, per_task) = evaluate_tasks(model, &layouts, cfg.batch_size)?;
    metrics.final_loss = fin.mean();
    metrics.final_per_task = per_task;
    Ok(metrics)
}

fn apply_update(
    values: &mut [f64],
    grads: &[f64],
    ranges: &[std::ops::Range<usize>],
    opt: &mut OptState,
    kind: Optimizer,
    lr: f64,
) {
    opt.t += 1;
    match kind {
        Optimizer::Sgd { momentum } => {
            for r in ranges {
                for i in r.clone() {
                    opt.m[i] = momentum * opt.m[i] + grads[i];
                    values[i] -= lr * opt.m[i];
                }
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let c1 = 1.0 - beta1.powi(opt.t as i32);
            let c2 = 1.0 - beta2.powi(opt.t as i32);
            for r in ranges {
                for i in r.clone() {
                    let g = grads[i];
                    opt.m[i] = beta1 * opt.m[i] + (1.0 - beta1) * g;
                    opt.v[i] = beta2 * opt.v[i] + (1.0 - beta2) * g * g;
                    values[i] -= lr * (opt.m[i] / c1) / ((opt.v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 3e-3, 3e-5), 3e-3);
        assert!((cosine_lr(99, 100, 3e-3, 3e-5) - 3e-5).abs() < 1e-18);
        let mid = cosine_lr(50, 101, 1.0, 0.0);
        assert!((mid - 0.5).abs() < 1e-12);
        for s in 1..100 {
            assert!(cosine_lr(s, 100, 3e-3, 3e-5) <= cosine_lr(s - 1, 100, 3e-3, 3e-5));
        }
    }

    #[test]
    fn stage_plans() {
        let [s1, s2, s3] = StagePlan::all();
        assert_eq!(s1.trainable_groups, vec![ParamGroup::InputAdapter, ParamGroup::OutputExtension]);
        assert!(!s2.trainable_groups.contains(&ParamGroup::InputAdapter));
        assert!(!s2.trainable_groups.contains(&ParamGroup::OutputExtension));
        assert_eq!(s3.tasks.len(), 5);
        assert!(StagePlan::standard(4).is_err());
    }

    #[test]
    fn kv_roundtrip() {
        let mut cfg = TrainConfig {
            epochs: [1, 2, 3],
            optimizer: Optimizer::adam(),
            clip_norm: None,
            ..Default::default()
        };
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        cfg.optimizer = Optimizer::Sgd { momentum: 0.5 };
        cfg.clip_norm = Some(2.5);
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }
}

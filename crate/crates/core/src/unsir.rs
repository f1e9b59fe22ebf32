//! Selective impair-and-repair unlearning and the reference methods it is
//! compared against.
//!
//! UNSIR learns one error-maximizing noise batch per forget class against a
//! frozen copy of the trained model, then runs `cycles` rounds of
//!
//! 1. **impair**: SGD at a high learning rate on the retain subset mixed with
//!    the replicated noise (one shuffled stream), and
//! 2. **repair**: SGD at a lower learning rate on the retain subset alone.
//!
//! No real sample of a forget class is ever read. Every batch fed to either
//! stage passes through a [`DataAudit`] that aborts the run if one shows up.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{per_class_count_for_fraction, sample_retain_subset, Batch, ClassPartition, LabeledDataset, Origin, RetainSubset};
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::models::{build_model, run_epoch, train, Direction, EpochHooks, Model, ModelSpec, TrainConfig};
use crate::noise::{build_noise_dataset, synthesize_noises, NoiseConfig, NoiseMatrix};
use crate::optim::{Sgd, SgdRule};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnsirConfig {
    pub impair_lr: f32,
    pub repair_lr: f32,
    pub impair_epochs: usize,
    pub repair_epochs: usize,
    pub cycles: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub momentum: f32,
    /// Samples drawn per retain class for the retain subset.
    pub retain_per_class: usize,
    /// When set, overrides `retain_per_class` with this fraction of each class.
    #[serde(default)]
    pub retain_fraction: Option<f64>,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for UnsirConfig {
    fn default() -> Self {
        UnsirConfig {
            impair_lr: 0.02,
            repair_lr: 0.01,
            impair_epochs: 1,
            repair_epochs: 1,
            cycles: 1,
            batch_size: 64,
            momentum: 0.0,
            retain_per_class: 100,
            retain_fraction: None,
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }
}

impl UnsirConfig {
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.cycles == 0 {
            return Err(Error::Parameter {
                name: "cycles",
                msg: "must be at least 1".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter {
                name: "batch_size",
                msg: "must be at least 1".into(),
            });
        }
        self.noise.validate()?;
        let mut warnings = Vec::new();
        if self.impair_lr <= self.repair_lr {
            warnings.push(format!(
                "impair_lr {} is not above repair_lr {}; impair is expected to use the higher rate",
                self.impair_lr, self.repair_lr
            ));
        }
        Ok(warnings)
    }
}

/// Tallies every sample that reaches a gradient step during unlearning.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataAudit {
    pub real_samples: usize,
    pub noise_samples: usize,
    pub batches: usize,
    /// Per-class counts of real samples consumed.
    pub real_label_counts: Vec<usize>,
}

impl DataAudit {
    fn inspect(&mut self, batch: &Batch, forget: &BTreeSet<usize>, stage: &'static str) -> Result<()> {
        self.batches += 1;
        for (&label, &origin) in batch.labels.iter().zip(&batch.origins) {
            match origin {
                Origin::Noise => self.noise_samples += 1,
                Origin::Real => {
                    if forget.contains(&label) {
                        return Err(Error::ZeroGlance { stage, label });
                    }
                    if self.real_label_counts.len() <= label {
                        self.real_label_counts.resize(label + 1, 0);
                    }
                    self.real_label_counts[label] += 1;
                    self.real_samples += 1;
                }
            }
        }
        Ok(())
    }

    /// True if no real sample of any class in `forget` was consumed.
    pub fn is_zero_glance(&self, forget: &BTreeSet<usize>) -> bool {
        forget
            .iter()
            .all(|&c| self.real_label_counts.get(c).copied().unwrap_or(0) == 0)
    }
}

fn check_subset(subset: &RetainSubset, stage: &'static str) -> Result<()> {
    for (&label, &origin) in subset.subset.labels().iter().zip(subset.subset.origins()) {
        if origin == Origin::Real && subset.forget_classes.contains(&label) {
            return Err(Error::ZeroGlance { stage, label });
        }
    }
    Ok(())
}

/// Learning-rate/epoch/batch settings shared by impair and repair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageParams {
    pub lr: f32,
    pub momentum: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

fn run_stage(
    model: &mut Model,
    stream: &LabeledDataset,
    forget: &BTreeSet<usize>,
    p: &StageParams,
    stage: &'static str,
    audit: &mut DataAudit,
) -> Result<usize> {
    let mut opt = Sgd::new(SgdRule {
        learning_rate: p.lr,
        momentum: p.momentum,
    });
    for e in 0..p.epochs {
        let hooks = EpochHooks {
            before_step: Some(Box::new(|b: &Batch| audit.inspect(b, forget, stage))),
            after_step: None,
        };
        run_epoch(
            model,
            stream,
            p.batch_size,
            &mut opt,
            Some(derive_seed(p.seed, &format!("{stage}{e}"))),
            Direction::Descent,
            e,
            hooks,
        )?;
    }
    Ok(p.epochs)
}

/// Cross-entropy SGD over the shuffled union of the retain subset and the noise set.
/// Returns the number of epochs executed.
pub fn impair(
    model: &mut Model,
    retain: &RetainSubset,
    noise: &LabeledDataset,
    params: &StageParams,
    audit: &mut DataAudit,
) -> Result<usize> {
    check_subset(retain, "impair")?;
    if !noise.is_all_noise() {
        return Err(Error::contract("impair noise set contains real samples"));
    }
    if let Some(&l) = noise.labels().iter().find(|l| !retain.forget_classes.contains(l)) {
        return Err(Error::contract(format!("noise sample labelled {l}, which is not a forget class")));
    }
    let stream = retain.subset.concat(noise)?;
    run_stage(model, &stream, &retain.forget_classes, params, "impair", audit)
}

/// Cross-entropy SGD on the retain subset alone. Returns the number of epochs executed.
pub fn repair(model: &mut Model, retain: &RetainSubset, params: &StageParams, audit: &mut DataAudit) -> Result<usize> {
    check_subset(retain, "repair")?;
    run_stage(model, &retain.subset, &retain.forget_classes, params, "repair", audit)
}

/// Held-out splits used for the accuracy snapshots.
#[derive(Debug, Clone, Copy)]
pub struct Probe<'a> {
    pub forget: &'a LabeledDataset,
    pub retain: &'a LabeledDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSnapshot {
    pub stage: String,
    pub forget_accuracy: f64,
    pub retain_accuracy: f64,
    /// Wall-clock seconds for the stage. Excluded from deterministic reports.
    #[serde(default)]
    pub seconds: f64,
}

impl Probe<'_> {
    pub fn snapshot(&self, model: &Model, stage: impl Into<String>, seconds: f64) -> Result<StageSnapshot> {
        Ok(StageSnapshot {
            stage: stage.into(),
            forget_accuracy: accuracy(model, self.forget)?,
            retain_accuracy: accuracy(model, self.retain)?,
            seconds,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Unsir,
    Retrain,
    Finetune,
    Neggrad,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Unsir => "unsir",
            Method::Retrain => "retrain",
            Method::Finetune => "finetune",
            Method::Neggrad => "neggrad",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unsir" | "ours" => Ok(Method::Unsir),
            "retrain" => Ok(Method::Retrain),
            "finetune" => Ok(Method::Finetune),
            "neggrad" => Ok(Method::Neggrad),
            other => Err(Error::Parameter {
                name: "method",
                msg: format!("unknown method `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub class_label: usize,
    pub initial_ce: f64,
    pub final_ce: f64,
    pub norm: f64,
    pub initial_objective: f64,
    pub final_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnRecord {
    pub method: Method,
    pub forget_classes: Vec<usize>,
    pub initial: StageSnapshot,
    /// For UNSIR: after-impair / after-repair pairs, one per cycle.
    pub stages: Vec<StageSnapshot>,
    pub impair_epochs_run: usize,
    pub repair_epochs_run: usize,
    /// False for methods that train on forget-class samples.
    pub zero_glance: bool,
    pub audit: Option<DataAudit>,
    pub noise: Vec<NoiseSummary>,
    #[serde(default)]
    pub noise_seconds: f64,
    pub warnings: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
}

impl UnlearnRecord {
    pub fn final_snapshot(&self) -> &StageSnapshot {
        self.stages.last().unwrap_or(&self.initial)
    }
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub model: Model,
    pub record: UnlearnRecord,
    pub noises: Vec<NoiseMatrix>,
    pub retain_subset: Option<RetainSubset>,
}

/// Draws the retain subset described by `cfg` (per-class count or fraction).
pub fn draw_retain_subset(partition: &ClassPartition, cfg: &UnsirConfig) -> Result<RetainSubset> {
    let count = match cfg.retain_fraction {
        Some(f) => per_class_count_for_fraction(partition, f)?,
        None => cfg.retain_per_class,
    };
    sample_retain_subset(partition, count, derive_seed(cfg.seed, "retain_subset"))
}

/// Full pipeline: noise synthesis per forget class, then `cycles` × (impair, repair).
/// The input model is left untouched; the unlearned copy is returned.
pub fn unsir_unlearn(
    model: &Model,
    partition: &ClassPartition,
    probe: Probe<'_>,
    cfg: &UnsirConfig,
) -> Result<UnlearnOutcome> {
    unsir_unlearn_classes(model, partition, partition.forget_classes(), probe, cfg)
}

/// Like [`unsir_unlearn`], but synthesizes noise only for `noise_classes`.
///
/// Used by sequential requests: the partition excludes every class forgotten
/// so far, while only the newly requested classes get a noise matrix.
pub fn unsir_unlearn_classes(
    model: &Model,
    partition: &ClassPartition,
    noise_classes: &BTreeSet<usize>,
    probe: Probe<'_>,
    cfg: &UnsirConfig,
) -> Result<UnlearnOutcome> {
    let warnings = cfg.validate()?;
    if noise_classes.is_empty() || !noise_classes.is_subset(partition.forget_classes()) {
        return Err(Error::contract("noise classes must be a nonempty subset of the forget classes"));
    }
    let subset = draw_retain_subset(partition, cfg)?;
    let forget = partition.forget_classes().clone();
    let initial = probe.snapshot(model, "before", 0.0)?;

    let mut frozen = model.clone();
    frozen.freeze();
    let hash_before = frozen.param_hash();
    let started = Instant::now();
    let noise_cfg = NoiseConfig {
        seed: derive_seed(cfg.seed, "noise"),
        ..cfg.noise.clone()
    };
    let noises = synthesize_noises(&frozen, noise_classes, &noise_cfg)?;
    let noise_seconds = started.elapsed().as_secs_f64();
    if frozen.param_hash() != hash_before {
        return Err(Error::contract("noise synthesis modified the frozen model"));
    }
    let noise_ds = build_noise_dataset(&noises, cfg.noise.copies)?;

    let mut working = model.clone();
    working.unfreeze();
    let mut audit = DataAudit::default();
    let mut stages = Vec::with_capacity(2 * cfg.cycles);
    let (mut impair_runs, mut repair_runs) = (0, 0);
    for cycle in 0..cfg.cycles {
        let t = Instant::now();
        impair_runs += impair(
            &mut working,
            &subset,
            &noise_ds,
            &StageParams {
                lr: cfg.impair_lr,
                momentum: cfg.momentum,
                epochs: cfg.impair_epochs,
                batch_size: cfg.batch_size,
                seed: derive_seed(cfg.seed, &format!("impair_cycle{cycle}")),
            },
            &mut audit,
        )?;
        stages.push(probe.snapshot(&working, format!("after_impair_{}", cycle + 1), t.elapsed().as_secs_f64())?);

        let t = Instant::now();
        repair_runs += repair(
            &mut working,
            &subset,
            &StageParams {
                lr: cfg.repair_lr,
                momentum: cfg.momentum,
                epochs: cfg.repair_epochs,
                batch_size: cfg.batch_size,
                seed: derive_seed(cfg.seed, &format!("repair_cycle{cycle}")),
            },
            &mut audit,
        )?;
        stages.push(probe.snapshot(&working, format!("after_repair_{}", cycle + 1), t.elapsed().as_secs_f64())?);
    }

    let record = UnlearnRecord {
        method: Method::Unsir,
        forget_classes: forget.iter().copied().collect(),
        initial,
        stages,
        impair_epochs_run: impair_runs,
        repair_epochs_run: repair_runs,
        zero_glance: audit.is_zero_glance(&forget),
        audit: Some(audit),
        noise: noises
            .iter()
            .map(|n| NoiseSummary {
                class_label: n.class_label,
                initial_ce: n.initial_ce(),
                final_ce: n.final_ce(),
                norm: n.norm(),
                initial_objective: n.loss_trace[0],
                final_objective: *n.loss_trace.last().unwrap_or(&f64::NAN),
            })
            .collect(),
        noise_seconds,
        warnings,
        config: serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null),
        seed: cfg.seed,
    };
    Ok(UnlearnOutcome {
        model: working,
        record,
        noises,
        retain_subset: Some(subset),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Settings used to train the original model; Retrain reuses them.
    pub retrain: TrainConfig,
    pub finetune_epochs: usize,
    pub finetune_lr: f32,
    pub neggrad_lr: f32,
    /// NegGrad stops as soon as its forget-set accuracy falls below this.
    pub neggrad_stop_below: f64,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Retrain,
    Finetune,
    Neggrad,
}

impl BaselineKind {
    pub fn method(&self) -> Method {
        match self {
            BaselineKind::Retrain => Method::Retrain,
            BaselineKind::Finetune => Method::Finetune,
            BaselineKind::Neggrad => Method::Neggrad,
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retrain" => Ok(BaselineKind::Retrain),
            "finetune" => Ok(BaselineKind::Finetune),
            "neggrad" => Ok(BaselineKind::Neggrad),
            other => Err(Error::Parameter {
                name: "baseline",
                msg: format!("unknown baseline `{other}`"),
            }),
        }
    }
}

/// Retrain (fresh model on the retain set), FineTune (continue on the retain
/// set) or NegGrad (gradient ascent on the forget set; not zero-glance).
pub fn run_baseline(
    kind: BaselineKind,
    model: &Model,
    partition: &ClassPartition,
    probe: Probe<'_>,
    cfg: &BaselineConfig,
) -> Result<UnlearnOutcome> {
    let initial = probe.snapshot(model, "before", 0.0)?;
    let t = Instant::now();
    let mut audit = DataAudit::default();
    let forget = partition.forget_classes().clone();
    let out = match kind {
        BaselineKind::Retrain => {
            let spec = ModelSpec {
                init_seed: derive_seed(model.spec().init_seed, "retrain"),
                ..model.spec().clone()
            };
            let mut fresh = build_model(&spec)?;
            let hp = TrainConfig {
                seed: derive_seed(cfg.seed, "retrain"),
                ..cfg.retrain.clone()
            };
            train(&mut fresh, partition.retain_set(), &hp)?;
            fresh
        }
        BaselineKind::Finetune => {
            let mut m = model.clone();
            m.unfreeze();
            let mut opt = Sgd::new(SgdRule::new(cfg.finetune_lr));
            for e in 0..cfg.finetune_epochs {
                let hooks = EpochHooks {
                    before_step: Some(Box::new(|b: &Batch| audit.inspect(b, &forget, "finetune"))),
                    after_step: None,
                };
                run_epoch(
                    &mut m,
                    partition.retain_set(),
                    cfg.batch_size,
                    &mut opt,
                    Some(derive_seed(cfg.seed, &format!("finetune{e}"))),
                    Direction::Descent,
                    e,
                    hooks,
                )?;
            }
            m
        }
        BaselineKind::Neggrad => {
            let mut m = model.clone();
            m.unfreeze();
            let mut opt = Sgd::new(SgdRule::new(cfg.neggrad_lr));
            let forget_set = partition.forget_set();
            let stop = cfg.neggrad_stop_below;
            let hooks = EpochHooks {
                before_step: None,
                after_step: Some(Box::new(move |m: &Model| Ok(accuracy(m, forget_set)? < stop))),
            };
            run_epoch(
                &mut m,
                forget_set,
                cfg.batch_size,
                &mut opt,
                Some(derive_seed(cfg.seed, "neggrad")),
                Direction::Ascent,
                0,
                hooks,
            )?;
            m
        }
    };
    let seconds = t.elapsed().as_secs_f64();
    let stages = vec![probe.snapshot(&out, "after", seconds)?];
    let record = UnlearnRecord {
        method: kind.method(),
        forget_classes: forget.iter().copied().collect(),
        initial,
        stages,
        impair_epochs_run: 0,
        repair_epochs_run: 0,
        zero_glance: kind != BaselineKind::Neggrad,
        audit: (kind == BaselineKind::Finetune).then_some(audit),
        noise: Vec::new(),
        noise_seconds: 0.0,
        warnings: Vec::new(),
        config: serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null),
        seed: cfg.seed,
    };
    Ok(UnlearnOutcome {
        model: out,
        record,
        noises: Vec::new(),
        retain_subset: None,
    })
}

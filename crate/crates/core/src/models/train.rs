use serde::{Deserialize, Serialize};

use super::{argmax_rows, Model};
use crate::data::{batches, Batch, LabeledDataset};
use crate::error::{Error, Result};
use crate::optim::{Sgd, SgdRule};
use crate::rng::derive_seed;
use crate::tape::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    #[serde(default)]
    pub momentum: f32,
    pub seed: u64,
}

impl TrainConfig {
    pub fn rule(&self) -> SgdRule {
        SgdRule {
            learning_rate: self.lr,
            momentum: self.momentum,
        }
    }
}

/// Loss descent (ordinary training) or ascent (NegGrad).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sample-weighted mean batch loss, measured before each update.
    pub loss: f64,
    /// Running accuracy of the pre-update predictions.
    pub accuracy: f64,
    pub samples: usize,
    pub batches: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainingHistory {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.accuracy)
    }
}

/// Callbacks around each optimization step.
#[derive(Default)]
pub struct EpochHooks<'a> {
    /// Sees every batch before it is used; an error aborts the epoch.
    pub before_step: Option<Box<dyn FnMut(&Batch) -> Result<()> + 'a>>,
    /// Runs after every update; returning `true` ends the epoch early.
    pub after_step: Option<Box<dyn FnMut(&Model) -> Result<bool> + 'a>>,
}

/// One pass of mini-batch SGD over `ds`.
pub fn run_epoch(
    model: &mut Model,
    ds: &LabeledDataset,
    batch_size: usize,
    opt: &mut Sgd,
    shuffle_seed: Option<u64>,
    direction: Direction,
    epoch: usize,
    mut hooks: EpochHooks<'_>,
) -> Result<EpochStats> {
    if model.is_frozen() {
        return Err(Error::contract("cannot train a frozen model"));
    }
    if ds.num_classes() != model.spec().num_classes {
        return Err(Error::contract(format!(
            "dataset has {} classes, model has {}",
            ds.num_classes(),
            model.spec().num_classes
        )));
    }
    opt.rule.validate()?;
    let mut stats = EpochStats {
        epoch,
        loss: 0.0,
        accuracy: 0.0,
        samples: 0,
        batches: 0,
        stopped_early: false,
    };
    let mut correct = 0usize;
    let mut tape = Tape::new();
    for (b, batch) in batches(ds, batch_size, shuffle_seed)?.enumerate() {
        if let Some(hook) = hooks.before_step.as_mut() {
            hook(&batch)?;
        }
        let diverged = |e: Error| match e {
            Error::NonFinite(_) => Error::Diverged { epoch, batch: b },
            other => other,
        };
        tape.clear();
        let bound = model.bind(&mut tape, true)?;
        let x = tape.leaf(batch.inputs)?;
        let logits = model.forward(&mut tape, &bound, x).map_err(diverged)?;
        let loss = tape.softmax_cross_entropy(logits, &batch.labels).map_err(diverged)?;
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::Diverged { epoch, batch: b });
        }
        let objective = match direction {
            Direction::Descent => loss,
            Direction::Ascent => tape.scale(loss, -1.0)?,
        };
        tape.backward(objective)?;

        let n = batch.labels.len();
        let preds = argmax_rows(tape.value(logits));
        correct += preds.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
        stats.loss += loss_value as f64 * n as f64;
        stats.samples += n;
        stats.batches += 1;

        model.zero_grad();
        model.accumulate_grads(&tape, &bound)?;
        opt.step(model.params_mut()?)?;
        model.zero_grad();
        if model.params().iter().any(|(_, p)| !p.is_finite()) {
            return Err(Error::Diverged { epoch, batch: b });
        }
        if let Some(hook) = hooks.after_step.as_mut() {
            if hook(model)? {
                stats.stopped_early = true;
                break;
            }
        }
    }
    if stats.samples > 0 {
        stats.loss /= stats.samples as f64;
        stats.accuracy = correct as f64 / stats.samples as f64;
    }
    Ok(stats)
}

/// Trains `model` in place with cross-entropy SGD. Epoch `e` shuffles with
/// `derive_seed(seed, "epoch{e}")`.
pub fn train(model: &mut Model, ds: &LabeledDataset, hp: &TrainConfig) -> Result<TrainingHistory> {
    let mut history = TrainingHistory::default();
    if hp.epochs == 0 {
        return Ok(history);
    }
    if ds.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let mut opt = Sgd::new(hp.rule());
    for e in 0..hp.epochs {
        let seed = derive_seed(hp.seed, &format!("epoch{e}"));
        let stats = run_epoch(
            model,
            ds,
            hp.batch_size,
            &mut opt,
            Some(seed),
            Direction::Descent,
            e,
            EpochHooks::default(),
        )?;
        history.epochs.push(stats);
    }
    Ok(history)
}

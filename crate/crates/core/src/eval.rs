//! Readouts: accuracy, relearn time, weight distance, prediction histogram.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{batches, LabeledDataset};
use crate::error::{Error, Result};
use crate::models::{run_epoch, Direction, EpochHooks, Model};
use crate::optim::{Sgd, SgdRule};
use crate::rng::{derive_seed, SplitMix64};

const EVAL_BATCH: usize = 256;

/// Predicted labels for every sample, in dataset order.
pub fn predictions(model: &Model, ds: &LabeledDataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ds.len());
    for b in batches(ds, EVAL_BATCH, None)? {
        out.extend(model.predict(&b.inputs)?.0);
    }
    Ok(out)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(model: &Model, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::contract("accuracy of an empty dataset is undefined"));
    }
    let preds = predictions(model, ds)?;
    let correct = preds.iter().zip(ds.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / ds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelearnConfig {
    pub samples_per_epoch: usize,
    pub lr: f32,
    pub cap: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RelearnConfig {
    fn default() -> Self {
        RelearnConfig {
            samples_per_epoch: 500,
            lr: 0.05,
            cap: 100,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Epochs needed to regain the target forget accuracy, or the cap if never reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelearnTime {
    Epochs(usize),
    ExceededCap(usize),
}

impl RelearnTime {
    /// Epoch count, with the cap standing in for "never".
    pub fn lower_bound(&self) -> usize {
        match *self {
            RelearnTime::Epochs(e) | RelearnTime::ExceededCap(e) => e,
        }
    }
}

impl fmt::Display for RelearnTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelearnTime::Epochs(e) => write!(f, "{e}"),
            RelearnTime::ExceededCap(c) => write!(f, ">{c}"),
        }
    }
}

/// Retrains a private copy of `model`, one epoch at a time, on fresh random
/// draws of `samples_per_epoch` samples from the full training set, until its
/// accuracy on `forget_eval` reaches `target`.
pub fn relearn_time(
    model: &Model,
    full_train: &LabeledDataset,
    forget_eval: &LabeledDataset,
    target: f64,
    cfg: &RelearnConfig,
) -> Result<RelearnTime> {
    if cfg.cap < 1 {
        return Err(Error::Parameter {
            name: "relearn.cap",
            msg: "must be at least 1".into(),
        });
    }
    if full_train.is_empty() {
        return Err(Error::contract("relearning needs training data"));
    }
    if accuracy(model, forget_eval)? >= target {
        return Ok(RelearnTime::Epochs(0));
    }
    let mut copy = model.clone();
    copy.unfreeze();
    let mut opt = Sgd::new(SgdRule::new(cfg.lr));
    let draw = cfg.samples_per_epoch.min(full_train.len());
    for epoch in 1..=cfg.cap {
        let mut idx: Vec<usize> = (0..full_train.len()).collect();
        let mut rng = SplitMix64::new(derive_seed(cfg.seed, &format!("relearn{epoch}")));
        // Partial Fisher–Yates: the first `draw` slots become a uniform sample.
        for i in 0..draw {
            let j = i + rng.below(idx.len() - i);
            idx.swap(i, j);
        }
        idx.truncate(draw);
        let sample = full_train.select(&idx);
        run_epoch(
            &mut copy,
            &sample,
            cfg.batch_size,
            &mut opt,
            Some(rng.next_u64()),
            Direction::Descent,
            epoch,
            EpochHooks::default(),
        )?;
        if accuracy(&copy, forget_eval)? >= target {
            return Ok(RelearnTime::Epochs(epoch));
        }
    }
    Ok(RelearnTime::ExceededCap(cfg.cap))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDistance {
    pub per_layer: Vec<(String, f64)>,
    /// Norm of the difference over all parameters concatenated.
    pub total: f64,
}

/// Euclidean distance between matching parameters of two same-spec models.
pub fn layer_weight_distance(a: &Model, b: &Model) -> Result<WeightDistance> {
    let (sa, sb) = (a.spec(), b.spec());
    // Initialization seeds may differ (retrained models); the layout may not.
    if sa.architecture != sb.architecture
        || sa.widths != sb.widths
        || sa.strides != sb.strides
        || sa.input_shape != sb.input_shape
        || sa.num_classes != sb.num_classes
    {
        return Err(Error::contract("weight distance needs models with identical layouts"));
    }
    if a.params().len() != b.params().len() {
        return Err(Error::contract("parameter lists differ in length"));
    }
    let mut per_layer = Vec::with_capacity(a.params().len());
    let mut total_sq = 0.0f64;
    for ((na, ta), (nb, tb)) in a.params().iter().zip(b.params()) {
        if na != nb || ta.shape() != tb.shape() {
            return Err(Error::contract(format!("parameter `{na}` does not match `{nb}`")));
        }
        let sq: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum();
        total_sq += sq;
        per_layer.push((na.clone(), sq.sqrt()));
    }
    Ok(WeightDistance {
        per_layer,
        total: total_sq.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionHistogram {
    pub counts: Vec<usize>,
    /// `max(counts) / sum(counts)`.
    pub max_concentration: f64,
}

impl PredictionHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Largest share captured by any class outside `excluded`.
    pub fn max_share_excluding(&self, excluded: &std::collections::BTreeSet<usize>) -> f64 {
        let total = self.total().max(1) as f64;
        self.counts
            .iter()
            .enumerate()
            .filter(|(c, _)| !excluded.contains(c))
            .map(|(_, &n)| n as f64 / total)
            .fold(0.0, f64::max)
    }
}

/// Counts of predicted classes over the forget samples (self-predictions included).
pub fn prediction_histogram(model: &Model, forget_eval: &LabeledDataset) -> Result<PredictionHistogram> {
    if forget_eval.is_empty() {
        return Err(Error::contract("prediction histogram of an empty dataset"));
    }
    let mut counts = vec![0usize; model.spec().num_classes];
    for p in predictions(model, forget_eval)? {
        counts[p] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    Ok(PredictionHistogram {
        max_concentration: max as f64 / forget_eval.len() as f64,
        counts,
    })
}

/// All readouts for one model against the original it was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub forget_classes: Vec<usize>,
    pub forget_accuracy: f64,
    pub retain_accuracy: f64,
    pub relearn_time: Option<RelearnTime>,
    pub weight_distance: Option<WeightDistance>,
    pub histogram: Option<PredictionHistogram>,
    /// Largest share of forget-set predictions landing on a single retain class.
    pub max_retain_share: Option<f64>,
}

/// Which optional readouts [`evaluate`] computes.
#[derive(Debug, Clone)]
pub struct EvalPlan<'a> {
    /// Training data for relearning plus its config and target accuracy.
    pub relearn: Option<(&'a LabeledDataset, RelearnConfig, f64)>,
    pub original: Option<&'a Model>,
    pub histogram: bool,
}

pub fn evaluate(
    method: &str,
    model: &Model,
    forget_eval: &LabeledDataset,
    retain_eval: &LabeledDataset,
    forget_classes: &std::collections::BTreeSet<usize>,
    plan: &EvalPlan<'_>,
) -> Result<EvaluationReport> {
    let relearn = match &plan.relearn {
        Some((train, cfg, target)) => Some(relearn_time(model, train, forget_eval, *target, cfg)?),
        None => None,
    };
    let weight_distance = match plan.original {
        Some(orig) => Some(layer_weight_distance(orig, model)?),
        None => None,
    };
    let histogram = if plan.histogram {
        Some(prediction_histogram(model, forget_eval)?)
    } else {
        None
    };
    Ok(EvaluationReport {
        method: method.to_string(),
        forget_classes: forget_classes.iter().copied().collect(),
        forget_accuracy: accuracy(model, forget_eval)?,
        retain_accuracy: accuracy(model, retain_eval)?,
        relearn_time: relearn,
        max_retain_share: histogram.as_ref().map(|h| h.max_share_excluding(forget_classes)),
        weight_distance,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelSpec};

    /// Linear model whose bias makes it always predict `class`.
    fn constant(class: usize, k: usize) -> Model {
        let mut m = build_model(&ModelSpec::mlp(vec![2], vec![], k, 0)).unwrap();
        let params = m.params_mut().unwrap();
        params[0].1.data_mut().iter_mut().for_each(|v| *v = 0.0);
        params[1].1.data_mut().iter_mut().for_each(|v| *v = 0.0);
        params[1].1.data_mut()[class] = 1.0;
        m
    }

    fn ds(labels: Vec<usize>, k: usize) -> LabeledDataset {
        let n = labels.len();
        LabeledDataset::new("t", vec![2], k, vec![0.5; 2 * n], labels).unwrap()
    }

    #[test]
    fn constant_predictor_accuracy() {
        let m = constant(2, 4);
        assert_eq!(accuracy(&m, &ds(vec![2; 7], 4)).unwrap(), 1.0);
        let balanced: Vec<usize> = (0..40).map(|i| i % 4).collect();
        assert_eq!(accuracy(&m, &ds(balanced, 4)).unwrap(), 0.25);
        assert!(accuracy(&m, &ds(vec![], 4)).is_err());
    }

    #[test]
    fn distance_identity_and_unit_shift() {
        let a = build_model(&ModelSpec::mlp(vec![3], vec![4], 2, 1)).unwrap();
        let d = layer_weight_distance(&a, &a).unwrap();
        assert!(d.per_layer.iter().all(|(_, v)| *v == 0.0) && d.total == 0.0);

        let mut b = a.clone();
        b.params_mut().unwrap()[2].1.data_mut()[3] += 1.0;
        let d = layer_weight_distance(&a, &b).unwrap();
        for (i, (_, v)) in d.per_layer.iter().enumerate() {
            if i == 2 {
                assert!((v - 1.0).abs() < 1e-6);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        assert!((d.total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn distance_rejects_mismatch() {
        let a = build_model(&ModelSpec::mlp(vec![3], vec![4], 2, 1)).unwrap();
        let b = build_model(&ModelSpec::mlp(vec![3], vec![5], 2, 1)).unwrap();
        assert!(layer_weight_distance(&a, &b).is_err());
    }

    #[test]
    fn histogram_of_constant_model() {
        let m = constant(1, 3);
        let h = prediction_histogram(&m, &ds(vec![0; 5], 3)).unwrap();
        assert_eq!(h.counts, vec![0, 5, 0]);
        assert_eq!(h.max_concentration, 1.0);
    }

    #[test]
    fn relearn_cap_validation_and_display() {
        let m = constant(0, 2);
        let d = ds(vec![0, 1], 2);
        let cfg = RelearnConfig {
            cap: 0,
            ..RelearnConfig::default()
        };
        assert!(relearn_time(&m, &d, &d, 0.5, &cfg).is_err());
        assert_eq!(RelearnTime::ExceededCap(5).to_string(), ">5");
        assert_eq!(RelearnTime::Epochs(3).to_string(), "3");
    }

    #[test]
    fn relearn_zero_when_target_met() {
        let m = constant(0, 2);
        let forget = ds(vec![0; 4], 2);
        let all = ds(vec![0, 1, 0, 1], 2);
        let rt = relearn_time(&m, &all, &forget, 1.0, &RelearnConfig::default()).unwrap();
        assert_eq!(rt, RelearnTime::Epochs(0));
    }
}

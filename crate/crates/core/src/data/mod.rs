//! Labeled datasets, forget/retain partitioning, retain subsets and batching.

mod cifar;
mod idx;
mod synthetic;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use cifar::{load_cifar_binary, CifarMeta};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use synthetic::{generate_synthetic, generate_synthetic_split, CenterLayout, SyntheticSpec};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{numel, Tensor};

/// Where a sample came from. Noise samples never count as real training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Noise,
}

/// In-memory sample/label pairs with a uniform per-sample shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    input_shape: Vec<usize>,
    num_classes: usize,
    class_names: Vec<String>,
    features: Vec<f32>,
    labels: Vec<usize>,
    origins: Vec<Origin>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        num_classes: usize,
        features: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        Self::with_origins(name, input_shape, num_classes, features, labels, vec![Origin::Real; n])
    }

    pub fn with_origins(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        num_classes: usize,
        features: Vec<f32>,
        labels: Vec<usize>,
        origins: Vec<Origin>,
    ) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape {
                op: "dataset",
                msg: format!("invalid input shape {input_shape:?}"),
            });
        }
        if num_classes == 0 {
            return Err(Error::Parameter {
                name: "num_classes",
                msg: "must be positive".into(),
            });
        }
        let width = numel(&input_shape);
        if features.len() != labels.len() * width || origins.len() != labels.len() {
            return Err(Error::Shape {
                op: "dataset",
                msg: format!(
                    "{} labels, {} origins and {} feature values for sample shape {input_shape:?}",
                    labels.len(),
                    origins.len(),
                    features.len()
                ),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Index {
                index: bad,
                bound: num_classes,
            });
        }
        Ok(LabeledDataset {
            name: name.into(),
            input_shape,
            num_classes,
            class_names: (0..num_classes).map(|c| c.to_string()).collect(),
            features,
            labels,
            origins,
        })
    }

    /// Replaces the default `"0".."K-1"` class names with external ones.
    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes {
            return Err(Error::contract(format!(
                "{} class names for {} classes",
                names.len(),
                self.num_classes
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn sample_len(&self) -> usize {
        numel(&self.input_shape)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let w = self.sample_len();
        &self.features[i * w..(i + 1) * w]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn is_all_noise(&self) -> bool {
        self.origins.iter().all(|&o| o == Origin::Noise)
    }

    /// Samples at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let w = self.sample_len();
        let mut features = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            features.extend_from_slice(self.sample(i));
        }
        LabeledDataset {
            name: self.name.clone(),
            input_shape: self.input_shape.clone(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
        }
    }

    /// Samples whose label satisfies `keep`, in source order.
    pub fn filter_labels(&self, keep: impl Fn(usize) -> bool) -> LabeledDataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        self.select(&idx)
    }

    /// Appends `other`, keeping per-sample origins.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.input_shape != other.input_shape || self.num_classes != other.num_classes {
            return Err(Error::Dimension {
                op: "concat",
                lhs: self.input_shape.clone(),
                rhs: other.input_shape.clone(),
            });
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        out.origins.extend_from_slice(&other.origins);
        Ok(out)
    }

    /// Stacks the samples at `indices` into a `B×input_shape` tensor.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let w = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.input_shape);
        Tensor::new(shape, data).expect("gather of a validated dataset")
    }

    pub fn value_range(&self) -> Option<(f32, f32)> {
        let mut it = self.features.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

/// The forget/retain split of a dataset by class.
#[derive(Debug, Clone)]
pub struct ClassPartition {
    forget_classes: BTreeSet<usize>,
    forget: LabeledDataset,
    retain: LabeledDataset,
}

impl ClassPartition {
    pub fn forget_classes(&self) -> &BTreeSet<usize> {
        &self.forget_classes
    }

    pub fn forget_set(&self) -> &LabeledDataset {
        &self.forget
    }

    pub fn retain_set(&self) -> &LabeledDataset {
        &self.retain
    }

    pub fn retain_classes(&self) -> Vec<usize> {
        (0..self.retain.num_classes())
            .filter(|c| !self.forget_classes.contains(c))
            .collect()
    }
}

pub fn validate_forget_classes(forget_classes: &[usize], num_classes: usize) -> Result<BTreeSet<usize>> {
    if forget_classes.is_empty() {
        return Err(Error::contract("forget class set is empty"));
    }
    if let Some(&bad) = forget_classes.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Index {
            index: bad,
            bound: num_classes,
        });
    }
    let set: BTreeSet<usize> = forget_classes.iter().copied().collect();
    if set.len() == num_classes {
        return Err(Error::contract("every class is marked for forgetting; nothing to retain"));
    }
    Ok(set)
}

/// Splits `ds` into the forget set (labels in `forget_classes`) and the retain set.
pub fn partition(ds: &LabeledDataset, forget_classes: &[usize]) -> Result<ClassPartition> {
    let set = validate_forget_classes(forget_classes, ds.num_classes())?;
    let forget = ds
        .filter_labels(|l| set.contains(&l))
        .renamed(format!("{}/forget", ds.name()));
    let retain = ds
        .filter_labels(|l| !set.contains(&l))
        .renamed(format!("{}/retain", ds.name()));
    Ok(ClassPartition {
        forget_classes: set,
        forget,
        retain,
    })
}

/// A small per-class draw from the retain set; the only real data unlearning may touch.
#[derive(Debug, Clone)]
pub struct RetainSubset {
    pub subset: LabeledDataset,
    pub per_class_count: usize,
    pub draw_seed: u64,
    pub forget_classes: BTreeSet<usize>,
}

/// Draws up to `per_class_count` samples of each retain class without replacement.
/// Short classes contribute everything they have. Source order is preserved.
pub fn sample_retain_subset(p: &ClassPartition, per_class_count: usize, seed: u64) -> Result<RetainSubset> {
    if per_class_count == 0 {
        return Err(Error::Parameter {
            name: "per_class_count",
            msg: "must be at least 1".into(),
        });
    }
    let retain = p.retain_set();
    let mut rng = SplitMix64::new(seed);
    let mut chosen = Vec::new();
    for class in p.retain_classes() {
        let mut idx: Vec<usize> = (0..retain.len()).filter(|&i| retain.label(i) == class).collect();
        rng.shuffle(&mut idx);
        idx.truncate(per_class_count);
        chosen.extend(idx);
    }
    chosen.sort_unstable();
    Ok(RetainSubset {
        subset: retain.select(&chosen).renamed(format!("{}/subset", retain.name())),
        per_class_count,
        draw_seed: seed,
        forget_classes: p.forget_classes().clone(),
    })
}

/// Per-class count covering `fraction` of the largest retain class, at least 1.
pub fn per_class_count_for_fraction(p: &ClassPartition, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter {
            name: "retain_fraction",
            msg: format!("{fraction} not in (0, 1]"),
        });
    }
    let largest = p.retain_set().class_counts().into_iter().max().unwrap_or(0);
    Ok(((largest as f64 * fraction).round() as usize).max(1))
}

/// One mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub origins: Vec<Origin>,
    pub indices: Vec<usize>,
}

/// Iterator over mini-batches; the final partial batch is emitted.
#[derive(Debug)]
pub struct Batches<'a> {
    ds: &'a LabeledDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(Batch {
            inputs: self.ds.gather(&indices),
            labels: indices.iter().map(|&i| self.ds.label(i)).collect(),
            origins: indices.iter().map(|&i| self.ds.origins()[i]).collect(),
            indices,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}

/// Batches in source order, or after a seeded Fisher–Yates shuffle.
pub fn batches(ds: &LabeledDataset, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::Parameter {
            name: "batch_size",
            msg: "must be at least 1".into(),
        });
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if let Some(seed) = shuffle_seed {
        SplitMix64::new(seed).shuffle(&mut order);
    }
    Ok(Batches {
        ds,
        order,
        batch_size,
        pos: 0,
    })
}

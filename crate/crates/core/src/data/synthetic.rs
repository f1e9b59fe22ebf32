//! Gaussian class clusters for desk-scale experiments.
//!
//! Class centers are drawn (independently, or orthogonalized so every pair is
//! equally far apart), then uniformly rescaled so the closest pair sits
//! exactly `separation` apart. For image shapes with `tile` set, each center is
//! a random `tile×tile` patch per channel repeated across the image, which
//! gives every class a stationary texture that convolution + pooling can see.
//! Samples are `center + noise_sigma·N(0, I)`, emitted round-robin over
//! classes, and the whole set is then mapped affinely onto `[0, 1]`.

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::numel;

/// How class centers relate to each other.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterLayout {
    /// Independent Gaussian draws.
    #[default]
    Random,
    /// Gram–Schmidt orthonormalized draws: all pairwise distances are equal, so
    /// no class has a privileged nearest neighbour.
    Orthogonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    /// Per-sample shape: `[d]` for flat features or `[C, H, W]` for images.
    pub input_shape: Vec<usize>,
    pub per_class: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub tile: Option<usize>,
    #[serde(default)]
    pub layout: CenterLayout,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, msg: &str| {
            Err(Error::Parameter {
                name,
                msg: msg.to_string(),
            })
        };
        if self.num_classes < 2 {
            return bad("num_classes", "need at least 2 classes");
        }
        if self.per_class < 1 {
            return bad("per_class", "need at least 1 sample per class");
        }
        if !(self.separation > 0.0) {
            return bad("separation", "must be positive");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma", "must be non-negative");
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return bad("input_shape", "extents must be positive");
        }
        if let Some(t) = self.tile {
            if t == 0 || self.input_shape.len() != 3 {
                return bad("tile", "needs a positive tile and a C×H×W input shape");
            }
        }
        if self.layout == CenterLayout::Orthogonal && self.num_classes > self.pattern_len() {
            return bad("layout", "orthogonal centers need at least num_classes free dimensions");
        }
        Ok(())
    }
}

impl SyntheticSpec {
    /// Free dimensions of one center: the patch size when tiled, else the sample size.
    fn pattern_len(&self) -> usize {
        match self.tile {
            Some(t) => self.input_shape.first().copied().unwrap_or(1) * t * t,
            None => numel(&self.input_shape),
        }
    }
}

fn orthonormalize(patterns: &mut [Vec<f64>]) {
    for i in 0..patterns.len() {
        let (done, rest) = patterns.split_at_mut(i);
        let v = &mut rest[0];
        for u in done.iter() {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
    }
}

/// Class centers before normalization, closest pair exactly `separation` apart.
pub fn synthetic_centers(spec: &SyntheticSpec, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    let d = numel(&spec.input_shape);
    let p = spec.pattern_len();
    let mut patterns: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..p).map(|_| rng.normal()).collect())
        .collect();
    if spec.layout == CenterLayout::Orthogonal {
        orthonormalize(&mut patterns);
    }
    let mut centers: Vec<Vec<f64>> = patterns
        .into_iter()
        .map(|patch| match spec.tile {
            Some(t) => {
                let (c, h, w) = (spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]);
                let mut v = Vec::with_capacity(d);
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            v.push(patch[(ch * t + y % t) * t + x % t]);
                        }
                    }
                }
                v
            }
            None => patch,
        })
        .collect();
    let mut min_dist = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d2: f64 = centers[i].iter().zip(&centers[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            min_dist = min_dist.min(d2.sqrt());
        }
    }
    // Nudge above 1 so rounding never lands the closest pair under the bound.
    let scale = spec.separation / min_dist * (1.0 + 1e-9);
    for c in &mut centers {
        c.iter_mut().for_each(|v| *v *= scale);
    }
    centers
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = SplitMix64::new(seed);
    let centers = synthetic_centers(spec, &mut rng);
    let k = spec.num_classes;
    let n = k * spec.per_class;
    let mut raw = Vec::with_capacity(n * centers[0].len());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        labels.push(class);
        for &c in &centers[class] {
            raw.push(c + spec.noise_sigma * rng.normal());
        }
    }
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let features = raw.iter().map(|&v| (((v - lo) / span) as f32).clamp(0.0, 1.0)).collect();
    LabeledDataset::new("synthetic", spec.input_shape.clone(), k, features, labels)
}

/// Generates `per_class + test_per_class` samples per class from one set of
/// centers and splits them into train and held-out test sets.
pub fn generate_synthetic_split(
    spec: &SyntheticSpec,
    test_per_class: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let full_spec = SyntheticSpec {
        per_class: spec.per_class + test_per_class,
        ..spec.clone()
    };
    let full = generate_synthetic(&full_spec, seed)?;
    let train_n = spec.per_class * spec.num_classes;
    let train_idx: Vec<usize> = (0..train_n).collect();
    let test_idx: Vec<usize> = (train_n..full.len()).collect();
    Ok((
        full.select(&train_idx).renamed("synthetic/train"),
        full.select(&test_idx).renamed("synthetic/test"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, shape: Vec<usize>, per: usize) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: k,
            input_shape: shape,
            per_class: per,
            separation: 10.0,
            noise_sigma: 0.5,
            tile: None,
            layout: CenterLayout::Random,
        }
    }

    #[test]
    fn balanced_and_deterministic() {
        let s = spec(10, vec![4], 500);
        let a = generate_synthetic(&s, 3).unwrap();
        assert_eq!(a.len(), 5000);
        assert!(a.class_counts().iter().all(|&c| c == 500));
        assert_eq!(a, generate_synthetic(&s, 3).unwrap());
        let (lo, hi) = a.value_range().unwrap();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn centers_respect_separation() {
        let mut s = spec(6, vec![3, 8, 8], 1);
        s.tile = Some(4);
        s.separation = 7.5;
        let centers = synthetic_centers(&s, &mut SplitMix64::new(11));
        for i in 0..6 {
            for j in i + 1..6 {
                let d: f64 = centers[i]
                    .iter()
                    .zip(&centers[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 7.5, "pair ({i},{j}) at {d}");
            }
        }
    }

    #[test]
    fn orthogonal_centers_are_equidistant() {
        let mut s = spec(5, vec![2, 8, 8], 1);
        s.tile = Some(2);
        s.layout = CenterLayout::Orthogonal;
        let centers = synthetic_centers(&s, &mut SplitMix64::new(4));
        for i in 0..5 {
            for j in i + 1..5 {
                let d: f64 = centers[i]
                    .iter()
                    .zip(&centers[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d - 10.0).abs() < 1e-6, "pair ({i},{j}) at {d}");
            }
        }
        s.tile = Some(1);
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut s = spec(2, vec![2], 10);
        s.separation = 0.0;
        assert!(generate_synthetic(&s, 0).is_err());
        let s = spec(1, vec![2], 10);
        assert!(generate_synthetic(&s, 0).is_err());
    }

    #[test]
    fn split_shares_centers() {
        let s = spec(3, vec![2], 20);
        let (train, test) = generate_synthetic_split(&s, 5, 1).unwrap();
        assert_eq!(train.len(), 60);
        assert_eq!(test.len(), 15);
        assert!(test.class_counts().iter().all(|&c| c == 5));
    }
}

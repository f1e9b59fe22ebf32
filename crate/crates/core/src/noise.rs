//! Error-maximizing noise synthesis against a frozen classifier.
//!
//! For a forget class `y_f` a batch of input-shaped noise `N` starts from
//! i.i.d. `N(0, 1)` and is moved by plain gradient descent on
//!
//! ```text
//! J(N) = Σ_i [ −CE(f(N_i), y_f) + λ·‖N_i‖₂² ]
//! ```
//!
//! i.e. each noise sample independently maximizes the model's loss for the
//! forget label while the squared-L2 penalty keeps its magnitude bounded.
//! Only the noise receives gradients; the model must be frozen.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Origin};
use crate::error::{Error, Result};
use crate::models::{read_container, write_container, Container, Model};
use crate::rng::SplitMix64;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub steps: usize,
    pub lr: f32,
    pub lambda: f32,
    pub batch: usize,
    pub copies: usize,
    pub seed: u64,
    /// Clamp noise into the input domain `[0, 1]` after every step (ablation only).
    #[serde(default)]
    pub clamp: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            steps: 40,
            lr: 0.1,
            lambda: 0.1,
            batch: 64,
            copies: 20,
            seed: 0,
            clamp: false,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, msg: String| Err(Error::Parameter { name, msg });
        if !(self.lr > 0.0) {
            return bad("noise.lr", format!("{} must be positive", self.lr));
        }
        if !(self.lambda >= 0.0) {
            return bad("noise.lambda", format!("{} must be non-negative", self.lambda));
        }
        if self.batch == 0 {
            return bad("noise.batch", "must be at least 1".into());
        }
        if self.copies == 0 {
            return bad("noise.copies", "must be at least 1".into());
        }
        Ok(())
    }
}

/// A learned noise batch for one forget class.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMatrix {
    pub class_label: usize,
    pub num_classes: usize,
    /// `batch × input_shape`.
    pub noise: Tensor,
    /// Objective `J` before the first step and after every step (`steps + 1` values).
    pub loss_trace: Vec<f64>,
    /// Batch-mean cross-entropy for `class_label` at the same points.
    pub ce_trace: Vec<f64>,
    pub config: NoiseConfig,
}

impl NoiseMatrix {
    pub fn initial_ce(&self) -> f64 {
        self.ce_trace[0]
    }

    pub fn final_ce(&self) -> f64 {
        *self.ce_trace.last().expect("trace is never empty")
    }

    pub fn norm(&self) -> f64 {
        self.noise.l2_norm()
    }

    pub fn batch(&self) -> usize {
        self.noise.shape()[0]
    }
}

/// `batch × input_shape` standard-normal tensor from `SplitMix64(seed)` + Box–Muller.
pub fn init_noise(input_shape: &[usize], batch: usize, seed: u64) -> Result<Tensor> {
    if batch == 0 {
        return Err(Error::Parameter {
            name: "batch",
            msg: "must be at least 1".into(),
        });
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(input_shape);
    Ok(Tensor::randn(&shape, &mut SplitMix64::new(seed)))
}

/// Objective value, batch-mean CE and gradient w.r.t. the noise.
fn objective(model: &Model, noise: &Tensor, label: usize, lambda: f32) -> Result<(f64, f64, Vec<f32>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false)?;
    let n = tape.leaf(noise.clone().with_requires_grad(true))?;
    let logits = model.forward(&mut tape, &bound, n)?;
    let b = noise.shape()[0];
    let ce = tape.softmax_cross_entropy(logits, &vec![label; b])?;
    let neg = tape.scale(ce, -(b as f32))?;
    let sq = tape.sum_squares(n)?;
    let pen = tape.scale(sq, lambda)?;
    let j = tape.add(neg, pen)?;
    tape.backward(j)?;
    let grad = tape
        .grad(n)
        .ok_or_else(|| Error::contract("noise received no gradient"))?
        .to_vec();
    Ok((tape.value(j).data()[0] as f64, tape.value(ce).data()[0] as f64, grad))
}

/// Runs `cfg.steps` gradient steps on the noise for class `class_label`,
/// starting from `init_noise(input_shape, cfg.batch, cfg.seed)`.
pub fn optimize_noise(model: &Model, class_label: usize, cfg: &NoiseConfig) -> Result<NoiseMatrix> {
    if !model.is_frozen() {
        return Err(Error::contract("noise synthesis requires a frozen model"));
    }
    cfg.validate()?;
    let k = model.spec().num_classes;
    if class_label >= k {
        return Err(Error::Index {
            index: class_label,
            bound: k,
        });
    }
    let mut noise = init_noise(&model.spec().input_shape, cfg.batch, cfg.seed)?;
    let mut loss_trace = Vec::with_capacity(cfg.steps + 1);
    let mut ce_trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let (j, ce, grad) = match objective(model, &noise, class_label, cfg.lambda) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::NoiseDiverged { step }),
            Err(e) => return Err(e),
        };
        if !j.is_finite() {
            return Err(Error::NoiseDiverged { step });
        }
        loss_trace.push(j);
        ce_trace.push(ce);
        if step == cfg.steps {
            break;
        }
        for (v, g) in noise.data_mut().iter_mut().zip(&grad) {
            *v -= cfg.lr * g;
            if cfg.clamp {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(NoiseMatrix {
        class_label,
        num_classes: k,
        noise,
        loss_trace,
        ce_trace,
        config: cfg.clone(),
    })
}

/// One noise matrix per class, each seeded with `cfg.seed + class`; classes run in parallel.
pub fn synthesize_noises(model: &Model, classes: &BTreeSet<usize>, cfg: &NoiseConfig) -> Result<Vec<NoiseMatrix>> {
    classes
        .iter()
        .copied()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&c| {
            let cfg = NoiseConfig {
                seed: cfg.seed.wrapping_add(c as u64),
                ..cfg.clone()
            };
            optimize_noise(model, c, &cfg)
        })
        .collect()
}

/// Replicates every noise batch `copies` times, labelled with its class.
pub fn build_noise_dataset(noises: &[NoiseMatrix], copies: usize) -> Result<LabeledDataset> {
    let first = noises
        .first()
        .ok_or_else(|| Error::contract("no noise matrices supplied"))?;
    if copies == 0 {
        return Err(Error::Parameter {
            name: "copies",
            msg: "must be at least 1".into(),
        });
    }
    let mut seen = BTreeSet::new();
    for nm in noises {
        if !seen.insert(nm.class_label) {
            return Err(Error::contract(format!(
                "duplicate noise matrix for class {}",
                nm.class_label
            )));
        }
        if nm.noise.shape()[1..] != first.noise.shape()[1..] || nm.num_classes != first.num_classes {
            return Err(Error::Dimension {
                op: "build_noise_dataset",
                lhs: first.noise.shape().to_vec(),
                rhs: nm.noise.shape().to_vec(),
            });
        }
    }
    let input_shape = first.noise.shape()[1..].to_vec();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for nm in noises {
        for _ in 0..copies {
            features.extend_from_slice(nm.noise.data());
            labels.extend(std::iter::repeat(nm.class_label).take(nm.batch()));
        }
    }
    let n = labels.len();
    LabeledDataset::with_origins("noise", input_shape, first.num_classes, features, labels, vec![Origin::Noise; n])
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

fn parse_f64s(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.parse().map_err(|_| Error::format(0, format!("bad float `{p}`"))))
        .collect()
}

/// Stores a noise matrix in the checkpoint container under architecture tag `noise`.
pub fn save_noise(nm: &NoiseMatrix, path: impl AsRef<Path>) -> Result<()> {
    let c = &nm.config;
    let metadata: BTreeMap<String, String> = [
        ("architecture", "noise".to_string()),
        ("class_label", nm.class_label.to_string()),
        ("num_classes", nm.num_classes.to_string()),
        ("noise.steps", c.steps.to_string()),
        ("noise.lr", c.lr.to_string()),
        ("noise.lambda", c.lambda.to_string()),
        ("noise.batch", c.batch.to_string()),
        ("noise.copies", c.copies.to_string()),
        ("noise.seed", c.seed.to_string()),
        ("noise.clamp", c.clamp.to_string()),
        ("loss_trace", join_f64(&nm.loss_trace)),
        ("ce_trace", join_f64(&nm.ce_trace)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    write_container(
        &Container {
            metadata,
            records: vec![("noise".into(), nm.noise.clone())],
        },
        path,
    )
}

pub fn load_noise(path: impl AsRef<Path>) -> Result<NoiseMatrix> {
    let c = read_container(path)?;
    let m = &c.metadata;
    let get = |k: &str| {
        m.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::format(0, format!("missing metadata key `{k}`")))
    };
    if get("architecture")? != "noise" {
        return Err(Error::format(0, "container does not hold a noise matrix"));
    }
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::format(0, format!("bad `{k}`"))) };
    let noise = c
        .records
        .into_iter()
        .find(|(n, _)| n == "noise")
        .map(|(_, t)| t)
        .ok_or_else(|| Error::format(0, "missing `noise` record"))?;
    Ok(NoiseMatrix {
        class_label: num("class_label")? as usize,
        num_classes: num("num_classes")? as usize,
        noise,
        loss_trace: parse_f64s(get("loss_trace")?)?,
        ce_trace: parse_f64s(get("ce_trace")?)?,
        config: NoiseConfig {
            steps: num("noise.steps")? as usize,
            lr: get("noise.lr")?.parse().map_err(|_| Error::format(0, "bad noise.lr"))?,
            lambda: get("noise.lambda")?.parse().map_err(|_| Error::format(0, "bad noise.lambda"))?,
            batch: num("noise.batch")? as usize,
            copies: num("noise.copies")? as usize,
            seed: get("noise.seed")?.parse().map_err(|_| Error::format(0, "bad noise.seed"))?,
            clamp: get("noise.clamp")? == "true",
        },
    })
}

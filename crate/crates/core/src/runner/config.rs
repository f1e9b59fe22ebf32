//! Declarative experiment configuration, stored as TOML.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic_split, load_cifar_binary, load_idx, validate_forget_classes, CenterLayout, CifarMeta,
    LabeledDataset, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::RelearnConfig;
use crate::models::{Architecture, ModelSpec, TrainConfig};
use crate::noise::NoiseConfig;
use crate::rng::derive_seed;
use crate::unsir::{BaselineConfig, UnsirConfig};

/// Environment variable overriding `output_dir`.
pub const OUT_DIR_ENV: &str = "UNSIR_OUT_DIR";
/// Environment variable setting the worker-pool size.
pub const WORKERS_ENV: &str = "UNSIR_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic {
        num_classes: usize,
        input_shape: Vec<usize>,
        per_class: usize,
        test_per_class: usize,
        separation: f64,
        noise_sigma: f64,
        #[serde(default)]
        tile: Option<usize>,
        #[serde(default)]
        layout: CenterLayout,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Cifar {
        train_files: Vec<PathBuf>,
        test_files: Vec<PathBuf>,
        num_classes: usize,
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl DatasetConfig {
    /// Loads or generates `(train, test)`.
    pub fn load(&self, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DatasetConfig::Synthetic {
                num_classes,
                input_shape,
                per_class,
                test_per_class,
                separation,
                noise_sigma,
                tile,
                layout,
            } => {
                let spec = SyntheticSpec {
                    num_classes: *num_classes,
                    input_shape: input_shape.clone(),
                    per_class: *per_class,
                    separation: *separation,
                    noise_sigma: *noise_sigma,
                    tile: *tile,
                    layout: *layout,
                };
                generate_synthetic_split(&spec, *test_per_class, seed)
            }
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok((load_idx(train_images, train_labels)?, load_idx(test_images, test_labels)?)),
            DatasetConfig::Cifar {
                train_files,
                test_files,
                num_classes,
                channels,
                height,
                width,
            } => {
                let meta = CifarMeta {
                    num_classes: *num_classes,
                    channels: *channels,
                    height: *height,
                    width: *width,
                };
                Ok((load_cifar_binary(train_files, meta)?, load_cifar_binary(test_files, meta)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    #[serde(default)]
    pub widths: Vec<usize>,
    #[serde(default)]
    pub strides: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    #[serde(default)]
    pub momentum: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineToggles {
    #[serde(default)]
    pub retrain: bool,
    #[serde(default)]
    pub finetune: bool,
    #[serde(default)]
    pub neggrad: bool,
    pub finetune_epochs: usize,
    pub finetune_lr: f32,
    pub neggrad_lr: f32,
    pub neggrad_stop_below: f64,
}

impl Default for BaselineToggles {
    fn default() -> Self {
        BaselineToggles {
            retrain: false,
            finetune: false,
            neggrad: false,
            finetune_epochs: 1,
            finetune_lr: 0.02,
            neggrad_lr: 0.02,
            neggrad_stop_below: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricToggles {
    #[serde(default)]
    pub relearn: bool,
    pub relearn_samples_per_epoch: usize,
    pub relearn_cap: usize,
    pub weight_distance: bool,
    pub histogram: bool,
    /// Include wall-clock seconds in reports. Off by default so reports stay
    /// byte-identical across reruns.
    #[serde(default)]
    pub wall_clock: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        MetricToggles {
            relearn: false,
            relearn_samples_per_epoch: 500,
            relearn_cap: 100,
            weight_distance: true,
            histogram: true,
            wall_clock: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    ImpairLr,
    RepairLr,
    Lambda,
    RetainFraction,
    RepairSteps,
    Cycles,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::ImpairLr => "impair_lr",
            SweepAxis::RepairLr => "repair_lr",
            SweepAxis::Lambda => "lambda",
            SweepAxis::RetainFraction => "retain_fraction",
            SweepAxis::RepairSteps => "repair_steps",
            SweepAxis::Cycles => "cycles",
        }
    }

    /// Copy of `base` with this axis set to `value`.
    pub fn apply(&self, base: &UnsirConfig, value: f64) -> Result<UnsirConfig> {
        let mut cfg = base.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("sweep value {v} for {} must be a whole number", self.as_str())))
            }
        };
        match self {
            SweepAxis::ImpairLr => cfg.impair_lr = value as f32,
            SweepAxis::RepairLr => cfg.repair_lr = value as f32,
            SweepAxis::Lambda => cfg.noise.lambda = value as f32,
            SweepAxis::RetainFraction => cfg.retain_fraction = Some(value),
            SweepAxis::RepairSteps => cfg.repair_epochs = count(value)?,
            SweepAxis::Cycles => cfg.cycles = count(value)?,
        }
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "impair_lr" => Ok(SweepAxis::ImpairLr),
            "repair_lr" => Ok(SweepAxis::RepairLr),
            "lambda" => Ok(SweepAxis::Lambda),
            "retain_fraction" => Ok(SweepAxis::RetainFraction),
            "repair_steps" => Ok(SweepAxis::RepairSteps),
            "cycles" => Ok(SweepAxis::Cycles),
            other => Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub forget_classes: Vec<usize>,
    /// Ordered, pairwise-disjoint requests for sequential unlearning.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sequential: Vec<Vec<usize>>,
    /// Start from this checkpoint instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_checkpoint: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub unsir: UnsirConfig,
    #[serde(default)]
    pub baselines: BaselineToggles,
    #[serde(default)]
    pub metrics: MetricToggles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

/// Per-stage seeds, each `derive_seed(master, tag)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub unsir: u64,
    pub baselines: u64,
    pub relearn: u64,
}

impl StageSeeds {
    pub fn from_master(seed: u64) -> Self {
        StageSeeds {
            data: derive_seed(seed, "data"),
            init: derive_seed(seed, "init"),
            train: derive_seed(seed, "train"),
            unsir: derive_seed(seed, "unsir"),
            baselines: derive_seed(seed, "baselines"),
            relearn: derive_seed(seed, "relearn"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies the `UNSIR_OUT_DIR` override, if set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds::from_master(self.seed)
    }

    pub fn model_spec(&self, input_shape: &[usize], num_classes: usize) -> ModelSpec {
        ModelSpec {
            architecture: self.model.architecture,
            widths: self.model.widths.clone(),
            strides: self.model.strides.clone(),
            input_shape: input_shape.to_vec(),
            num_classes,
            init_seed: self.seeds().init,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            lr: self.training.lr,
            momentum: self.training.momentum,
            seed: self.seeds().train,
        }
    }

    /// UNSIR settings with the derived stage seed filled in.
    pub fn unsir_config(&self) -> UnsirConfig {
        UnsirConfig {
            seed: self.seeds().unsir,
            ..self.unsir.clone()
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            retrain: self.train_config(),
            finetune_epochs: self.baselines.finetune_epochs,
            finetune_lr: self.baselines.finetune_lr,
            neggrad_lr: self.baselines.neggrad_lr,
            neggrad_stop_below: self.baselines.neggrad_stop_below,
            batch_size: self.training.batch_size,
            seed: self.seeds().baselines,
        }
    }

    /// Relearning runs at the original training learning rate.
    pub fn relearn_config(&self) -> RelearnConfig {
        RelearnConfig {
            samples_per_epoch: self.metrics.relearn_samples_per_epoch,
            lr: self.training.lr,
            cap: self.metrics.relearn_cap,
            batch_size: self.training.batch_size,
            seed: self.seeds().relearn,
        }
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        if self.forget_classes.is_empty() {
            return Err(Error::Config("forget_classes must not be empty".into()));
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be at least 1".into()));
        }
        if !(self.training.lr >= 0.0) {
            return Err(Error::Config("training.lr must be non-negative".into()));
        }
        self.unsir.validate().map_err(cfg_err)?;
        if self.metrics.relearn && self.metrics.relearn_cap == 0 {
            return Err(Error::Config("metrics.relearn_cap must be at least 1".into()));
        }
        let mut seen = BTreeSet::new();
        for req in &self.sequential {
            if req.is_empty() {
                return Err(Error::Config("sequential requests must not be empty".into()));
            }
            for &c in req {
                if !seen.insert(c) {
                    return Err(Error::Config(format!("class {c} appears in more than one sequential request")));
                }
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(Error::Config("sweep.values must not be empty".into()));
            }
            for &v in &sw.values {
                sw.axis.apply(&self.unsir, v)?.validate().map_err(cfg_err)?;
            }
        }
        Ok(())
    }

    /// Checks class lists against the loaded dataset's class count.
    pub fn validate_classes(&self, num_classes: usize) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        validate_forget_classes(&self.forget_classes, num_classes).map_err(cfg_err)?;
        if !self.sequential.is_empty() {
            let all: Vec<usize> = self.sequential.iter().flatten().copied().collect();
            validate_forget_classes(&all, num_classes).map_err(cfg_err)?;
        }
        Ok(())
    }
}

impl Default for ExperimentConfig {
    /// Ten-class synthetic desk benchmark with a small CNN.
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            forget_classes: vec![0],
            sequential: Vec::new(),
            original_checkpoint: None,
            dataset: DatasetConfig::Synthetic {
                num_classes: 10,
                input_shape: vec![3, 16, 16],
                per_class: 300,
                test_per_class: 100,
                separation: 8.0,
                noise_sigma: 1.0,
                tile: Some(4),
                layout: CenterLayout::Orthogonal,
            },
            model: ModelConfig {
                architecture: Architecture::SmallCnn,
                widths: vec![32, 64, 64],
                strides: vec![1, 2, 2],
            },
            training: TrainingConfig {
                epochs: 10,
                batch_size: 64,
                lr: 0.05,
                momentum: 0.9,
            },
            unsir: UnsirConfig {
                impair_lr: 0.13,
                repair_lr: 0.03,
                batch_size: 16,
                retain_per_class: 300,
                noise: NoiseConfig {
                    lr: 0.1,
                    lambda: 1.0,
                    batch: 16,
                    copies: 20,
                    ..NoiseConfig::default()
                },
                ..UnsirConfig::default()
            },
            baselines: BaselineToggles {
                neggrad_lr: 0.1,
                ..BaselineToggles::default()
            },
            metrics: MetricToggles::default(),
            sweep: None,
        }
    }
}

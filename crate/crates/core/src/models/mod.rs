//! Compact classifiers: an MLP and an all-convolutional small CNN.

mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{
    decode_checkpoint, decode_container, encode_container, load_checkpoint, read_container, save_checkpoint, write_container,
    Checkpoint, Container, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use train::{run_epoch, train, Direction, EpochHooks, EpochStats, TrainConfig, TrainingHistory};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Mlp,
    #[serde(rename = "smallcnn")]
    SmallCnn,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Mlp => "mlp",
            Architecture::SmallCnn => "smallcnn",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Architecture::Mlp),
            "smallcnn" => Ok(Architecture::SmallCnn),
            other => Err(Error::format(0, format!("unknown architecture tag `{other}`"))),
        }
    }
}

/// Architecture plus its layer plan.
///
/// * `mlp`: `widths` are the hidden layer sizes; inputs of any shape are flattened.
/// * `smallcnn`: `widths` are conv channel counts and `strides` their strides.
///   A stride-`s` conv uses a `(s+2)×(s+2)` kernel with padding 1, so it maps
///   `H` to exactly `H/s`. Convs are followed by ReLU, then global average
///   pooling and a linear head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub widths: Vec<usize>,
    #[serde(default)]
    pub strides: Vec<usize>,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub init_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
}

const CONV_PADDING: usize = 1;

impl ModelSpec {
    pub fn mlp(input_shape: Vec<usize>, hidden: Vec<usize>, num_classes: usize, init_seed: u64) -> Self {
        ModelSpec {
            architecture: Architecture::Mlp,
            widths: hidden,
            strides: Vec::new(),
            input_shape,
            num_classes,
            init_seed,
        }
    }

    pub fn smallcnn(
        input_shape: Vec<usize>,
        channels: Vec<usize>,
        strides: Vec<usize>,
        num_classes: usize,
        init_seed: u64,
    ) -> Self {
        ModelSpec {
            architecture: Architecture::SmallCnn,
            widths: channels,
            strides,
            input_shape,
            num_classes,
            init_seed,
        }
    }

    fn spec_error(msg: impl Into<String>) -> Error {
        Error::Shape {
            op: "build_model",
            msg: msg.into(),
        }
    }

    fn conv_layers(&self) -> Result<Vec<ConvLayer>> {
        if self.input_shape.len() != 3 {
            return Err(Self::spec_error(format!(
                "smallcnn needs a C×H×W input, got {:?}",
                self.input_shape
            )));
        }
        if self.strides.len() != self.widths.len() {
            return Err(Self::spec_error("one stride per conv layer required"));
        }
        let (mut c, mut h, mut w) = (self.input_shape[0], self.input_shape[1], self.input_shape[2]);
        let mut layers = Vec::new();
        for (&out_ch, &stride) in self.widths.iter().zip(&self.strides) {
            if stride == 0 || h % stride != 0 || w % stride != 0 {
                return Err(Self::spec_error(format!("stride {stride} does not divide {h}×{w}")));
            }
            layers.push(ConvLayer {
                in_ch: c,
                out_ch,
                kernel: stride + 2,
                stride,
            });
            c = out_ch;
            h /= stride;
            w /= stride;
        }
        Ok(layers)
    }

    /// Ordered `(name, shape, fan_in)` for every parameter.
    fn layout(&self) -> Result<Vec<(String, Vec<usize>, usize)>> {
        if self.num_classes < 2 {
            return Err(Self::spec_error("num_classes must be at least 2"));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) || self.widths.contains(&0) {
            return Err(Self::spec_error("zero extent in spec"));
        }
        let mut out = Vec::new();
        match self.architecture {
            Architecture::Mlp => {
                let mut fan_in = numel(&self.input_shape);
                let dims = self.widths.iter().copied().chain([self.num_classes]);
                for (i, width) in dims.enumerate() {
                    out.push((format!("fc{i}.weight"), vec![fan_in, width], fan_in));
                    out.push((format!("fc{i}.bias"), vec![width], fan_in));
                    fan_in = width;
                }
            }
            Architecture::SmallCnn => {
                let layers = self.conv_layers()?;
                if layers.is_empty() {
                    return Err(Self::spec_error("smallcnn needs at least one conv layer"));
                }
                for (i, l) in layers.iter().enumerate() {
                    let fan_in = l.in_ch * l.kernel * l.kernel;
                    out.push((format!("conv{i}.weight"), vec![l.out_ch, l.in_ch, l.kernel, l.kernel], fan_in));
                    out.push((format!("conv{i}.bias"), vec![l.out_ch], fan_in));
                }
                let last = layers.last().map(|l| l.out_ch).unwrap_or_default();
                out.push(("head.weight".into(), vec![last, self.num_classes], last));
                out.push(("head.bias".into(), vec![self.num_classes], last));
            }
        }
        Ok(out)
    }
}

/// Named parameters in a fixed order plus the spec that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<(String, Tensor)>,
    frozen: bool,
}

/// Builds a model with fan-in-scaled uniform initialization, `U(±1/√fan_in)`,
/// drawn from `spec.init_seed` in parameter order.
pub fn build_model(spec: &ModelSpec) -> Result<Model> {
    let layout = spec.layout()?;
    let mut rng = SplitMix64::new(spec.init_seed);
    let params = layout
        .into_iter()
        .map(|(name, shape, fan_in)| {
            let bound = 1.0 / (fan_in as f32).sqrt();
            (name, Tensor::uniform(&shape, bound, &mut rng))
        })
        .collect();
    Ok(Model {
        spec: spec.clone(),
        params,
        frozen: false,
    })
}

impl Model {
    /// Reassembles a model from stored parameters, checking names and shapes.
    pub fn from_parts(spec: ModelSpec, params: Vec<(String, Tensor)>) -> Result<Model> {
        let layout = spec.layout()?;
        if layout.len() != params.len() {
            return Err(Error::contract(format!(
                "spec expects {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (pn, pt)) in layout.iter().zip(&params) {
            if name != pn || shape.as_slice() != pt.shape() {
                return Err(Error::contract(format!(
                    "parameter `{pn}` {:?} does not match expected `{name}` {shape:?}",
                    pt.shape()
                )));
            }
        }
        Ok(Model {
            spec,
            params,
            frozen: false,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Mutable parameters; refused while the model is frozen.
    pub fn params_mut(&mut self) -> Result<&mut [(String, Tensor)]> {
        if self.frozen {
            return Err(Error::contract("model is frozen; parameters are read-only"));
        }
        Ok(&mut self.params)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    /// SHA-256 over parameter names, shapes and little-endian values.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.params {
            h.update((name.len() as u32).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u32).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Records the parameters as tape leaves.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|(_, t)| {
                let mut t = t.clone();
                t.zero_grad();
                tape.leaf(t.with_requires_grad(requires_grad))
            })
            .collect()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != self.spec.input_shape.len() + 1 || shape[1..] != self.spec.input_shape[..] {
            let mut want = vec![shape.first().copied().unwrap_or(0)];
            want.extend_from_slice(&self.spec.input_shape);
            return Err(Error::Dimension {
                op: "forward",
                lhs: shape.to_vec(),
                rhs: want,
            });
        }
        Ok(())
    }

    /// Logits for a batch, recorded on `tape` against parameters bound by [`Model::bind`].
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        self.check_input(&shape)?;
        let n = shape[0];
        match self.spec.architecture {
            Architecture::Mlp => {
                let mut h = tape.reshape(x, vec![n, numel(&self.spec.input_shape)])?;
                let layers = bound.len() / 2;
                for i in 0..layers {
                    h = tape.matmul(h, bound[2 * i])?;
                    h = tape.bias_add(h, bound[2 * i + 1])?;
                    if i + 1 < layers {
                        h = tape.relu(h)?;
                    }
                }
                Ok(h)
            }
            Architecture::SmallCnn => {
                let layers = self.spec.conv_layers()?;
                let mut h = x;
                for (i, l) in layers.iter().enumerate() {
                    h = tape.conv2d(h, bound[2 * i], l.stride, CONV_PADDING)?;
                    h = tape.bias_add(h, bound[2 * i + 1])?;
                    h = tape.relu(h)?;
                }
                let pooled = tape.global_avg_pool(h)?;
                let k = 2 * layers.len();
                let logits = tape.matmul(pooled, bound[k])?;
                tape.bias_add(logits, bound[k + 1])
            }
        }
    }

    /// Inference-only forward pass.
    pub fn logits(&self, inputs: &Tensor) -> Result<Tensor> {
        self.check_input(inputs.shape())?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let x = tape.leaf(inputs.clone().with_requires_grad(false))?;
        let out = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(out).clone())
    }

    /// Argmax labels and logits; ties go to the lowest class index.
    pub fn predict(&self, batch: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        let logits = self.logits(batch)?;
        let labels = argmax_rows(&logits);
        Ok((labels, logits))
    }

    /// Adds the tape gradients of bound leaves into the parameter gradient slots.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &[Var]) -> Result<()> {
        if self.frozen {
            return Err(Error::contract("model is frozen; cannot take gradients"));
        }
        for ((name, p), v) in self.params.iter_mut().zip(bound) {
            let g = tape
                .grad(*v)
                .ok_or_else(|| Error::contract(format!("no gradient reached `{name}`")))?;
            p.accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in &mut self.params {
            p.zero_grad();
        }
    }
}

/// Row-wise argmax, lowest index on ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

//! Tape-based reverse-mode automatic differentiation.
//!
//! Each differentiable call appends a node holding its output tensor and
//! whatever it needs for the backward pass. [`Tape::backward`] walks the
//! nodes in reverse execution order and adds the resulting adjoints into the
//! gradient slot of every leaf created with `requires_grad`. Gradients
//! accumulate across backward calls until [`Tape::zero_grads`] is called.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    BiasAdd { x: Var, bias: Var },
    Conv2d { input: Var, kernel: Var, geom: ConvGeom },
    Relu { x: Var },
    Reshape { x: Var },
    GlobalAvgPool { x: Var },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f32> },
    Sum { x: Var },
    SumSquares { x: Var },
    Scale { x: Var, factor: f32 },
    Add { a: Var, b: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::BiasAdd { .. } => "bias_add",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu { .. } => "relu",
            Op::Reshape { .. } => "reshape",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Sum { .. } => "sum",
            Op::SumSquares { .. } => "sum_squares",
            Op::Scale { .. } => "scale",
            Op::Add { .. } => "add",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    last_backward: Vec<usize>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and intermediate. Outstanding [`Var`]s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.last_backward.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    /// Op names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// Node indices visited by the most recent backward pass, in visit order.
    pub fn last_backward_order(&self) -> &[usize] {
        &self.last_backward
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        check_finite(op.name(), &value)?;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records an input. Its gradient is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, needs)
    }

    /// Adds a per-feature bias: `[N×F] + [F]` or per-channel `[N×F×H×W] + [F]`.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if !(sx.len() == 2 || sx.len() == 4) || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::Dimension {
                op: "bias_add",
                lhs: sx,
                rhs: sb,
            });
        }
        let inner: usize = sx[2..].iter().product();
        let f = sx[1];
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += b[(i / inner) % f];
        }
        let needs = self.needs(x) || self.needs(bias);
        self.push(Tensor::new(sx, out)?, Op::BiasAdd { x, bias }, needs)
    }

    /// 2-D cross-correlation of `N×C×H×W` input with an `F×C×kh×kw` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::Parameter {
                name: "stride",
                msg: "must be positive".into(),
            });
        }
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] {
            return Err(Error::Dimension {
                op: "conv2d",
                lhs: si,
                rhs: sk,
            });
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (f, kh, kw) = (sk[0], sk[2], sk[3]);
        let (ph, pw) = (h + 2 * padding, w + 2 * padding);
        if kh > ph || kw > pw {
            return Err(Error::Shape {
                op: "conv2d",
                msg: format!("kernel {kh}×{kw} larger than padded input {ph}×{pw}"),
            });
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::Shape {
                op: "conv2d",
                msg: format!(
                    "stride {stride} does not tile padded input {ph}×{pw} with kernel {kh}×{kw} exactly"
                ),
            });
        }
        let geom = ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad: padding,
            ho: (ph - kh) / stride + 1,
            wo: (pw - kw) / stride + 1,
        };
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let chw = c * h * w;
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let mut out = vec![0.0f32; n * f * cols_n];
        out.par_chunks_mut(f * cols_n)
            .enumerate()
            .for_each_init(
                || vec![0.0f32; rows * cols_n],
                |cols, (i, o)| {
                    im2col(&x[i * chw..(i + 1) * chw], &geom, cols);
                    gemm_nn(k, cols, f, rows, cols_n, o);
                },
            );
        let needs = self.needs(input) || self.needs(kernel);
        self.push(
            Tensor::new(vec![n, f, geom.ho, geom.wo], out)?,
            Op::Conv2d {
                input,
                kernel,
                geom,
            },
            needs,
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, out)?, Op::Relu { x }, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        let t = t.with_requires_grad(false);
        self.push(strip_grad(t), Op::Reshape { x }, needs)
    }

    /// Mean over the spatial axes: `N×C×H×W → N×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::Shape {
                op: "global_avg_pool",
                msg: format!("expected rank-4 input, got {s:?}"),
            });
        }
        let hw = s[2] * s[3];
        let out = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|c| c.iter().sum::<f32>() / hw as f32)
            .collect();
        let needs = self.needs(x);
        self.push(Tensor::new(vec![s[0], s[1]], out)?, Op::GlobalAvgPool { x }, needs)
    }

    /// Batch-mean cross-entropy of `softmax(logits)` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                lhs: s,
                rhs: vec![labels.len()],
            });
        }
        let (n, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index { index: bad, bound: k });
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0f32; n * k];
        let mut total = 0.0f64;
        for i in 0..n {
            let row = &z[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                let e = ((v - max) as f64).exp();
                *p = e as f32;
                sum += e;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p = (*p as f64 / sum) as f32;
            }
            let lse = max as f64 + sum.ln();
            total += lse - row[labels[i]] as f64;
        }
        let loss = (total / n as f64) as f32;
        let needs = self.needs(logits);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|&v| v as f64).sum::<f64>() as f32;
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, needs)
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum_squares() as f32;
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumSquares { x }, needs)
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v * factor).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, out)?, Op::Scale { x, factor }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                op: "add",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let shape = sa.to_vec();
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, out)?, Op::Add { a, b }, needs)
    }

    /// Back-propagates from a scalar `loss`, accumulating into every
    /// `requires_grad` leaf that the loss depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("loss is not recorded on this tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        self.last_backward.clear();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            self.last_backward.push(idx);
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            for (input, contrib) in self.local_grads(idx, &g)? {
                match &mut adj[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
            if self.nodes[idx].value.requires_grad() {
                self.nodes[idx].value.accumulate_grad(&g)?;
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for each input needing a gradient.
    fn local_grads(&self, idx: usize, g: &[f32]) -> Result<Vec<(Var, Vec<f32>)>> {
        let node = &self.nodes[idx];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, self.value(*b).data(), m, n, k, &mut da);
                    out.push((*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(self.value(*a).data(), g, k, m, n, &mut db);
                    out.push((*b, db));
                }
            }
            Op::BiasAdd { x, bias } => {
                if self.needs(*x) {
                    out.push((*x, g.to_vec()));
                }
                if self.needs(*bias) {
                    let s = self.shape(*x);
                    let inner: usize = s[2..].iter().product();
                    let f = s[1];
                    let mut db = vec![0.0f32; f];
                    for (i, v) in g.iter().enumerate() {
                        db[(i / inner) % f] += v;
                    }
                    out.push((*bias, db));
                }
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
            } => {
                let si = self.shape(*input);
                let f = self.shape(*kernel)[0];
                let n = si[0];
                let chw = geom.c * geom.h * geom.w;
                let (rows, ncol) = (geom.col_rows(), geom.col_cols());
                let x = self.value(*input).data();
                let k = self.value(*kernel).data();
                let (need_x, need_k) = (self.needs(*input), self.needs(*kernel));
                let mut dx = vec![0.0f32; if need_x { n * chw } else { 0 }];
                let per_sample = |i: usize, dxi: Option<&mut [f32]>| -> Vec<f32> {
                    let gi = &g[i * f * ncol..(i + 1) * f * ncol];
                    let mut dk = Vec::new();
                    if need_k {
                        let mut cols = vec![0.0f32; rows * ncol];
                        im2col(&x[i * chw..(i + 1) * chw], geom, &mut cols);
                        dk = vec![0.0f32; f * rows];
                        gemm_nt(gi, &cols, f, ncol, rows, &mut dk);
                    }
                    if let Some(dxi) = dxi {
                        let mut dcols = vec![0.0f32; rows * ncol];
                        gemm_tn(k, gi, rows, f, ncol, &mut dcols);
                        col2im(&dcols, geom, dxi);
                    }
                    dk
                };
                let partials: Vec<Vec<f32>> = if need_x {
                    dx.par_chunks_mut(chw)
                        .enumerate()
                        .map(|(i, dxi)| per_sample(i, Some(dxi)))
                        .collect()
                } else {
                    (0..n).into_par_iter().map(|i| per_sample(i, None)).collect()
                };
                if need_x {
                    out.push((*input, dx));
                }
                if need_k {
                    let mut dk = vec![0.0f32; f * rows];
                    for p in &partials {
                        dk.iter_mut().zip(p).for_each(|(a, b)| *a += b);
                    }
                    out.push((*kernel, dk));
                }
            }
            Op::Relu { x } => {
                let xs = self.value(*x).data();
                let d = g
                    .iter()
                    .zip(xs)
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                out.push((*x, d));
            }
            Op::Reshape { x } => out.push((*x, g.to_vec())),
            Op::GlobalAvgPool { x } => {
                let s = self.shape(*x);
                let hw = s[2] * s[3];
                let inv = 1.0 / hw as f32;
                let d = g.iter().flat_map(|&v| std::iter::repeat(v * inv).take(hw)).collect();
                out.push((*x, d));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let k = probs.len() / n;
                let scale = g[0] / n as f32;
                let mut d: Vec<f32> = probs.iter().map(|p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= scale;
                }
                out.push((*logits, d));
            }
            Op::Sum { x } => {
                out.push((*x, vec![g[0]; self.value(*x).len()]));
            }
            Op::SumSquares { x } => {
                let d = self.value(*x).data().iter().map(|&v| 2.0 * v * g[0]).collect();
                out.push((*x, d));
            }
            Op::Scale { x, factor } => {
                out.push((*x, g.iter().map(|v| v * factor).collect()));
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    out.push((*b, g.to_vec()));
                }
            }
        }
        out.retain(|(v, _)| self.needs(*v));
        Ok(out)
    }
}

fn strip_grad(mut t: Tensor) -> Tensor {
    t.zero_grad();
    t
}

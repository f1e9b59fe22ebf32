use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Plain SGD, optionally with heavy-ball momentum (off by default).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdRule {
    pub learning_rate: f32,
    #[serde(default)]
    pub momentum: f32,
}

impl SgdRule {
    pub fn new(learning_rate: f32) -> Self {
        SgdRule {
            learning_rate,
            momentum: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Parameter {
                name: "learning_rate",
                msg: format!("{} is not a finite non-negative number", self.learning_rate),
            });
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter {
                name: "momentum",
                msg: format!("{} not in [0, 1)", self.momentum),
            });
        }
        Ok(())
    }
}

/// `param ← param − lr · grad` for every named tensor. Gradients are left in place.
pub fn sgd_step(params: &mut [(String, Tensor)], rule: &SgdRule) -> Result<()> {
    for (name, p) in params.iter() {
        if p.grad().is_none() {
            return Err(Error::contract(format!("parameter `{name}` has no gradient")));
        }
    }
    let lr = rule.learning_rate;
    for (_, p) in params.iter_mut() {
        let g = p.grad().map(<[f32]>::to_vec).unwrap_or_default();
        p.data_mut().iter_mut().zip(&g).for_each(|(w, d)| *w -= lr * d);
    }
    Ok(())
}

/// Stateful optimizer wrapping [`sgd_step`] with an optional velocity buffer.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub rule: SgdRule,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(rule: SgdRule) -> Self {
        Sgd {
            rule,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [(String, Tensor)]) -> Result<()> {
        if self.rule.momentum == 0.0 {
            return sgd_step(params, &self.rule);
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        }
        let (lr, mu) = (self.rule.learning_rate, self.rule.momentum);
        for ((name, p), v) in params.iter_mut().zip(&mut self.velocity) {
            let g = p
                .grad()
                .ok_or_else(|| Error::contract(format!("parameter `{name}` has no gradient")))?
                .to_vec();
            for ((w, vi), d) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(&g) {
                *vi = mu * *vi + d;
                *w -= lr * *vi;
            }
        }
        Ok(())
    }
}

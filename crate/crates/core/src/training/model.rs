use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EmbeddingProvider, EmbedError};

/// A trainable linear map applied on top of a frozen base encoder,
/// initialized to the identity so training starts from the base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Row-major `output_dim x input_dim`.
    pub weights: Vec<f64>,
}

impl ProjectionHead {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self { input_dim: dim, output_dim: dim, weights }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights.chunks(self.input_dim).map(|row| row.iter().zip(x).map(|(w, xi)| w * xi).sum()).collect()
    }

    /// Adds `grad_out ⊗ x` into `grad`, the gradient of the weights.
    pub fn accumulate(&self, grad: &mut [f64], x: &[f64], grad_out: &[f64], weight: f64) {
        for (row, g) in grad.chunks_mut(self.input_dim).zip(grad_out) {
            for (acc, xi) in row.iter_mut().zip(x) {
                *acc += weight * g * xi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adam)")),
        }
    }
}

pub(crate) struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub(crate) fn new(kind: OptimizerKind, lr: f64, params: usize) -> Self {
        Self { kind, lr, m: vec![0.0; params], v: vec![0.0; params], t: 0 }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - Self::BETA1.powi(self.t);
                let c2 = 1.0 - Self::BETA2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
                }
            }
        }
    }
}

/// A base provider with a fine-tuned head, usable wherever a provider is.
pub struct FineTunedEmbedder<P> {
    pub base: P,
    pub head: ProjectionHead,
    name: String,
}

impl<P: EmbeddingProvider> FineTunedEmbedder<P> {
    pub fn new(base: P, head: ProjectionHead) -> Self {
        let name = format!("{}+head", base.name());
        Self { base, head, name }
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for FineTunedEmbedder<P> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.head.output_dim
    }

    fn max_tokens(&self) -> usize {
        self.base.max_tokens()
    }

    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        self.base.token_spans(text)
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let base = self.base.embed(text)?;
        Ok(Embedding::new(self.head.forward(&base.values)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_head_is_a_no_op() {
        let head = ProjectionHead::identity(3);
        assert_eq!(head.forward(&[1.0, -2.0, 0.5]), [1.0, -2.0, 0.5]);
    }

    #[test]
    fn weight_gradient_is_an_outer_product() {
        let head = ProjectionHead::identity(2);
        let mut grad = vec![0.0; 4];
        head.accumulate(&mut grad, &[1.0, 2.0], &[3.0, -1.0], 0.5);
        assert_eq!(grad, [1.5, 3.0, -0.5, -1.0]);
    }

    #[test]
    fn optimizers_descend_a_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut x = vec![3.0, -2.0];
            let mut opt = Optimizer::new(kind, 0.1, 2);
            for _ in 0..200 {
                let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
                opt.step(&mut x, &g);
            }
            assert!(x.iter().all(|v| v.abs() < 0.05), "{kind:?}: {x:?}");
        }
    }
}

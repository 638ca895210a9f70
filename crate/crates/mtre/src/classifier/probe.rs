//! Linear probe: logistic regression on a single logit vector.

use serde::{Deserialize, Serialize};

use super::{bce, clamp_probability, sigmoid};
use crate::dataset::TokenExample;
use crate::error::{Error, Result};

/// Logistic-regression parameters, stored flat as `[weights..., bias]`.
/// Initialized at zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    input_dim: usize,
    seed: u64,
    params: Vec<f64>,
}

impl Probe {
    pub fn init(input_dim: usize, seed: u64) -> Self {
        Probe {
            input_dim,
            seed,
            params: vec![0.0; input_dim + 1],
        }
    }

    pub(crate) fn from_params(input_dim: usize, seed: u64, params: Vec<f64>) -> Result<Self> {
        if params.len() != input_dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: input_dim + 1,
                got: params.len(),
            });
        }
        if params.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParam("probe parameters must be finite".into()));
        }
        Ok(Probe {
            input_dim,
            seed,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.input_dim]
    }

    pub fn bias(&self) -> f64 {
        self.params[self.input_dim]
    }

    pub(crate) fn raw_score(&self, features: &[f32]) -> f64 {
        let mut z = self.bias();
        for (w, x) in self.weights().iter().zip(features) {
            z += w * f64::from(*x);
        }
        z
    }

    /// Mean clamped BCE over the batch and its gradient with respect to
    /// `[weights..., bias]` (regularization added by the caller).
    pub(crate) fn batch_loss_grad(&self, batch: &[&TokenExample]) -> (f64, Vec<f64>) {
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for ex in batch {
            let p = sigmoid(self.raw_score(&ex.features));
            total += bce(clamp_probability(p), ex.label);
            let dz = (p - f64::from(ex.label)) / n;
            for (g, x) in grad[..self.input_dim].iter_mut().zip(&ex.features) {
                *g += dz * f64::from(*x);
            }
            grad[self.input_dim] += dz;
        }
        (total / n, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probe_scores_half() {
        let p = Probe::init(3, 0);
        assert_eq!(p.raw_score(&[4.0, -2.0, 1.0]), 0.0);
    }

    #[test]
    fn gradient_matches_hand_computation() {
        let mut p = Probe::init(2, 0);
        p.params_mut().copy_from_slice(&[0.5, -0.25, 0.1]);
        let ex = TokenExample {
            features: vec![2.0, 1.0],
            label: 1,
            sentence_id: "s".into(),
            position: 1,
        };
        let (_, grad) = p.batch_loss_grad(&[&ex]);
        let z: f64 = 0.5 * 2.0 - 0.25 + 0.1;
        let d = sigmoid(z) - 1.0;
        assert!((grad[0] - d * 2.0).abs() < 1e-15);
        assert!((grad[1] - d).abs() < 1e-15);
        assert!((grad[2] - d).abs() < 1e-15);
    }
}

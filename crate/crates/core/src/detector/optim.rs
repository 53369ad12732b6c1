//! Stochastic gradient descent with classical momentum.

use crate::error::{Error, Result};

use super::net::DetectorParams;

/// `v <- momentum * v + g; p <- p - lr * v` over the trainable parameters.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(n_trainable: usize, momentum: f64) -> Self {
        SgdMomentum {
            momentum,
            velocity: vec![0.0; n_trainable],
        }
    }

    pub fn step(&mut self, params: &DetectorParams, grads: &[f64], lr: f64) -> Result<DetectorParams> {
        if grads.len() != self.velocity.len() || grads.len() != params.n_trainable() {
            return Err(Error::ShapeMismatch(format!(
                "gradient length {} vs {} trainable parameters",
                grads.len(),
                params.n_trainable()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        let mut v = params.to_vec();
        for i in 0..grads.len() {
            self.velocity[i] = self.momentum * self.velocity[i] + grads[i];
            v[i] -= lr * self.velocity[i];
        }
        let updated = params.from_vec(&v)?;
        updated.assert_finite()?;
        Ok(updated)
    }
}

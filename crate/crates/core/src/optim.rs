//! Adam, in exactly the form used for both the circuit and the controller:
//!
//! ```text
//! m_t = β1·m_{t-1} + (1-β1)·g
//! n_t = β2·n_{t-1} + (1-β2)·g²
//! m̂_t = m_t / (1-β1^t)
//! n̂_t = n_t / (1-β2^t)
//! θ_t = θ_{t-1} - α·m̂_t / √(n̂_t + ε)
//! ```
//!
//! Note that ε sits inside the square root.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "adam settings out of range: {self:?} (need lr > 0, 0 <= beta < 1, eps > 0)"
            )))
        }
    }
}

/// Moment accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub n: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            n: vec![0.0; len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Grows the accumulators with zeros, e.g. when a circuit gains gates.
    pub fn extend_to(&mut self, len: usize) {
        self.m.resize(len, 0.0);
        self.n.resize(len, 0.0);
    }
}

/// One descent step on `params` along `grad`.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.len() != params.len() || state.len() != params.len() {
        return Err(Error::Arity {
            what: "adam vectors",
            expected: params.len(),
            actual: if grad.len() != params.len() {
                grad.len()
            } else {
                state.len()
            },
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), n) in params
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.n.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *n = cfg.beta2 * *n + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let n_hat = *n / bc2;
        *p -= cfg.learning_rate / (n_hat + cfg.epsilon).sqrt() * m_hat;
    }
    Ok(())
}

//! Bounded Lagrange multipliers and the combined non-stationary reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MU_CLIP: f64 = 10.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Unbounded multipliers mu_i, exposed through sigma(mu_i) in (0,1).
/// Clipping |mu| keeps sigma' bounded away from zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Multipliers {
    pub mu: Vec<f64>,
    pub clip: f64,
}

impl Multipliers {
    /// mu = 0 start: sigma = 0.5, diversity and imitation balanced.
    pub fn new(n: usize) -> Self {
        Self { mu: vec![0.0; n], clip: DEFAULT_MU_CLIP }
    }

    pub fn bounded(&self, i: usize) -> f64 {
        sigmoid(self.mu[i])
    }

    /// One gradient step on L_mu = sum_i sigma(mu_i)(eps - phi_i):
    /// mu_i' = clip(mu_i - lr * sigma'(mu_i)(eps - phi_i)). The multiplier
    /// rises when the constraint is violated (phi_i > eps) and falls
    /// otherwise.
    pub fn step(&mut self, phis: &[f64], epsilon: f64, learning_rate: f64) -> Result<()> {
        if learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate", "must be > 0"));
        }
        if phis.len() != self.mu.len() {
            return Err(Error::DimensionMismatch("phis vs multipliers".into()));
        }
        for (mu, &phi) in self.mu.iter_mut().zip(phis) {
            let g = sigmoid_prime(*mu) * (epsilon - phi);
            *mu = (*mu - learning_rate * g).clamp(-self.clip, self.clip);
        }
        Ok(())
    }
}

/// Non-stationary reward R = (1 - sigma(mu)) * beta + sigma(mu) * log_odds.
#[inline]
pub fn combined_reward(beta: f64, log_odds: f64, mu: f64) -> f64 {
    let s = sigmoid(mu);
    (1.0 - s) * beta + s * log_odds
}

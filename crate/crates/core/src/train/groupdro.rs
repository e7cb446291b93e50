//! Exponentiated-gradient ascent on the group simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point on the probability simplex over training groups, all entries
/// strictly positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights {
    q: Vec<f64>,
}

impl GroupWeights {
    pub fn uniform(groups: usize) -> Self {
        assert!(groups > 0, "at least one group");
        Self {
            q: vec![1.0 / groups as f64; groups],
        }
    }

    pub fn new(q: Vec<f64>) -> Result<Self> {
        let sum: f64 = q.iter().sum();
        if q.is_empty() || q.iter().any(|v| !(v.is_finite() && *v > 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("not a strictly positive simplex point: {q:?}")));
        }
        Ok(Self { q })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Training loss for a step: `sum_g q_g * loss_g`.
    pub fn weighted_loss(&self, group_losses: &[f64]) -> f64 {
        self.q.iter().zip(group_losses).map(|(q, l)| q * l).sum()
    }
}

/// `q'_g ∝ q_g exp(eta * loss_g)`, evaluated in log space. Entries that
/// would underflow are held at the smallest positive normal value.
pub fn groupdro_update(q: &GroupWeights, group_losses: &[f64], eta: f64) -> GroupWeights {
    assert_eq!(q.len(), group_losses.len(), "one loss per group");
    let logits: Vec<f64> = q
        .q
        .iter()
        .zip(group_losses)
        .map(|(w, l)| w.ln() + eta * l)
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut next: Vec<f64> = logits.iter().map(|z| (z - m).exp().max(f64::MIN_POSITIVE)).collect();
    let s: f64 = next.iter().sum();
    next.iter_mut().for_each(|v| *v /= s);
    GroupWeights { q: next }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Top-k sampling settings. `k` equal to the vocabulary size is unrestricted
/// sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    pub k: usize,
    pub temperature: f64,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler {
            k: 10,
            temperature: 1.0,
        }
    }
}

impl Sampler {
    pub fn greedy() -> Sampler {
        Sampler {
            k: 1,
            temperature: 1.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, logits: &[f32], rng: &mut R) -> Result<usize> {
        sample_topk(logits, self.k, self.temperature, rng)
    }
}

/// Indices of the `k` largest logits, largest first; among equal logits the
/// lower index is admitted first.
pub fn top_k_indices(logits: &[f32], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Draws one index from `softmax(logits / temperature)` restricted to the
/// top `k` logits and renormalised. `k = 1` is argmax and consumes no
/// randomness.
pub fn sample_topk<R: Rng + ?Sized>(logits: &[f32], k: usize, temperature: f64, rng: &mut R) -> Result<usize> {
    if k == 0 || k > logits.len() {
        return Err(Error::config(format!(
            "top-k of {k} is outside [1, {}]",
            logits.len()
        )));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::config(format!("temperature {temperature} must be positive")));
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN logit during sampling".into()));
    }
    let support = top_k_indices(logits, k);
    if k == 1 {
        return Ok(support[0]);
    }
    let top = logits[support[0]] as f64;
    let weights: Vec<f64> = support
        .iter()
        .map(|&i| ((logits[i] as f64 - top) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&i, &w) in support.iter().zip(&weights) {
        if u < w {
            return Ok(i);
        }
        u -= w;
    }
    // rounding left a sliver past the last bucket
    Ok(*support.iter().zip(&weights).rev().find(|(_, &w)| w > 0.0).expect("top weight is 1").0)
}

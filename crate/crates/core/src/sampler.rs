//! Prioritized prompt sampling.
//!
//! Prompts are weighted by the estimated Bernoulli standard deviation of
//! their outcome plus a constant exploration bonus, so prompts the tracker
//! believes are always solved or always failed are still drawn occasionally.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub const DEFAULT_EXPLORE_BONUS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerParams {
    pub explore_bonus: f64,
    /// Draw with replacement instead of successive renormalized draws.
    pub replacement: bool,
    /// Ignore the weights and sample prompts uniformly.
    pub uniform: bool,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            explore_bonus: DEFAULT_EXPLORE_BONUS,
            replacement: false,
            uniform: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingWeights {
    weights: Vec<f64>,
    total: f64,
}

impl SamplingWeights {
    /// Equal weights over `n` prompts.
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
            total: n as f64,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / self.total).collect()
    }
}

/// Per-prompt weight `sqrt(v (1 - v)) + explore_bonus`.
pub fn weight(value: f64, explore_bonus: f64) -> f64 {
    (value * (1.0 - value)).sqrt() + explore_bonus
}

pub fn compute_weights(values: &[f64], explore_bonus: f64) -> Result<SamplingWeights> {
    if !(explore_bonus > 0.0 && explore_bonus.is_finite()) {
        return Err(domain(format!(
            "explore_bonus must be positive, got {explore_bonus}"
        )));
    }
    let weights = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if (0.0..=1.0).contains(&v) {
                Ok(weight(v, explore_bonus))
            } else {
                Err(domain(format!("value[{i}] = {v} outside [0, 1]")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let total = weights.iter().sum();
    Ok(SamplingWeights { weights, total })
}

fn draw_index<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if target < acc {
            return i;
        }
    }
    // Rounding can leave `target` at or just past the final partial sum.
    last
}

/// Draw `batch_size` prompt indices. Without replacement each draw removes
/// the chosen prompt and renormalizes over the rest.
pub fn sample_batch<R: Rng + ?Sized>(
    weights: &SamplingWeights,
    batch_size: usize,
    replacement: bool,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights.is_empty() {
        return Err(domain("cannot sample from an empty prompt set"));
    }
    if replacement {
        return Ok((0..batch_size)
            .map(|_| draw_index(&weights.weights, weights.total, rng))
            .collect());
    }
    if batch_size > weights.len() {
        return Err(domain(format!(
            "batch of {batch_size} exceeds {} prompts when sampling without replacement",
            weights.len()
        )));
    }
    let mut remaining = weights.weights.clone();
    let mut total = weights.total;
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let i = draw_index(&remaining, total, rng);
        batch.push(i);
        remaining[i] = 0.0;
        // Re-summing avoids drift from repeated subtraction.
        total = remaining.iter().sum();
    }
    Ok(batch)
}

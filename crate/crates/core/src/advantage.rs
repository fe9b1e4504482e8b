//! Advantage estimators: the single-stream advantage against a pre-update
//! baseline with global batch normalization, and the group baselines
//! (GRPO, RLOO) used for comparison.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Default denominator offset for group standardization.
pub const GRPO_EPS: f64 = 1e-6;

/// One stream record: what was sampled, what it earned, and the advantage
/// it carries into the policy update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub prompt: usize,
    pub action: usize,
    pub reward: f64,
    /// Tracker value read before this sample's own tracker update.
    pub baseline: f64,
    /// Log-probability of `action` under the policy that generated it.
    pub old_log_prob: f64,
    pub raw_advantage: f64,
    /// Filled once the batch is closed and normalized.
    pub normalized_advantage: Option<f64>,
}

impl Sample {
    pub fn new(
        prompt: usize,
        action: usize,
        reward: f64,
        baseline: f64,
        old_log_prob: f64,
    ) -> Self {
        Self {
            prompt,
            action,
            reward,
            baseline,
            old_log_prob,
            raw_advantage: raw_advantage(reward, baseline),
            normalized_advantage: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl BatchStats {
    pub fn of(values: &[f64]) -> Self {
        let (mean, var) = mean_and_variance(values);
        Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        }
    }
}

/// Output of [`normalize_global`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub stats: BatchStats,
    /// Set when the batch had zero spread; `values` are then all zero.
    pub degenerate: bool,
}

/// Population mean and variance. Empty input yields `(0, 0)`.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[inline]
pub fn raw_advantage(reward: f64, baseline_pre_update: f64) -> f64 {
    reward - baseline_pre_update
}

/// Standardize a whole batch by its own mean and population std.
pub fn normalize_global(advantages: &[f64]) -> Result<Normalized> {
    if advantages.len() < 2 {
        return Err(domain(format!(
            "global normalization needs at least 2 advantages, got {}",
            advantages.len()
        )));
    }
    let stats = BatchStats::of(advantages);
    // Spread below rounding noise of the mean counts as zero.
    let floor = 64.0 * f64::EPSILON * stats.mean.abs().max(f64::MIN_POSITIVE);
    if stats.std <= floor {
        return Ok(Normalized {
            values: vec![0.0; advantages.len()],
            stats,
            degenerate: true,
        });
    }
    let values = advantages
        .iter()
        .map(|a| (a - stats.mean) / stats.std)
        .collect();
    Ok(Normalized {
        values,
        stats,
        degenerate: false,
    })
}

fn check_group(group_rewards: &[f64]) -> Result<()> {
    if group_rewards.len() < 2 {
        return Err(domain(format!(
            "group baselines need G >= 2, got G={}",
            group_rewards.len()
        )));
    }
    Ok(())
}

/// Per-group standardization `(r - mean) / (std + eps)`.
pub fn grpo_advantages(group_rewards: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_group(group_rewards)?;
    let (mean, var) = mean_and_variance(group_rewards);
    let denom = var.sqrt() + eps;
    if is_degenerate(group_rewards)? || denom == 0.0 {
        return Ok(vec![0.0; group_rewards.len()]);
    }
    Ok(group_rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Leave-one-out baseline: each reward minus the mean of the others.
pub fn rloo_advantages(group_rewards: &[f64]) -> Result<Vec<f64>> {
    check_group(group_rewards)?;
    let g = group_rewards.len() as f64;
    let total: f64 = group_rewards.iter().sum();
    if is_degenerate(group_rewards)? {
        return Ok(vec![0.0; group_rewards.len()]);
    }
    Ok(group_rewards
        .iter()
        .map(|r| r - (total - r) / (g - 1.0))
        .collect())
}

/// True when every reward in the group is identical.
pub fn is_degenerate(group_rewards: &[f64]) -> Result<bool> {
    let (first, rest) = group_rewards
        .split_first()
        .ok_or_else(|| domain("empty group"))?;
    Ok(rest.iter().all(|r| r == first))
}

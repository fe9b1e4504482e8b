//! PPO-Clip surrogate with asymmetric clip range and plain gradient ascent
//! over the tabular logits.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::Sample;
use crate::envbed::PolicyTable;
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipParams {
    pub eps_low: f64,
    pub eps_high: f64,
    #[serde(rename = "lr")]
    pub learning_rate: f64,
    pub updates_per_rollout: usize,
    /// Samples per gradient step; `None` splits the dataset evenly across
    /// `updates_per_rollout` steps.
    #[serde(rename = "minibatch")]
    pub minibatch_size: Option<usize>,
}

impl Default for ClipParams {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
            learning_rate: 0.1,
            updates_per_rollout: 8,
            minibatch_size: None,
        }
    }
}

impl ClipParams {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |e: f64| e > 0.0 && e < 1.0;
        if !in_unit(self.eps_low) || !in_unit(self.eps_high) {
            return Err(domain(format!(
                "clip ranges must lie in (0, 1), got eps_low={} eps_high={}",
                self.eps_low, self.eps_high
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(domain(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.updates_per_rollout == 0 || self.minibatch_size == Some(0) {
            return Err(domain("updates_per_rollout and minibatch must be positive"));
        }
        Ok(())
    }

    fn minibatch_for(&self, n: usize) -> usize {
        self.minibatch_size
            .unwrap_or_else(|| n.div_ceil(self.updates_per_rollout))
            .clamp(1, n)
    }
}

/// `min(ratio * adv, clamp(ratio, 1 - eps_low, 1 + eps_high) * adv)`.
pub fn clip_objective(ratio: f64, adv: f64, params: &ClipParams) -> Result<f64> {
    if !(ratio > 0.0) {
        return Err(domain(format!(
            "probability ratio must be positive, got {ratio}"
        )));
    }
    let clipped = ratio.clamp(1.0 - params.eps_low, 1.0 + params.eps_high);
    Ok((ratio * adv).min(clipped * adv))
}

/// Mean negative clipped objective over `samples` and its gradient with
/// respect to the policy logits (same layout as [`PolicyTable::logits`]).
pub fn surrogate_and_gradient(
    policy: &PolicyTable,
    samples: &[Sample],
    params: &ClipParams,
) -> Result<(f64, Vec<f64>)> {
    surrogate_over(policy, samples.iter(), samples.len(), params)
}

fn surrogate_over<'a>(
    policy: &PolicyTable,
    samples: impl Iterator<Item = &'a Sample>,
    n: usize,
    params: &ClipParams,
) -> Result<(f64, Vec<f64>)> {
    let k = policy.actions();
    let mut grad = vec![0.0; policy.logits().len()];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / n as f64;
    let mut objective = 0.0;
    for s in samples {
        let adv = s.normalized_advantage.ok_or_else(|| {
            Error::Contract(format!(
                "sample for prompt {} has no normalized advantage",
                s.prompt
            ))
        })?;
        let log_probs = policy.log_probs(s.prompt);
        let ratio = (log_probs[s.action] - s.old_log_prob).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - params.eps_low, 1.0 + params.eps_high) * adv;
        objective += unclipped.min(clipped);
        // The clamped branch is constant in theta wherever it is the strict minimum.
        if clipped < unclipped {
            continue;
        }
        // d ratio / d theta[x][b] = ratio * (1[b = a] - pi(b|x))
        let row = &mut grad[s.prompt * k..(s.prompt + 1) * k];
        for (b, (g, lp)) in row.iter_mut().zip(&log_probs).enumerate() {
            let indicator = if b == s.action { 1.0 } else { 0.0 };
            *g -= scale * adv * ratio * (indicator - lp.exp());
        }
    }
    Ok((-objective * scale, grad))
}

/// Run `updates_per_rollout` gradient-ascent steps on shuffled minibatches
/// drawn from `dataset`. The dataset is reshuffled each time it is exhausted.
pub fn minibatch_update<R: Rng + ?Sized>(
    policy: &mut PolicyTable,
    dataset: &[Sample],
    params: &ClipParams,
    rng: &mut R,
) -> Result<()> {
    if dataset.is_empty() {
        return Err(domain("cannot update on an empty dataset"));
    }
    let size = params.minibatch_for(dataset.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = dataset.len();
    for _ in 0..params.updates_per_rollout {
        if cursor + size > dataset.len() {
            order.shuffle(rng);
            cursor = 0;
        }
        let batch = &order[cursor..cursor + size];
        cursor += size;
        let (_, grad) = surrogate_over(policy, batch.iter().map(|&i| &dataset[i]), size, params)?;
        if params.learning_rate != 0.0 {
            policy.step(&grad, -params.learning_rate);
        }
    }
    Ok(())
}

//! Synthetic verifiable-reward environments and the tabular softmax policy.
//!
//! Each prompt `x` offers `K` atomic actions; action `a` succeeds with
//! probability `q[x][a]`. Because everything is tabular, the expected reward,
//! its exact gradient, and per-prompt KL divergences are all closed form,
//! which is what lets the training loop be checked against oracles.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::rng::{self, Purpose};

/// Softmax logits per (prompt, action), stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    prompts: usize,
    actions: usize,
    logits: Vec<f64>,
    /// Bumped on every parameter change.
    version: u64,
}

impl PolicyTable {
    pub fn uniform(prompts: usize, actions: usize) -> Self {
        Self {
            prompts,
            actions,
            logits: vec![0.0; prompts * actions],
            version: 0,
        }
    }

    pub fn from_logits(prompts: usize, actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != prompts * actions {
            return Err(domain(format!(
                "expected {} logits for {prompts}x{actions}, got {}",
                prompts * actions,
                logits.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(domain("logits must be finite"));
        }
        Ok(Self {
            prompts,
            actions,
            logits,
            version: 0,
        })
    }

    pub fn prompts(&self) -> usize {
        self.prompts
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.logits[x * self.actions..(x + 1) * self.actions]
    }

    /// Replace all parameters, bumping the version.
    pub fn set_logits(&mut self, logits: Vec<f64>) {
        assert_eq!(logits.len(), self.logits.len());
        self.logits = logits;
        self.version += 1;
    }

    /// `theta += scale * direction`, bumping the version.
    pub fn step(&mut self, direction: &[f64], scale: f64) {
        assert_eq!(direction.len(), self.logits.len());
        for (t, d) in self.logits.iter_mut().zip(direction) {
            *t += scale * d;
        }
        self.version += 1;
    }

    pub fn log_probs(&self, x: usize) -> Vec<f64> {
        log_softmax(self.row(x))
    }

    pub fn probs(&self, x: usize) -> Vec<f64> {
        self.log_probs(x).into_iter().map(f64::exp).collect()
    }

    pub fn log_prob(&self, x: usize, a: usize) -> f64 {
        self.log_probs(x)[a]
    }
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    row.iter().map(|l| l - lse).collect()
}

/// Sample an action for prompt `x`; returns it with its log-probability.
pub fn act<R: Rng + ?Sized>(policy: &PolicyTable, x: usize, rng: &mut R) -> (usize, f64) {
    let lp = policy.log_probs(x);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = lp.len() - 1;
    for (a, l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            chosen = a;
            break;
        }
    }
    (chosen, lp[chosen])
}

/// Exact `KL(p_a(.|x) || p_b(.|x))` in nats.
pub fn policy_kl(a: &PolicyTable, b: &PolicyTable, x: usize) -> f64 {
    row_kl(a.row(x), b.row(x))
}

/// KL between the softmax distributions of two logit rows.
pub fn row_kl(a: &[f64], b: &[f64]) -> f64 {
    let (la, lb) = (log_softmax(a), log_softmax(b));
    let kl: f64 = la
        .iter()
        .zip(&lb)
        .map(|(pa, pb)| {
            if *pa == f64::NEG_INFINITY {
                0.0
            } else {
                pa.exp() * (pa - pb)
            }
        })
        .sum();
    kl.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    /// `q_t = clamp(q_0 + amplitude * sin(2 pi t / period + 2 pi x / M), 0, 1)`.
    Sinusoidal { amplitude: f64, period: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliEnv {
    prompts: usize,
    actions: usize,
    base: Vec<f64>,
    q: Vec<f64>,
    drift: Option<DriftSpec>,
    iteration: u64,
}

impl BernoulliEnv {
    pub fn new(
        prompts: usize,
        actions: usize,
        q: Vec<f64>,
        drift: Option<DriftSpec>,
    ) -> Result<Self> {
        if prompts == 0 || actions == 0 {
            return Err(domain(
                "environment needs at least one prompt and one action",
            ));
        }
        if q.len() != prompts * actions {
            return Err(domain(format!(
                "q has {} entries, expected {}",
                q.len(),
                prompts * actions
            )));
        }
        if let Some(bad) = q.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(domain(format!("success probability {bad} outside [0, 1]")));
        }
        Ok(Self {
            prompts,
            actions,
            base: q.clone(),
            q,
            drift,
            iteration: 0,
        })
    }

    pub fn prompts(&self) -> usize {
        self.prompts
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn q(&self, x: usize, a: usize) -> f64 {
        self.q[x * self.actions + a]
    }

    pub fn q_row(&self, x: usize) -> &[f64] {
        &self.q[x * self.actions..(x + 1) * self.actions]
    }

    /// Move the environment to iteration `t`, applying drift if configured.
    pub fn set_iteration(&mut self, t: u64) {
        self.iteration = t;
        let Some(DriftSpec::Sinusoidal { amplitude, period }) = self.drift else {
            return;
        };
        let tau = std::f64::consts::TAU;
        for x in 0..self.prompts {
            let phase = tau * x as f64 / self.prompts as f64;
            let shift = amplitude * (tau * t as f64 / period + phase).sin();
            for a in 0..self.actions {
                let i = x * self.actions + a;
                self.q[i] = (self.base[i] + shift).clamp(0.0, 1.0);
            }
        }
    }

    /// Mean over prompts of the best achievable success probability.
    pub fn optimal_value(&self) -> f64 {
        (0..self.prompts)
            .map(|x| self.q_row(x).iter().copied().fold(0.0, f64::max))
            .sum::<f64>()
            / self.prompts as f64
    }
}

/// Bernoulli draw with the environment's success probability.
pub fn reward<R: Rng + ?Sized>(env: &BernoulliEnv, x: usize, a: usize, rng: &mut R) -> f64 {
    if rng.random::<f64>() < env.q(x, a) {
        1.0
    } else {
        0.0
    }
}

/// `V(x) = sum_a pi(a|x) q[x][a]`.
pub fn true_value(env: &BernoulliEnv, policy: &PolicyTable, x: usize) -> f64 {
    policy
        .probs(x)
        .iter()
        .zip(env.q_row(x))
        .map(|(p, q)| p * q)
        .sum()
}

/// Expected reward under a uniform prompt distribution.
pub fn expected_reward(env: &BernoulliEnv, policy: &PolicyTable) -> f64 {
    (0..env.prompts)
        .map(|x| true_value(env, policy, x))
        .sum::<f64>()
        / env.prompts as f64
}

/// Exact gradient of [`expected_reward`] with respect to the logits:
/// `dJ/dtheta[x][a] = (1/M) pi(a|x) (q[x][a] - V(x))`.
pub fn analytic_policy_gradient(env: &BernoulliEnv, policy: &PolicyTable) -> Vec<f64> {
    let m = env.prompts as f64;
    let mut grad = Vec::with_capacity(env.prompts * env.actions);
    for x in 0..env.prompts {
        let probs = policy.probs(x);
        let v: f64 = probs.iter().zip(env.q_row(x)).map(|(p, q)| p * q).sum();
        grad.extend(probs.iter().zip(env.q_row(x)).map(|(p, q)| p * (q - v) / m));
    }
    grad
}

/// Generator for the named fixture families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// Bimodal difficulty: a share of easy prompts whose best action almost
    /// always succeeds, a share of hard prompts where every action almost
    /// always fails, and medium prompts in between.
    EasyHardMix {
        easy_fraction: f64,
        hard_fraction: f64,
        easy_best: [f64; 2],
        easy_other: [f64; 2],
        medium_best: [f64; 2],
        medium_other: [f64; 2],
        hard: [f64; 2],
    },
    /// Every entry independently uniform in `range`.
    Uniform { range: [f64; 2] },
}

impl Generator {
    pub fn easy_hard_default() -> Self {
        Generator::EasyHardMix {
            easy_fraction: 0.4,
            hard_fraction: 0.4,
            easy_best: [0.95, 0.99],
            easy_other: [0.3, 0.8],
            medium_best: [0.7, 0.9],
            medium_other: [0.1, 0.4],
            hard: [0.02, 0.08],
        }
    }

    fn generate<R: Rng + ?Sized>(
        &self,
        prompts: usize,
        actions: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        fn draw<R: Rng + ?Sized>(r: [f64; 2], rng: &mut R) -> Result<f64> {
            if !(0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0) {
                return Err(config(format!(
                    "generator range {r:?} is not a sub-interval of [0, 1]"
                )));
            }
            Ok(r[0] + (r[1] - r[0]) * rng.random::<f64>())
        }
        let mut q = Vec::with_capacity(prompts * actions);
        match *self {
            Generator::Uniform { range } => {
                for _ in 0..prompts * actions {
                    q.push(draw(range, rng)?);
                }
            }
            Generator::EasyHardMix {
                easy_fraction,
                hard_fraction,
                easy_best,
                easy_other,
                medium_best,
                medium_other,
                hard,
            } => {
                if easy_fraction < 0.0 || hard_fraction < 0.0 || easy_fraction + hard_fraction > 1.0
                {
                    return Err(config("easy_fraction + hard_fraction must lie in [0, 1]"));
                }
                let n_easy = (easy_fraction * prompts as f64).round() as usize;
                let n_hard =
                    ((hard_fraction * prompts as f64).round() as usize).min(prompts - n_easy);
                for x in 0..prompts {
                    let row_start = q.len();
                    if x < n_easy || x >= n_easy + n_hard {
                        let (best, other) = if x < n_easy {
                            (easy_best, easy_other)
                        } else {
                            (medium_best, medium_other)
                        };
                        for _ in 1..actions {
                            q.push(draw(other, rng)?);
                        }
                        q.push(draw(best, rng)?);
                    } else {
                        for _ in 0..actions {
                            q.push(draw(hard, rng)?);
                        }
                    }
                    // Put the best action in a random slot.
                    let slot = rng.random_range(0..actions);
                    q.swap(row_start + slot, row_start + actions - 1);
                }
                // Interleave difficulty classes across prompt ids.
                let mut order: Vec<usize> = (0..prompts).collect();
                for i in (1..prompts).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                let shuffled = order
                    .iter()
                    .flat_map(|&x| q[x * actions..(x + 1) * actions].to_vec())
                    .collect();
                q = shuffled;
            }
        }
        Ok(q)
    }
}

/// Environment fixture file: explicit `q` matrix or a seeded generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvFixture {
    #[serde(rename = "M")]
    pub prompts: usize,
    #[serde(rename = "K")]
    pub actions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Generator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSpec>,
    /// Initial logits; uniform policy when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_logits: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: u64,
}

impl EnvFixture {
    pub fn build(&self) -> Result<(BernoulliEnv, PolicyTable)> {
        let (m, k) = (self.prompts, self.actions);
        let q = match (&self.q, &self.generator) {
            (Some(rows), None) => flatten(rows, m, k, "q")?,
            (None, Some(g)) => {
                g.generate(m, k, &mut rng::stream(self.seed, Purpose::EnvGenerator, 0))?
            }
            _ => {
                return Err(config(
                    "env fixture needs exactly one of `q` or `generator`",
                ))
            }
        };
        let env = BernoulliEnv::new(m, k, q, self.drift)?;
        let policy = match &self.initial_logits {
            Some(rows) => PolicyTable::from_logits(m, k, flatten(rows, m, k, "initial_logits")?)?,
            None => PolicyTable::uniform(m, k),
        };
        Ok((env, policy))
    }

    /// The same fixture with `q` materialized, independent of the generator.
    pub fn resolved(&self) -> Result<EnvFixture> {
        let (env, _) = self.build()?;
        Ok(EnvFixture {
            q: Some((0..env.prompts).map(|x| env.q_row(x).to_vec()).collect()),
            generator: None,
            ..self.clone()
        })
    }
}

fn flatten(rows: &[Vec<f64>], m: usize, k: usize, what: &str) -> Result<Vec<f64>> {
    if rows.len() != m || rows.iter().any(|r| r.len() != k) {
        return Err(config(format!("`{what}` must be an {m}x{k} matrix")));
    }
    Ok(rows.concat())
}

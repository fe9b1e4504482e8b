//! Training loops over the synthetic environments.
//!
//! Single-stream iteration (SPO and its ablations):
//!
//! 1. weight prompts from the pre-iteration tracker values and draw a batch;
//! 2. for each prompt draw one action and reward from the current policy;
//! 3. compute the raw advantage against the tracker value read *before* this
//!    sample's own update, then update the tracker with a forgetting factor
//!    from the KL between the acting policy and the one that last acted on
//!    the prompt;
//! 4. normalize raw advantages across the whole batch;
//! 5. run the minibatch PPO-Clip update.
//!
//! The group loop (GRPO/RLOO) draws `B / G` prompts uniformly and `G`
//! responses each, with per-group baselines and the same optimizer.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::advantage::{
    grpo_advantages, is_degenerate, mean_and_variance, normalize_global, rloo_advantages, Sample,
};
use crate::analysis::advantage_diagnostics;
use crate::config::{Algorithm, RunConfig};
use crate::envbed::{act, expected_reward, reward, row_kl, true_value, BernoulliEnv, PolicyTable};
use crate::error::{config, Result};
use crate::optimizer::minibatch_update;
use crate::rng::{self, Purpose};
use crate::sampler::{compute_weights, sample_batch, SamplingWeights};
use crate::tracker::{
    forgetting_factor, init_from_samples, TrackerParams, TrackerState, ValueTracker,
};

/// Per-iteration diagnostics; one CSV row each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationMetrics {
    /// 1-based iteration index.
    pub iter: u64,
    /// Exact expected reward after this iteration's update.
    pub expected_reward: f64,
    /// Population variance of pre-normalization advantages.
    pub adv_var_raw: f64,
    /// Share of samples in degenerate groups (group modes only).
    pub degenerate_ratio: Option<f64>,
    pub nz_ratio_small: f64,
    pub nz_ratio_large: f64,
    /// Mean squared tracker error against the acting policy's true values.
    pub tracker_mse: Option<f64>,
    pub samples: usize,
    pub contributing: usize,
}

pub const METRICS_CSV_HEADER: &str =
    "iter,J,adv_var_raw,degenerate_ratio,nz_ratio_1e-4,nz_ratio_0.02,tracker_mse,samples,contributing";

/// Marker for undefined values in CSV output.
pub const UNDEFINED: &str = "NA";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| x.to_string())
}

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.expected_reward,
            self.adv_var_raw,
            fmt_opt(self.degenerate_ratio),
            self.nz_ratio_small,
            self.nz_ratio_large,
            fmt_opt(self.tracker_mse),
            self.samples,
            self.contributing
        )
    }
}

pub fn metrics_csv(rows: &[IterationMetrics]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

/// What happened to one single-stream rollout inside the loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StreamRecord {
    pub prompt: usize,
    /// Baseline used for the advantage.
    pub baseline: f64,
    /// Tracker value immediately before this stream's update.
    pub value_before: f64,
    pub value_after: f64,
    pub kl: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub metrics: IterationMetrics,
    /// The samples that entered the policy update.
    pub samples: Vec<Sample>,
    /// Single-stream modes only.
    pub streams: Vec<StreamRecord>,
    /// Set when the batch had zero advantage spread.
    pub degenerate_batch: bool,
}

/// Offline tracker initialization: `n0` rollouts per prompt from `policy`.
pub fn initialize_tracker(
    env: &BernoulliEnv,
    policy: &PolicyTable,
    n0: u64,
    params: TrackerParams,
    seed: u64,
) -> Result<ValueTracker> {
    let mut rng = rng::stream(seed, Purpose::TrackerInit, 0);
    let states = (0..env.prompts())
        .map(|x| {
            let successes = (0..n0)
                .filter(|_| {
                    let (a, _) = act(policy, x, &mut rng);
                    reward(env, x, a, &mut rng) == 1.0
                })
                .count() as u64;
            let mut s = init_from_samples(x as u32, successes, n0, &params)?;
            s.last_acted_version = policy.version();
            Ok(s)
        })
        .collect::<Result<Vec<TrackerState>>>()?;
    ValueTracker::from_states(params, env.prompts(), &states)
}

pub struct Trainer {
    cfg: RunConfig,
    env: BernoulliEnv,
    policy: PolicyTable,
    tracker: ValueTracker,
    /// Logits row of the policy that last acted on each prompt.
    last_rows: Vec<Vec<f64>>,
    iteration: u64,
    freeze_policy: bool,
}

impl Trainer {
    /// Build a trainer, running offline tracker initialization unless the
    /// algorithm skips it.
    pub fn new(cfg: RunConfig, env: BernoulliEnv, policy: PolicyTable) -> Result<Self> {
        let params = cfg.tracker.params();
        let tracker = if cfg.algorithm == Algorithm::SpoNoInit || cfg.algorithm.is_group() {
            ValueTracker::uniform(params, env.prompts())
        } else {
            initialize_tracker(&env, &policy, cfg.tracker.n0, params, cfg.seed)?
        };
        Self::with_tracker(cfg, env, policy, tracker)
    }

    /// Build a trainer around an existing tracker (e.g. a loaded snapshot).
    pub fn with_tracker(
        cfg: RunConfig,
        env: BernoulliEnv,
        policy: PolicyTable,
        tracker: ValueTracker,
    ) -> Result<Self> {
        cfg.validate()?;
        if env.prompts() != policy.prompts() || env.actions() != policy.actions() {
            return Err(config("policy shape does not match the environment"));
        }
        if tracker.len() != env.prompts() {
            return Err(config(format!(
                "tracker covers {} prompts, environment has {}",
                tracker.len(),
                env.prompts()
            )));
        }
        let m = env.prompts();
        if cfg.algorithm.is_group() {
            let groups = cfg.batch_size / cfg.group_size;
            if groups > m {
                return Err(config(format!(
                    "{groups} groups per batch exceed {m} prompts"
                )));
            }
        } else if !cfg.sampler.replacement {
            let prompts = launched_prompts(&cfg);
            if prompts > m {
                return Err(config(format!(
                    "{prompts} prompts per batch exceed {m} prompts without replacement"
                )));
            }
        }
        let last_rows = (0..m).map(|x| policy.row(x).to_vec()).collect();
        Ok(Self {
            cfg,
            env,
            policy,
            tracker,
            last_rows,
            iteration: 0,
            freeze_policy: false,
        })
    }

    /// Keep the policy fixed: rollouts, tracker updates and metrics still run.
    pub fn freeze_policy(mut self) -> Self {
        self.freeze_policy = true;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn env(&self) -> &BernoulliEnv {
        &self.env
    }

    pub fn policy(&self) -> &PolicyTable {
        &self.policy
    }

    pub fn tracker(&self) -> &ValueTracker {
        &self.tracker
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn step(&mut self) -> Result<IterationOutcome> {
        self.env.set_iteration(self.iteration);
        let outcome = if self.cfg.algorithm.is_group() {
            self.group_step()?
        } else {
            self.single_stream_step()?
        };
        self.iteration += 1;
        Ok(outcome)
    }

    pub fn run(mut self) -> Result<Vec<IterationMetrics>> {
        (0..self.cfg.iterations)
            .map(|_| Ok(self.step()?.metrics))
            .collect()
    }

    fn update_policy(&mut self, samples: &[Sample]) -> Result<()> {
        if self.freeze_policy || samples.iter().all(|s| s.normalized_advantage == Some(0.0)) {
            return Ok(());
        }
        let mut rng = rng::stream(self.cfg.seed, Purpose::Optimizer, self.iteration);
        minibatch_update(&mut self.policy, samples, &self.cfg.optim, &mut rng)
    }

    fn tracker_mse(&self, acting: &PolicyTable) -> f64 {
        let m = self.env.prompts();
        (0..m)
            .map(|x| (self.tracker.value(x) - true_value(&self.env, acting, x)).powi(2))
            .sum::<f64>()
            / m as f64
    }

    fn single_stream_step(&mut self) -> Result<IterationOutcome> {
        let cfg = &self.cfg;
        let t = self.iteration;
        let m = self.env.prompts();
        let repeat = cfg.bspo.map_or(1, |b| b.repeat);
        let needed_prompts = cfg.batch_size / repeat;
        let launched = launched_prompts(cfg);

        let weights = if cfg.sampler.uniform || cfg.algorithm == Algorithm::SpoUniformSampling {
            SamplingWeights::uniform(m)
        } else {
            compute_weights(&self.tracker.values(), cfg.sampler.explore_bonus)?
        };
        let mut sampler_rng = rng::stream(cfg.seed, Purpose::Sampler, t);
        let prompts = sample_batch(
            &weights,
            launched,
            cfg.sampler.replacement,
            &mut sampler_rng,
        )?;

        // Roll out every launched stream with the policy as it stands.
        let mut act_rng = rng::stream(cfg.seed, Purpose::Act, t);
        let mut reward_rng = rng::stream(cfg.seed, Purpose::Reward, t);
        let mut streams = Vec::with_capacity(launched * repeat);
        for &x in &prompts {
            for _ in 0..repeat {
                let (a, lp) = act(&self.policy, x, &mut act_rng);
                let r = reward(&self.env, x, a, &mut reward_rng);
                streams.push((x, a, lp, r));
            }
        }
        let generated = streams.len();

        // With over-sampling, keep the first `batch_size` streams to finish.
        let mut kept: Vec<usize> = (0..generated).collect();
        if launched > needed_prompts {
            let mut finish = kept.clone();
            finish.shuffle(&mut rng::stream(cfg.seed, Purpose::Completion, t));
            kept = finish[..cfg.batch_size].to_vec();
            kept.sort_unstable();
        }

        let shared_baseline = repeat > 1;
        let batch_start = self.tracker.values();
        let no_baseline = cfg.algorithm == Algorithm::SpoNoBaseline;
        let params = *self.tracker.params();
        let acting = self.policy.clone();
        let mut samples = Vec::with_capacity(kept.len());
        let mut records = Vec::with_capacity(kept.len());
        for &i in &kept {
            let (x, a, lp, r) = streams[i];
            let value_before = self.tracker.value(x);
            let tracked = if shared_baseline {
                batch_start[x]
            } else {
                value_before
            };
            let baseline = if no_baseline { 0.0 } else { tracked };
            samples.push(Sample::new(x, a, r, baseline, lp));

            let kl = row_kl(acting.row(x), &self.last_rows[x]);
            let rho = forgetting_factor(kl, &params)?;
            self.tracker.observe(x, r, rho, acting.version())?;
            self.last_rows[x].copy_from_slice(acting.row(x));
            records.push(StreamRecord {
                prompt: x,
                baseline,
                value_before,
                value_after: self.tracker.value(x),
                kl,
                rho,
            });
        }

        let raw: Vec<f64> = samples.iter().map(|s| s.raw_advantage).collect();
        let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
        let normalized = normalize_global(&raw)?;
        for (s, a) in samples.iter_mut().zip(&normalized.values) {
            s.normalized_advantage = Some(*a);
        }
        let diag = advantage_diagnostics(&rewards, &raw, None)?;
        let tracker_mse = self.tracker_mse(&acting);

        self.update_policy(&samples)?;

        let metrics = IterationMetrics {
            iter: t + 1,
            expected_reward: expected_reward(&self.env, &self.policy),
            adv_var_raw: diag.advantage_variance,
            degenerate_ratio: None,
            nz_ratio_small: diag.near_zero_ratios[0],
            nz_ratio_large: diag.near_zero_ratios[1],
            tracker_mse: Some(tracker_mse),
            samples: generated,
            contributing: raw.iter().filter(|a| **a != 0.0).count(),
        };
        Ok(IterationOutcome {
            metrics,
            samples,
            streams: records,
            degenerate_batch: normalized.degenerate,
        })
    }

    fn group_step(&mut self) -> Result<IterationOutcome> {
        let cfg = &self.cfg;
        let t = self.iteration;
        let g = cfg.group_size;
        let n_groups = cfg.batch_size / g;

        let weights = SamplingWeights::uniform(self.env.prompts());
        let mut sampler_rng = rng::stream(cfg.seed, Purpose::Sampler, t);
        let prompts = sample_batch(&weights, n_groups, false, &mut sampler_rng)?;

        let mut act_rng = rng::stream(cfg.seed, Purpose::Act, t);
        let mut reward_rng = rng::stream(cfg.seed, Purpose::Reward, t);
        let mut samples = Vec::with_capacity(cfg.batch_size);
        let mut centered = Vec::with_capacity(cfg.batch_size);
        let mut group_ids = Vec::with_capacity(cfg.batch_size);
        let mut degenerate_samples = 0;
        for (gi, &x) in prompts.iter().enumerate() {
            let rollouts: Vec<(usize, f64, f64)> = (0..g)
                .map(|_| {
                    let (a, lp) = act(&self.policy, x, &mut act_rng);
                    (a, lp, reward(&self.env, x, a, &mut reward_rng))
                })
                .collect();
            let rewards: Vec<f64> = rollouts.iter().map(|r| r.2).collect();
            let advs = match cfg.algorithm {
                Algorithm::Rloo => rloo_advantages(&rewards)?,
                _ => grpo_advantages(&rewards, cfg.grpo_eps)?,
            };
            if is_degenerate(&rewards)? {
                degenerate_samples += g;
            }
            let mean = mean_and_variance(&rewards).0;
            for ((a, lp, r), adv) in rollouts.into_iter().zip(advs) {
                let mut s = Sample::new(x, a, r, mean, lp);
                s.normalized_advantage = Some(adv);
                centered.push(s.raw_advantage);
                samples.push(s);
                group_ids.push(gi);
            }
        }

        let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
        let finals: Vec<f64> = samples
            .iter()
            .map(|s| s.normalized_advantage.unwrap_or(0.0))
            .collect();
        let diag = advantage_diagnostics(&rewards, &finals, Some(&group_ids))?;
        debug_assert_eq!(
            diag.degenerate_ratio,
            Some(degenerate_samples as f64 / samples.len() as f64)
        );

        self.update_policy(&samples)?;

        let metrics = IterationMetrics {
            iter: t + 1,
            expected_reward: expected_reward(&self.env, &self.policy),
            adv_var_raw: mean_and_variance(&centered).1,
            degenerate_ratio: diag.degenerate_ratio,
            nz_ratio_small: diag.near_zero_ratios[0],
            nz_ratio_large: diag.near_zero_ratios[1],
            tracker_mse: None,
            samples: samples.len(),
            contributing: finals.iter().filter(|a| **a != 0.0).count(),
        };
        Ok(IterationOutcome {
            metrics,
            samples,
            streams: Vec::new(),
            degenerate_batch: degenerate_samples == self.cfg.batch_size,
        })
    }
}

/// Prompts launched per single-stream iteration, including over-sampling.
fn launched_prompts(cfg: &RunConfig) -> usize {
    match cfg.bspo {
        Some(b) if cfg.algorithm == Algorithm::Bspo => {
            let needed = cfg.batch_size / b.repeat;
            (needed as f64 * (1.0 + b.oversample)).ceil() as usize
        }
        _ => cfg.batch_size,
    }
}

fn expect_algorithm(cfg: &RunConfig, ok: impl Fn(Algorithm) -> bool, what: &str) -> Result<()> {
    if ok(cfg.algorithm) {
        Ok(())
    } else {
        Err(config(format!(
            "{what} cannot run algorithm `{}`",
            cfg.algorithm.as_str()
        )))
    }
}

/// Single-stream training (SPO and its ablations).
pub fn run_spo(
    cfg: RunConfig,
    env: BernoulliEnv,
    policy: PolicyTable,
) -> Result<Vec<IterationMetrics>> {
    expect_algorithm(&cfg, |a| !a.is_group() && a != Algorithm::Bspo, "run_spo")?;
    Trainer::new(cfg, env, policy)?.run()
}

/// Group-baseline training (GRPO or RLOO).
pub fn run_grpo(
    cfg: RunConfig,
    env: BernoulliEnv,
    policy: PolicyTable,
) -> Result<Vec<IterationMetrics>> {
    expect_algorithm(&cfg, |a| a.is_group(), "run_grpo")?;
    Trainer::new(cfg, env, policy)?.run()
}

/// Single-stream training with each prompt repeated as independent streams
/// sharing one tracker.
pub fn run_bspo(
    cfg: RunConfig,
    env: BernoulliEnv,
    policy: PolicyTable,
) -> Result<Vec<IterationMetrics>> {
    expect_algorithm(&cfg, |a| a == Algorithm::Bspo, "run_bspo")?;
    Trainer::new(cfg, env, policy)?.run()
}

/// Dispatch on `cfg.algorithm`.
pub fn run(
    cfg: RunConfig,
    env: BernoulliEnv,
    policy: PolicyTable,
) -> Result<Vec<IterationMetrics>> {
    Trainer::new(cfg, env, policy)?.run()
}

/// Per-coordinate Monte Carlo estimate of a policy gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub samples: usize,
}

/// Run a frozen-policy trainer for `iterations` and average the
/// baseline-subtracted score-function gradients `(r - b) grad log pi(a|x)`
/// of every stream, using the baseline the loop itself assigned.
pub fn frozen_gradient_estimate(trainer: Trainer, iterations: u64) -> Result<GradientEstimate> {
    let mut trainer = trainer.freeze_policy();
    let policy = trainer.policy().clone();
    let (m, k) = (policy.prompts(), policy.actions());
    let probs: Vec<Vec<f64>> = (0..m).map(|x| policy.probs(x)).collect();
    let mut sum = vec![0.0; m * k];
    let mut sum_sq = vec![0.0; m * k];
    let mut n = 0usize;
    for _ in 0..iterations {
        for s in trainer.step()?.samples {
            let coef = s.reward - s.baseline;
            let row = s.prompt * k;
            for b in 0..k {
                let score = if b == s.action { 1.0 } else { 0.0 } - probs[s.prompt][b];
                let g = coef * score;
                sum[row + b] += g;
                sum_sq[row + b] += g * g;
            }
            n += 1;
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let std_err = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| ((sq / nf - mu * mu).max(0.0) / nf).sqrt())
        .collect();
    Ok(GradientEstimate {
        mean,
        std_err,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BspoConfig, EnvSource};
    use crate::envbed::EnvFixture;

    fn fixture() -> EnvFixture {
        serde_json::from_str(
            r#"{"M": 6, "K": 3, "seed": 1, "q": [
                [0.1, 0.9, 0.5], [0.0, 0.05, 0.1], [0.95, 0.9, 0.2],
                [0.5, 0.5, 0.5], [0.3, 0.6, 0.9], [0.02, 0.02, 0.7]]}"#,
        )
        .unwrap()
    }

    fn cfg(algorithm: Algorithm) -> RunConfig {
        serde_json::from_value(serde_json::json!({
            "algorithm": algorithm,
            "batch_size": 4,
            "group_size": 2,
            "iterations": 20,
            "seed": 5,
            "optim": {"lr": 2.0},
            "env": fixture(),
        }))
        .unwrap()
    }

    fn trainer(c: RunConfig) -> Trainer {
        let (env, policy) = fixture().build().unwrap();
        Trainer::new(c, env, policy).unwrap()
    }

    #[test]
    fn advantage_uses_pre_update_tracker_value() {
        let mut t = trainer(cfg(Algorithm::Spo));
        for _ in 0..10 {
            let out = t.step().unwrap();
            for (s, r) in out.samples.iter().zip(&out.streams) {
                assert_eq!(s.baseline, r.value_before);
                assert_eq!(s.raw_advantage, s.reward - r.value_before);
                if s.reward != r.value_before {
                    assert_ne!(r.value_before, r.value_after);
                }
            }
        }
    }

    #[test]
    fn kl_drives_forgetting() {
        let mut t = trainer(cfg(Algorithm::Spo));
        let first = t.step().unwrap();
        // Nothing has moved before the first update.
        assert!(first.streams.iter().all(|r| r.kl == 0.0 && r.rho == 0.96));
        let mut saw_shift = false;
        for _ in 0..10 {
            saw_shift |= t
                .step()
                .unwrap()
                .streams
                .iter()
                .any(|r| r.kl > 0.0 && r.rho < 0.96);
        }
        assert!(saw_shift);
    }

    #[test]
    fn no_baseline_uses_raw_rewards() {
        let mut t = trainer(cfg(Algorithm::SpoNoBaseline));
        let out = t.step().unwrap();
        assert!(out
            .samples
            .iter()
            .all(|s| s.raw_advantage == s.reward && s.baseline == 0.0));
    }

    #[test]
    fn no_init_starts_from_uniform_prior() {
        let t = trainer(cfg(Algorithm::SpoNoInit));
        assert!(t.tracker().values().iter().all(|v| *v == 0.5));
        let t = trainer(cfg(Algorithm::Spo));
        assert!(t
            .tracker()
            .states()
            .iter()
            .all(|s| (s.n_eff() - 8.0).abs() < 1e-12));
    }

    #[test]
    fn runs_are_deterministic() {
        let a = metrics_csv(
            &run_spo(
                cfg(Algorithm::Spo),
                fixture().build().unwrap().0,
                fixture().build().unwrap().1,
            )
            .unwrap(),
        );
        let b = metrics_csv(
            &run_spo(
                cfg(Algorithm::Spo),
                fixture().build().unwrap().0,
                fixture().build().unwrap().1,
            )
            .unwrap(),
        );
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 21);
        assert!(a.starts_with(METRICS_CSV_HEADER));
    }

    #[test]
    fn bspo_with_single_repeat_matches_spo() {
        let (env, policy) = fixture().build().unwrap();
        let spo = run_spo(cfg(Algorithm::Spo), env.clone(), policy.clone()).unwrap();
        let mut c = cfg(Algorithm::Bspo);
        c.bspo = Some(BspoConfig {
            repeat: 1,
            oversample: 0.0,
        });
        let bspo = run_bspo(c, env, policy).unwrap();
        assert_eq!(spo, bspo);
    }

    #[test]
    fn bspo_repeats_share_the_batch_start_baseline() {
        let mut c = cfg(Algorithm::Bspo);
        c.bspo = Some(BspoConfig {
            repeat: 2,
            oversample: 0.0,
        });
        let mut t = trainer(c);
        t.step().unwrap();
        let before = t.tracker().values();
        let out = t.step().unwrap();
        assert_eq!(out.samples.len(), 4);
        for s in &out.samples {
            assert_eq!(s.baseline, before[s.prompt]);
        }
        assert_eq!(out.samples[0].prompt, out.samples[1].prompt);
    }

    #[test]
    fn bspo_oversampling_keeps_batch_size() {
        let mut c = cfg(Algorithm::Bspo);
        c.bspo = Some(BspoConfig {
            repeat: 2,
            oversample: 0.5,
        });
        let mut t = trainer(c);
        let out = t.step().unwrap();
        assert_eq!(out.samples.len(), 4);
        assert_eq!(out.metrics.samples, 6);
        assert!(out.metrics.contributing <= out.metrics.samples);
    }

    #[test]
    fn group_mode_on_solved_env_is_fully_degenerate() {
        let mut c = cfg(Algorithm::Grpo);
        c.env = EnvSource::Inline(
            serde_json::from_str(r#"{"M": 3, "K": 2, "q": [[1, 1], [1, 1], [1, 1]]}"#).unwrap(),
        );
        let EnvSource::Inline(fx) = &c.env else {
            unreachable!()
        };
        let (env, policy) = fx.build().unwrap();
        let start = policy.clone();
        let mut t = Trainer::new(c, env, policy).unwrap();
        for _ in 0..5 {
            let m = t.step().unwrap().metrics;
            assert_eq!(m.degenerate_ratio, Some(1.0));
            assert_eq!(m.contributing, 0);
        }
        assert_eq!(t.policy(), &start);
    }

    #[test]
    fn rloo_and_grpo_run() {
        for a in [Algorithm::Grpo, Algorithm::Rloo] {
            let rows = run_grpo(
                cfg(a),
                fixture().build().unwrap().0,
                fixture().build().unwrap().1,
            )
            .unwrap();
            assert_eq!(rows.len(), 20);
            assert!(rows
                .iter()
                .all(|r| r.samples == 4 && r.tracker_mse.is_none()));
        }
        assert!(run_grpo(
            cfg(Algorithm::Spo),
            fixture().build().unwrap().0,
            fixture().build().unwrap().1
        )
        .is_err());
    }

    #[test]
    fn oversized_batches_are_config_errors() {
        let mut c = cfg(Algorithm::Spo);
        c.batch_size = 7;
        let (env, policy) = fixture().build().unwrap();
        assert!(Trainer::new(c.clone(), env.clone(), policy.clone()).is_err());
        c.sampler.replacement = true;
        assert!(Trainer::new(c, env, policy).is_ok());
    }

    #[test]
    fn metrics_rows_are_consistent() {
        let rows = run_spo(
            cfg(Algorithm::Spo),
            fixture().build().unwrap().0,
            fixture().build().unwrap().1,
        )
        .unwrap();
        for r in rows {
            assert!(r.contributing <= r.samples);
            assert!((0.0..=1.0).contains(&r.nz_ratio_small));
            assert!(r.nz_ratio_small <= r.nz_ratio_large);
            assert!(r.degenerate_ratio.is_none());
            assert!(r.csv_row().contains(",NA,"));
        }
    }
}

//! Closed-form cost and variance models for group-based advantage
//! estimation, Monte Carlo validators for them, and the per-batch
//! advantage diagnostics shared with the training loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::mean_and_variance;
use crate::error::{domain, Error, Result};
use crate::rng::{self, Purpose};

/// Tolerances for the near-zero advantage ratios.
pub const NEAR_ZERO_TOLERANCES: [f64; 2] = [1e-4, 0.02];

fn check_open_unit(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("probability {p} outside [0, 1]")));
    }
    if p == 0.0 || p == 1.0 {
        return Err(Error::Divergence(format!(
            "p = {p}: a deterministic outcome never produces both results"
        )));
    }
    Ok(())
}

/// Expected draws until both a success and a failure are seen:
/// `1 / (p (1 - p)) - 1`.
pub fn expected_dynamic_samples(p: f64) -> Result<f64> {
    check_open_unit(p)?;
    Ok(1.0 / (p * (1.0 - p)) - 1.0)
}

/// Probability that all `g` outcomes agree: `p^g + (1 - p)^g`.
pub fn degeneracy_prob(p: f64, g: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("probability {p} outside [0, 1]")));
    }
    if g == 0 {
        return Err(domain("group size must be >= 1"));
    }
    let g = g as i32;
    Ok(p.powi(g) + (1.0 - p).powi(g))
}

/// Variance inflation from discarding degenerate groups: `1 / (1 - Z_G(p))`.
pub fn information_loss_factor(p: f64, g: u32) -> Result<f64> {
    let z = degeneracy_prob(p, g)?;
    if z >= 1.0 {
        return Err(Error::Divergence(format!(
            "Z_{g}({p}) = 1: every group is degenerate"
        )));
    }
    Ok(1.0 / (1.0 - z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceRatioParams {
    #[serde(rename = "G")]
    pub group_size: u32,
    /// Tracker pseudo-count mass; `null` in JSON means unbounded.
    #[serde(with = "nullable_inf")]
    pub n_eff: f64,
    pub p: f64,
    pub psi_g: f64,
    pub psi_b: f64,
}

mod nullable_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// The three factors of the group-vs-tracker gradient variance ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceRatio {
    pub baseline_noise: f64,
    pub information_loss: f64,
    pub normalization_noise: f64,
    pub ratio: f64,
}

pub fn variance_ratio(params: &VarianceRatioParams) -> Result<VarianceRatio> {
    if params.group_size < 2 {
        return Err(domain(format!("G must be >= 2, got {}", params.group_size)));
    }
    if !(params.p > 0.0 && params.p < 1.0) {
        return Err(domain(format!("p must lie in (0, 1), got {}", params.p)));
    }
    if !(params.n_eff >= 0.0) || params.psi_g < 0.0 || params.psi_b < 0.0 {
        return Err(domain("n_eff, psi_g and psi_b must be non-negative"));
    }
    let g = params.group_size as f64;
    let baseline_noise = (1.0 + 1.0 / g) / (1.0 + 1.0 / (params.n_eff + 1.0));
    let information_loss = information_loss_factor(params.p, params.group_size)?;
    let normalization_noise = (1.0 + params.psi_g) / (1.0 + params.psi_b);
    Ok(VarianceRatio {
        baseline_noise,
        information_loss,
        normalization_noise,
        ratio: baseline_noise * information_loss * normalization_noise,
    })
}

/// Draw Bernoulli(p) outcomes until both values have appeared; returns the
/// number of draws.
pub fn simulate_dynamic_sampling<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u64 {
    let first = rng.random::<f64>() < p;
    let mut n = 1;
    loop {
        n += 1;
        if (rng.random::<f64>() < p) != first {
            return n;
        }
    }
}

/// Fraction of `trials` simulated groups of size `g` whose outcomes agree.
pub fn simulate_degeneracy<R: Rng + ?Sized>(p: f64, g: u32, trials: u64, rng: &mut R) -> f64 {
    let mut hits = 0u64;
    for _ in 0..trials {
        let first = rng.random::<f64>() < p;
        if (1..g).all(|_| (rng.random::<f64>() < p) == first) {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

/// Monte Carlo estimate of the excess normalization noise for groups of
/// size `n` at success probability `p`:
/// `E[(A_group - A_true)^2 | group not degenerate]`, where `A_group` is
/// standardized with the group's own mean and population std and `A_true`
/// with the true `p` and `sqrt(p (1 - p))`. With `n` equal to a large batch
/// size this estimates the global-normalization term, which tends to zero.
pub fn normalization_excess_variance<R: Rng + ?Sized>(
    p: f64,
    n: usize,
    trials: u64,
    rng: &mut R,
) -> Result<f64> {
    check_open_unit(p)?;
    if n < 2 {
        return Err(domain("group size must be >= 2"));
    }
    let sigma = (p * (1.0 - p)).sqrt();
    let mut rewards = vec![0.0; n];
    let (mut acc, mut count) = (0.0, 0u64);
    for _ in 0..trials {
        for r in rewards.iter_mut() {
            *r = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        }
        let (mean, var) = mean_and_variance(&rewards);
        if var == 0.0 {
            continue;
        }
        let sd = var.sqrt();
        for r in &rewards {
            let diff = (r - mean) / sd - (r - p) / sigma;
            acc += diff * diff;
        }
        count += n as u64;
    }
    if count == 0 {
        return Err(Error::Divergence(
            "every simulated group was degenerate".into(),
        ));
    }
    Ok(acc / count as f64)
}

/// One row of the self-check table printed by `analyze validate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub check: String,
    pub expected: f64,
    pub observed: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Monte Carlo checks of [`expected_dynamic_samples`] and [`degeneracy_prob`].
pub fn validate(trials: u64, seed: u64) -> Result<Vec<ValidationRow>> {
    let mut rows = Vec::new();
    let mut index = 0;
    let mut next_rng = || {
        index += 1;
        rng::stream(seed, Purpose::MonteCarlo, index)
    };

    for p in [0.1, 0.5] {
        let expected = expected_dynamic_samples(p)?;
        let mut r = next_rng();
        let total: u64 = (0..trials)
            .map(|_| simulate_dynamic_sampling(p, &mut r))
            .sum();
        let observed = total as f64 / trials as f64;
        let tolerance = 0.02 * expected;
        rows.push(ValidationRow {
            check: format!("E[N] p={p}"),
            expected,
            observed,
            tolerance,
            pass: (observed - expected).abs() <= tolerance,
        });
    }

    for p in [0.1, 0.5, 0.9] {
        for g in [4, 8, 16] {
            let expected = degeneracy_prob(p, g)?;
            let observed = simulate_degeneracy(p, g, trials, &mut next_rng());
            let tolerance = 3.0 * (expected * (1.0 - expected) / trials as f64).sqrt();
            rows.push(ValidationRow {
                check: format!("Z_G p={p} G={g}"),
                expected,
                observed,
                tolerance,
                pass: (observed - expected).abs() <= tolerance,
            });
        }
    }

    let observed = information_loss_factor(0.9, 8)?;
    rows.push(ValidationRow {
        check: "1/(1-Z_8(0.9))".into(),
        expected: 1.7559,
        observed,
        tolerance: 1e-3,
        pass: (observed - 1.7559).abs() <= 1e-3,
    });
    Ok(rows)
}

/// Per-batch advantage diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdvantageDiagnostics {
    /// Share of samples in degenerate groups; `None` without groups.
    pub degenerate_ratio: Option<f64>,
    /// Share of samples with `|advantage| < tau` for each tolerance in
    /// [`NEAR_ZERO_TOLERANCES`].
    pub near_zero_ratios: [f64; 2],
    /// Population variance of the rewards.
    pub reward_variance: f64,
    /// Population variance of the advantages.
    pub advantage_variance: f64,
    /// Advantage variance over samples in non-degenerate groups only;
    /// `None` when there are no groups or none is informative.
    pub effective_variance: Option<f64>,
}

/// `rewards[i]` and `advantages[i]` describe sample `i`; `groups`, when
/// present, assigns each sample a group id.
pub fn advantage_diagnostics(
    rewards: &[f64],
    advantages: &[f64],
    groups: Option<&[usize]>,
) -> Result<AdvantageDiagnostics> {
    if rewards.len() != advantages.len() || rewards.is_empty() {
        return Err(domain(
            "rewards and advantages must be non-empty and of equal length",
        ));
    }
    let n = rewards.len() as f64;
    let near_zero_ratios = NEAR_ZERO_TOLERANCES
        .map(|tau| advantages.iter().filter(|a| a.abs() < tau).count() as f64 / n);
    let reward_variance = mean_and_variance(rewards).1;
    let advantage_variance = mean_and_variance(advantages).1;

    let (degenerate_ratio, effective_variance) = match groups {
        None => (None, None),
        Some(ids) => {
            if ids.len() != rewards.len() {
                return Err(domain("group assignment length mismatch"));
            }
            let n_groups = ids.iter().max().map_or(0, |m| m + 1);
            let mut first: Vec<Option<f64>> = vec![None; n_groups];
            let mut mixed = vec![false; n_groups];
            for (&g, &r) in ids.iter().zip(rewards) {
                match first[g] {
                    None => first[g] = Some(r),
                    Some(f) if f != r => mixed[g] = true,
                    Some(_) => {}
                }
            }
            let informative: Vec<f64> = ids
                .iter()
                .zip(advantages)
                .filter(|(g, _)| mixed[**g])
                .map(|(_, a)| *a)
                .collect();
            let degenerate = (rewards.len() - informative.len()) as f64 / n;
            let effective = (!informative.is_empty()).then(|| mean_and_variance(&informative).1);
            (Some(degenerate), effective)
        }
    };

    Ok(AdvantageDiagnostics {
        degenerate_ratio,
        near_zero_ratios,
        reward_variance,
        advantage_variance,
        effective_variance,
    })
}

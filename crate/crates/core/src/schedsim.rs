//! Batch-assembly simulator: group-synchronized vs group-free rollouts.
//!
//! All tasks start at t = 0 with unbounded parallelism. A group finishes when
//! its slowest member finishes; the group strategy closes the batch once
//! enough groups are complete. The group-free strategy closes the batch as
//! soon as `take` independent tasks have finished and cancels the rest.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyModel {
    /// Latencies in seconds, handed out in order and cycled.
    FixedList {
        latencies: Vec<f64>,
    },
    /// `exp(mu + sigma * z)` with standard normal `z`.
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
}

impl LatencyModel {
    /// Heavy-tailed stand-in for the agentic rollout latencies: median
    /// 100 s and roughly 6% of tasks above 400 s.
    pub fn heavy_tail() -> Self {
        LatencyModel::Lognormal {
            mu: 100f64.ln(),
            sigma: 4f64.ln() / 1.555,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LatencyModel::FixedList { latencies } => {
                if latencies.is_empty() || latencies.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return Err(config(
                        "fixed_list latencies must be non-empty and positive",
                    ));
                }
            }
            LatencyModel::Lognormal { mu, sigma } => {
                if !mu.is_finite() || !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(config("lognormal needs finite mu and sigma >= 0"));
                }
            }
            LatencyModel::Uniform { low, high } => {
                if !(*low > 0.0 && low <= high && high.is_finite()) {
                    return Err(config("uniform latencies need 0 < low <= high"));
                }
            }
        }
        Ok(())
    }

    /// Draw `n` latencies.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            LatencyModel::FixedList { latencies } => {
                latencies.iter().copied().cycle().take(n).collect()
            }
            LatencyModel::Lognormal { mu, sigma } => (0..n)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (mu + sigma * z).exp()
                })
                .collect(),
            LatencyModel::Uniform { low, high } => (0..n)
                .map(|_| low + (high - low) * rng.random::<f64>())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Group,
    GroupFree,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Group => "group",
            Strategy::GroupFree => "groupfree",
        }
    }
}

/// A simulated rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RolloutTask {
    pub id: usize,
    pub group: Option<usize>,
    pub latency: f64,
    pub start: f64,
}

impl RolloutTask {
    pub fn completion(&self) -> f64 {
        self.start + self.latency
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub strategy: Strategy,
    /// Samples the batch needs.
    pub batch_target: usize,
    pub tasks_launched: usize,
    pub makespan: f64,
    /// Idle slots inside used groups plus work spent on tasks that did not
    /// make it into the batch (cut off at batch close).
    pub wasted: f64,
    /// Waste excluding work on unused or abandoned tasks.
    pub wasted_exclusive: f64,
    /// Group-based makespan divided by this makespan; 1 for the reference.
    pub speedup: f64,
}

/// Makespan when `groups_needed` of the launched groups must complete.
pub fn group_batch_makespan(groups: &[Vec<f64>], groups_needed: usize) -> Result<ScenarioReport> {
    if groups.is_empty() || groups.iter().any(Vec::is_empty) {
        return Err(domain("every launched group needs at least one task"));
    }
    if groups_needed == 0 || groups_needed > groups.len() {
        return Err(domain(format!(
            "need {groups_needed} groups but {} were launched",
            groups.len()
        )));
    }
    if groups.iter().flatten().any(|l| !(*l > 0.0)) {
        return Err(domain("latencies must be positive"));
    }
    let finish: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    // Stable sort: ties go to the earlier-launched group.
    order.sort_by(|&a, &b| finish[a].total_cmp(&finish[b]));
    let makespan = finish[order[groups_needed - 1]];

    let mut idle = 0.0;
    let mut unused = 0.0;
    for (rank, &g) in order.iter().enumerate() {
        if rank < groups_needed {
            idle += groups[g].iter().map(|l| finish[g] - l).sum::<f64>();
        } else {
            unused += groups[g].iter().map(|l| l.min(makespan)).sum::<f64>();
        }
    }
    Ok(ScenarioReport {
        strategy: Strategy::Group,
        batch_target: order[..groups_needed]
            .iter()
            .map(|&g| groups[g].len())
            .sum(),
        tasks_launched: groups.iter().map(Vec::len).sum(),
        makespan,
        wasted: idle + unused,
        wasted_exclusive: idle,
        speedup: 1.0,
    })
}

/// Makespan when the first `take` of the independent tasks are kept.
pub fn groupfree_batch_makespan(latencies: &[f64], take: usize) -> Result<ScenarioReport> {
    if take == 0 || take > latencies.len() {
        return Err(domain(format!(
            "cannot take {take} tasks from a pool of {}",
            latencies.len()
        )));
    }
    if latencies.iter().any(|l| !(*l > 0.0)) {
        return Err(domain("latencies must be positive"));
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let makespan = sorted[take - 1];
    let abandoned: f64 = sorted[take..].iter().map(|l| l.min(makespan)).sum();
    Ok(ScenarioReport {
        strategy: Strategy::GroupFree,
        batch_target: take,
        tasks_launched: latencies.len(),
        makespan,
        wasted: abandoned,
        wasted_exclusive: 0.0,
        speedup: 1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub latency: LatencyModel,
    pub group_size: usize,
    pub groups_launched: usize,
    pub groups_needed: usize,
    pub pool: usize,
    pub take: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn heavy_tail() -> Self {
        Self {
            latency: LatencyModel::heavy_tail(),
            group_size: 8,
            groups_launched: 6,
            groups_needed: 3,
            pool: 48,
            take: 24,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.latency.validate()?;
        if self.group_size == 0
            || self.groups_needed == 0
            || self.groups_needed > self.groups_launched
        {
            return Err(config(
                "need 1 <= groups_needed <= groups_launched and group_size >= 1",
            ));
        }
        if self.take == 0 || self.take > self.pool {
            return Err(config("need 1 <= take <= pool"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioOutcome {
    pub group: ScenarioReport,
    pub groupfree: ScenarioReport,
    pub speedup: f64,
}

/// Run both strategies on one latency draw. The group strategy partitions
/// the first `groups_launched * group_size` draws in order; the group-free
/// strategy uses the first `pool` draws of the same sequence.
pub fn run_scenario(cfg: &ScenarioConfig, replication: u64) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let n_group = cfg.groups_launched * cfg.group_size;
    let mut rng = rng::stream(cfg.seed, Purpose::Latency, replication);
    let draws = cfg.latency.draw(n_group.max(cfg.pool), &mut rng);
    let groups: Vec<Vec<f64>> = draws[..n_group]
        .chunks(cfg.group_size)
        .map(<[f64]>::to_vec)
        .collect();
    let group = group_batch_makespan(&groups, cfg.groups_needed)?;
    let mut groupfree = groupfree_batch_makespan(&draws[..cfg.pool], cfg.take)?;
    let speedup = group.makespan / groupfree.makespan;
    groupfree.speedup = speedup;
    Ok(ScenarioOutcome {
        group,
        groupfree,
        speedup,
    })
}

/// Run `replications` scenarios, optionally across `threads` workers.
/// Results are always returned in replication order.
pub fn run_replications(
    cfg: &ScenarioConfig,
    replications: u64,
    threads: usize,
) -> Result<Vec<ScenarioOutcome>> {
    cfg.validate()?;
    let threads = threads.max(1).min(replications.max(1) as usize);
    if threads == 1 {
        return (0..replications).map(|r| run_scenario(cfg, r)).collect();
    }
    let chunk = replications.div_ceil(threads as u64);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads as u64)
            .map(|t| {
                let lo = t * chunk;
                let hi = ((t + 1) * chunk).min(replications);
                scope.spawn(move || {
                    (lo..hi)
                        .map(|r| run_scenario(cfg, r))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(replications as usize);
        for h in handles {
            out.extend(h.join().expect("replication worker panicked")?);
        }
        Ok(out)
    })
}

pub const SCHED_CSV_HEADER: &str = "replication,strategy,makespan,wasted,speedup";

pub fn replications_csv(outcomes: &[ScenarioOutcome]) -> String {
    let mut out = String::from(SCHED_CSV_HEADER);
    out.push('\n');
    for (i, o) in outcomes.iter().enumerate() {
        for r in [&o.group, &o.groupfree] {
            writeln!(
                out,
                "{i},{},{},{},{}",
                r.strategy.as_str(),
                r.makespan,
                r.wasted,
                r.speedup
            )
            .unwrap();
        }
    }
    out
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

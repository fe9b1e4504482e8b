//! KL-adaptive Beta-posterior value tracker.
//!
//! Each prompt carries a Beta(alpha, beta) posterior over its success
//! probability under the current policy. Before every new observation both
//! pseudo-counts are discounted by a forgetting factor derived from how far
//! the policy has moved since the prompt was last acted on, so the tracker
//! forgets quickly when the policy shifts and averages when it is stable.
//!
//! The binary update is exactly an adaptive EMA on the posterior mean with
//! learning rate `1 / (rho * n_eff + 1)`, where `n_eff = alpha + beta`.
//! [`update_general`] exposes that form for real-valued rewards.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

/// Identifier of a prompt within an environment (its row index).
pub type PromptId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerParams {
    /// KL divergence (nats) at which the forgetting factor halves.
    pub d_half: f64,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            d_half: 0.1,
            rho_min: 0.875,
            rho_max: 0.96,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_half > 0.0 && self.d_half.is_finite()) {
            return Err(domain(format!(
                "d_half must be positive, got {}",
                self.d_half
            )));
        }
        if !(0.0 < self.rho_min && self.rho_min < self.rho_max && self.rho_max <= 1.0) {
            return Err(domain(format!(
                "need 0 < rho_min < rho_max <= 1, got rho_min={} rho_max={}",
                self.rho_min, self.rho_max
            )));
        }
        Ok(())
    }

    /// Equilibrium effective sample size `1 / (1 - rho_min)`.
    pub fn equilibrium_mass(&self) -> f64 {
        1.0 / (1.0 - self.rho_min)
    }
}

/// Forgetting factor `clamp(2^(-d / d_half), rho_min, rho_max)`.
pub fn forgetting_factor(d: f64, params: &TrackerParams) -> Result<f64> {
    if d.is_nan() || d < 0.0 {
        return Err(domain(format!("KL divergence must be >= 0, got {d}")));
    }
    let rho = (-d / params.d_half).exp2();
    Ok(rho.clamp(params.rho_min, params.rho_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    #[serde(rename = "id")]
    pub prompt_id: PromptId,
    pub alpha: f64,
    pub beta: f64,
    /// Policy version that last produced an action for this prompt.
    pub last_acted_version: u64,
}

impl TrackerState {
    /// Uniform prior `v = 0.5` carrying `mass` pseudo-counts.
    pub fn uniform(prompt_id: PromptId, mass: f64) -> Self {
        Self {
            prompt_id,
            alpha: 0.5 * mass,
            beta: 0.5 * mass,
            last_acted_version: 0,
        }
    }

    pub fn value(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn n_eff(&self) -> f64 {
        self.alpha + self.beta
    }
}

/// Discount-then-add Beta update for a binary reward.
pub fn update_binary(state: &TrackerState, reward: f64, rho: f64) -> Result<TrackerState> {
    if reward != 0.0 && reward != 1.0 {
        return Err(domain(format!(
            "binary update needs reward in {{0, 1}}, got {reward}; use update_general"
        )));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(domain(format!("rho must lie in (0, 1], got {rho}")));
    }
    Ok(TrackerState {
        alpha: rho * state.alpha + reward,
        beta: rho * state.beta + (1.0 - reward),
        ..*state
    })
}

/// Adaptive-EMA update for arbitrary real rewards. Returns `(value, n_eff)`.
pub fn update_general(v_prev: f64, n_eff_prev: f64, reward: f64, rho: f64) -> Result<(f64, f64)> {
    if !(n_eff_prev > 0.0) {
        return Err(domain(format!("n_eff must be positive, got {n_eff_prev}")));
    }
    let n_eff = rho * n_eff_prev + 1.0;
    let eta = 1.0 / n_eff;
    Ok((v_prev + eta * (reward - v_prev), n_eff))
}

/// Offline initialization from `n0` outcomes of the initial policy; the
/// pseudo-count mass starts at its equilibrium `1 / (1 - rho_min)`.
pub fn init_from_samples(
    prompt_id: PromptId,
    successes: u64,
    n0: u64,
    params: &TrackerParams,
) -> Result<TrackerState> {
    if n0 == 0 {
        return Err(domain("init_from_samples needs n0 >= 1"));
    }
    if successes > n0 {
        return Err(domain(format!("successes ({successes}) exceed n0 ({n0})")));
    }
    let v0 = successes as f64 / n0 as f64;
    let mass = params.equilibrium_mass();
    Ok(TrackerState {
        prompt_id,
        alpha: mass * v0,
        beta: mass * (1.0 - v0),
        last_acted_version: 0,
    })
}

#[derive(Serialize)]
struct SnapshotOut<'a> {
    schema_version: u32,
    prompts: &'a [TrackerState],
}

#[derive(Deserialize)]
struct SnapshotIn {
    schema_version: Option<u32>,
    prompts: Option<Vec<TrackerState>>,
}

/// Serialize tracker states as versioned JSON.
pub fn snapshot(states: &[TrackerState]) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&SnapshotOut {
        schema_version: SNAPSHOT_SCHEMA_VERSION,
        prompts: states,
    })
    .expect("tracker states always serialize");
    out.push(b'\n');
    out
}

pub fn restore(bytes: &[u8]) -> Result<Vec<TrackerState>> {
    let raw: SnapshotIn = serde_json::from_slice(bytes).map_err(|e| Error::Snapshot {
        field: "<document>".into(),
        message: e.to_string(),
    })?;
    match raw.schema_version {
        None => {
            return Err(Error::Snapshot {
                field: "schema_version".into(),
                message: "missing".into(),
            })
        }
        Some(SNAPSHOT_SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Error::Snapshot {
                field: "schema_version".into(),
                message: format!("unsupported version {v}, expected {SNAPSHOT_SCHEMA_VERSION}"),
            })
        }
    }
    let prompts = raw.prompts.ok_or_else(|| Error::Snapshot {
        field: "prompts".into(),
        message: "missing".into(),
    })?;
    for (i, s) in prompts.iter().enumerate() {
        if !(s.alpha >= 0.0 && s.beta >= 0.0 && s.alpha + s.beta > 0.0) {
            return Err(Error::Snapshot {
                field: format!("prompts[{i}]"),
                message: format!("invalid pseudo-counts alpha={} beta={}", s.alpha, s.beta),
            });
        }
    }
    Ok(prompts)
}

/// Per-prompt tracker table used by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTracker {
    params: TrackerParams,
    states: Vec<TrackerState>,
}

impl ValueTracker {
    /// Every prompt at the uniform prior with equilibrium mass.
    pub fn uniform(params: TrackerParams, prompts: usize) -> Self {
        let mass = params.equilibrium_mass();
        let states = (0..prompts)
            .map(|x| TrackerState::uniform(x as PromptId, mass))
            .collect();
        Self { params, states }
    }

    /// Build from restored states. Prompts absent from `states` get the
    /// uniform prior; ids outside `0..prompts` are rejected.
    pub fn from_states(
        params: TrackerParams,
        prompts: usize,
        states: &[TrackerState],
    ) -> Result<Self> {
        let mut tracker = Self::uniform(params, prompts);
        for s in states {
            let slot = tracker
                .states
                .get_mut(s.prompt_id as usize)
                .ok_or_else(|| Error::Snapshot {
                    field: "id".into(),
                    message: format!("prompt {} outside 0..{prompts}", s.prompt_id),
                })?;
            *slot = *s;
        }
        Ok(tracker)
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    pub fn states(&self) -> &[TrackerState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, x: usize) -> &TrackerState {
        &self.states[x]
    }

    pub fn value(&self, x: usize) -> f64 {
        self.states[x].value()
    }

    pub fn values(&self) -> Vec<f64> {
        self.states.iter().map(TrackerState::value).collect()
    }

    /// Apply one binary observation with forgetting factor `rho` and record
    /// the policy version that produced it.
    pub fn observe(&mut self, x: usize, reward: f64, rho: f64, version: u64) -> Result<()> {
        let mut next = update_binary(&self.states[x], reward, rho)?;
        next.last_acted_version = version;
        self.states[x] = next;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(alpha: f64, beta: f64) -> TrackerState {
        TrackerState {
            prompt_id: 0,
            alpha,
            beta,
            last_acted_version: 0,
        }
    }

    #[test]
    fn forgetting_factor_examples() {
        let p = TrackerParams::default();
        assert_eq!(forgetting_factor(0.0, &p).unwrap(), 0.96);
        assert_eq!(forgetting_factor(1e9, &p).unwrap(), 0.875);
        assert_eq!(forgetting_factor(f64::INFINITY, &p).unwrap(), 0.875);
        let wide = TrackerParams {
            d_half: 0.1,
            rho_min: 0.1,
            rho_max: 1.0,
        };
        assert!((forgetting_factor(0.1, &wide).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            forgetting_factor(-1e-3, &p),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn binary_update_examples() {
        let s = update_binary(&state(4.0, 4.0), 1.0, 1.0).unwrap();
        assert_eq!((s.alpha, s.beta), (5.0, 4.0));
        assert!((s.value() - 5.0 / 9.0).abs() < 1e-15);

        let s = update_binary(&state(4.0, 4.0), 1.0, 0.96).unwrap();
        assert!((s.alpha - 4.84).abs() < 1e-12);
        assert!((s.beta - 3.84).abs() < 1e-12);
        assert!((s.value() - 0.557_603_686_635_944_7).abs() < 1e-12);

        assert!(update_binary(&state(4.0, 4.0), 0.5, 1.0).is_err());
        assert!(update_binary(&state(4.0, 4.0), 1.0, 0.0).is_err());
    }

    #[test]
    fn general_update_examples() {
        let (v, n) = update_general(0.5, 8.0, 1.0, 0.96).unwrap();
        let binary = update_binary(&state(4.0, 4.0), 1.0, 0.96).unwrap();
        assert!((v - binary.value()).abs() < 1e-15);
        assert!((n - 8.68).abs() < 1e-12);
        assert_eq!(update_general(0.3, 5.0, 0.3, 0.9).unwrap().0, 0.3);
        let (v, _) = update_general(0.0, 1e15, 1.0, 1.0).unwrap();
        assert!(v < 1e-14);
        assert!(update_general(0.5, 0.0, 1.0, 0.9).is_err());
    }

    #[test]
    fn init_examples() {
        let p = TrackerParams::default();
        let s = init_from_samples(3, 6, 8, &p).unwrap();
        assert_eq!(p.equilibrium_mass(), 8.0);
        assert_eq!((s.alpha, s.beta, s.prompt_id), (6.0, 2.0, 3));
        let s = init_from_samples(0, 0, 8, &p).unwrap();
        assert_eq!((s.alpha, s.beta, s.value()), (0.0, 8.0, 0.0));
        assert!(init_from_samples(0, 0, 0, &p).is_err());
        assert!(init_from_samples(0, 9, 8, &p).is_err());
    }

    #[test]
    fn snapshot_round_trip_and_rejections() {
        assert!(restore(&snapshot(&[])).unwrap().is_empty());
        let s = TrackerState {
            prompt_id: 11,
            alpha: 4.84,
            beta: 3.84,
            last_acted_version: 42,
        };
        assert_eq!(restore(&snapshot(&[s])).unwrap(), vec![s]);

        let err = restore(br#"{"prompts": []}"#).unwrap_err();
        assert!(matches!(err, Error::Snapshot { ref field, .. } if field == "schema_version"));
        let err = restore(br#"{"schema_version": 2, "prompts": []}"#).unwrap_err();
        assert!(matches!(err, Error::Snapshot { ref field, .. } if field == "schema_version"));
        let err = restore(br#"{"schema_version": 1}"#).unwrap_err();
        assert!(matches!(err, Error::Snapshot { ref field, .. } if field == "prompts"));
        let err = restore(br#"{"schema_version": 1, "prompts": [{"id": 0, "alpha": -1, "beta": 2, "last_acted_version": 0}]}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Snapshot { ref field, .. } if field == "prompts[0]"));
        assert!(restore(b"not json").is_err());
    }

    #[test]
    fn from_states_fills_missing_with_uniform_prior() {
        let p = TrackerParams::default();
        let s = init_from_samples(1, 8, 8, &p).unwrap();
        let t = ValueTracker::from_states(p, 3, &[s]).unwrap();
        assert_eq!(t.value(1), 1.0);
        assert_eq!(t.value(0), 0.5);
        assert_eq!(t.state(2).n_eff(), 8.0);
        let bad = TrackerState { prompt_id: 7, ..s };
        assert!(ValueTracker::from_states(p, 3, &[bad]).is_err());
    }

    proptest! {
        #[test]
        fn beta_and_ema_forms_agree(
            a0 in 0.0f64..20.0,
            b0 in 0.01f64..20.0,
            steps in prop::collection::vec((0.5f64..=1.0, any::<bool>()), 1..200),
        ) {
            let mut s = state(a0, b0);
            let (mut v, mut n) = (s.value(), s.n_eff());
            for (rho, hit) in steps {
                let r = if hit { 1.0 } else { 0.0 };
                s = update_binary(&s, r, rho).unwrap();
                (v, n) = update_general(v, n, r, rho).unwrap();
                prop_assert!((v - s.value()).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&s.value()));
            }
        }

        #[test]
        fn equilibrium_mass_is_preserved_at_rho_min(
            hits in prop::collection::vec(any::<bool>(), 1..300),
            v0 in 0.0f64..=1.0,
        ) {
            let p = TrackerParams::default();
            let n0 = p.equilibrium_mass();
            let mut s = state(n0 * v0, n0 * (1.0 - v0));
            for hit in hits {
                s = update_binary(&s, if hit { 1.0 } else { 0.0 }, p.rho_min).unwrap();
                prop_assert!((s.n_eff() - n0).abs() < 1e-9);
                prop_assert!(s.n_eff() <= n0 + 1.0);
            }
        }

        #[test]
        fn forgetting_factor_is_non_increasing(d1 in 0.0f64..5.0, d2 in 0.0f64..5.0) {
            let p = TrackerParams::default();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(forgetting_factor(lo, &p).unwrap() >= forgetting_factor(hi, &p).unwrap());
        }

        #[test]
        fn constant_reward_is_approached_geometrically(c in prop::bool::ANY, rho in 0.5f64..0.99) {
            let r = if c { 1.0 } else { 0.0 };
            let mut s = state(4.0, 4.0);
            let mut gap = (s.value() - r).abs();
            for _ in 0..50 {
                s = update_binary(&s, r, rho).unwrap();
                let next = (s.value() - r).abs();
                prop_assert!(next < gap);
                gap = next;
            }
        }
    }
}

//! Run configuration files.
//!
//! A run config is JSON. The `env` field is either an inline environment
//! fixture or a path to one; relative paths resolve against the fixture
//! root (`SPOLAB_FIXTURES` when set, otherwise the config file's directory).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::advantage::GRPO_EPS;
use crate::envbed::EnvFixture;
use crate::error::{config, Error, Result};
use crate::optimizer::ClipParams;
use crate::sampler::SamplerParams;
use crate::tracker::TrackerParams;

pub const FIXTURES_ENV_VAR: &str = "SPOLAB_FIXTURES";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Spo,
    Grpo,
    Rloo,
    SpoNoBaseline,
    SpoNoInit,
    SpoUniformSampling,
    Bspo,
}

impl Algorithm {
    pub fn is_group(&self) -> bool {
        matches!(self, Algorithm::Grpo | Algorithm::Rloo)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Spo => "spo",
            Algorithm::Grpo => "grpo",
            Algorithm::Rloo => "rloo",
            Algorithm::SpoNoBaseline => "spo_no_baseline",
            Algorithm::SpoNoInit => "spo_no_init",
            Algorithm::SpoUniformSampling => "spo_uniform_sampling",
            Algorithm::Bspo => "bspo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub d_half: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Offline samples per prompt for initialization.
    pub n0: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        let p = TrackerParams::default();
        Self {
            d_half: p.d_half,
            rho_min: p.rho_min,
            rho_max: p.rho_max,
            n0: 8,
        }
    }
}

impl TrackerConfig {
    pub fn params(&self) -> TrackerParams {
        TrackerParams {
            d_half: self.d_half,
            rho_min: self.rho_min,
            rho_max: self.rho_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BspoConfig {
    /// Streams per prompt in a batch.
    pub repeat: usize,
    /// Extra prompts launched, as a fraction of those needed; the batch keeps
    /// the first-finishing streams.
    #[serde(default)]
    pub oversample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvSource {
    Path(PathBuf),
    Inline(EnvFixture),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Samples per iteration (single-stream: prompts; group modes: total
    /// responses across all groups).
    pub batch_size: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    pub iterations: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub optim: ClipParams,
    #[serde(default)]
    pub sampler: SamplerParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bspo: Option<BspoConfig>,
    #[serde(default = "default_grpo_eps")]
    pub grpo_eps: f64,
    pub env: EnvSource,
}

fn default_group_size() -> usize {
    8
}

fn default_grpo_eps() -> f64 {
    GRPO_EPS
}

impl RunConfig {
    /// Checks that do not depend on the environment size.
    pub fn validate(&self) -> Result<()> {
        self.tracker
            .params()
            .validate()
            .map_err(|e| config(e.to_string()))?;
        self.optim.validate().map_err(|e| config(e.to_string()))?;
        if !(self.sampler.explore_bonus > 0.0) {
            return Err(config("sampler.explore_bonus must be positive"));
        }
        if self.tracker.n0 == 0 {
            return Err(config("tracker.n0 must be >= 1"));
        }
        if self.algorithm.is_group() {
            if self.group_size < 2 {
                return Err(config(format!(
                    "group modes need group_size >= 2, got {}",
                    self.group_size
                )));
            }
            if !self.batch_size.is_multiple_of(self.group_size) || self.batch_size == 0 {
                return Err(config(format!(
                    "batch_size {} is not a positive multiple of group_size {}",
                    self.batch_size, self.group_size
                )));
            }
        } else if self.batch_size < 2 {
            return Err(config(format!(
                "single-stream modes need batch_size >= 2, got {}",
                self.batch_size
            )));
        }
        match (self.algorithm, &self.bspo) {
            (Algorithm::Bspo, None) => {
                return Err(config("bspo needs a `bspo` section with `repeat`"))
            }
            (Algorithm::Bspo, Some(b)) => {
                if b.repeat == 0 || !self.batch_size.is_multiple_of(b.repeat) {
                    return Err(config(format!(
                        "bspo.repeat {} must be >= 1 and divide batch_size {}",
                        b.repeat, self.batch_size
                    )));
                }
                if !(b.oversample >= 0.0 && b.oversample.is_finite()) {
                    return Err(config("bspo.oversample must be >= 0"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Load the environment fixture named by `env`.
    pub fn env_fixture(&self, base: &Path) -> Result<EnvFixture> {
        match &self.env {
            EnvSource::Inline(fx) => Ok(fx.clone()),
            EnvSource::Path(p) => {
                let path = resolve_fixture_path(base, p);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                serde_json::from_slice(&bytes)
                    .map_err(|e| Error::json(path.display().to_string(), e))
            }
        }
    }
}

/// Resolve a fixture path against `SPOLAB_FIXTURES` or `base`.
pub fn resolve_fixture_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os(FIXTURES_ENV_VAR) {
        Some(root) => Path::new(&root).join(p),
        None => base.join(p),
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        serde_json::from_str(
            r#"{"algorithm": "spo", "batch_size": 16, "iterations": 3,
                "env": {"M": 4, "K": 2, "q": [[0.1, 0.9], [0.5, 0.5], [0.2, 0.3], [1, 0]]}}"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = base();
        assert_eq!(c.optim.updates_per_rollout, 8);
        assert_eq!(c.optim.eps_high, 0.28);
        assert_eq!(c.tracker.n0, 8);
        assert_eq!(c.tracker.rho_min, 0.875);
        assert_eq!(c.sampler.explore_bonus, 0.05);
        assert!(!c.sampler.replacement);
        assert_eq!(c.group_size, 8);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let mut c = base();
        c.algorithm = Algorithm::Grpo;
        c.batch_size = 12;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.group_size = 1;
        c.batch_size = 4;
        assert!(c.validate().is_err());

        let mut c = base();
        c.batch_size = 1;
        assert!(c.validate().is_err());

        let mut c = base();
        c.algorithm = Algorithm::Bspo;
        assert!(c.validate().is_err());
        c.bspo = Some(BspoConfig {
            repeat: 3,
            oversample: 0.0,
        });
        assert!(c.validate().is_err());
        c.bspo = Some(BspoConfig {
            repeat: 4,
            oversample: 0.5,
        });
        c.validate().unwrap();

        let mut c = base();
        c.tracker.rho_min = 0.99;
        assert!(c.validate().is_err());

        let unknown = r#"{"algorithm": "spo", "batch_size": 16, "iterations": 3, "bogus": 1, "env": "x.json"}"#;
        assert!(serde_json::from_str::<RunConfig>(unknown).is_err());
    }
}

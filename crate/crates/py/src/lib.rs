//! Python bindings: `import spolab`.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use spolab_core::advantage;
use spolab_core::analysis::{self, VarianceRatioParams};
use spolab_core::config::RunConfig;
use spolab_core::envbed::{self, PolicyTable};
use spolab_core::optimizer::{self, ClipParams};
use spolab_core::rng::{self, Purpose};
use spolab_core::sampler;
use spolab_core::schedsim::{self, ScenarioConfig, ScenarioReport};
use spolab_core::tracker::{self, TrackerParams, TrackerState, ValueTracker};
use spolab_core::trainloop::{self, IterationMetrics, Trainer};
use spolab_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Divergence(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn params(d_half: f64, rho_min: f64, rho_max: f64) -> PyResult<TrackerParams> {
    let p = TrackerParams {
        d_half,
        rho_min,
        rho_max,
    };
    p.validate().map_err(to_py)?;
    Ok(p)
}

#[pyfunction]
#[pyo3(signature = (d, d_half = 0.1, rho_min = 0.875, rho_max = 0.96))]
fn forgetting_factor(d: f64, d_half: f64, rho_min: f64, rho_max: f64) -> PyResult<f64> {
    tracker::forgetting_factor(d, &params(d_half, rho_min, rho_max)?).map_err(to_py)
}

/// Discounted Beta update; returns the new `(alpha, beta)`.
#[pyfunction]
fn update_binary(alpha: f64, beta: f64, reward: f64, rho: f64) -> PyResult<(f64, f64)> {
    let s = TrackerState {
        prompt_id: 0,
        alpha,
        beta,
        last_acted_version: 0,
    };
    let next = tracker::update_binary(&s, reward, rho).map_err(to_py)?;
    Ok((next.alpha, next.beta))
}

/// EMA form; returns the new `(value, n_eff)`.
#[pyfunction]
fn update_general(value: f64, n_eff: f64, reward: f64, rho: f64) -> PyResult<(f64, f64)> {
    tracker::update_general(value, n_eff, reward, rho).map_err(to_py)
}

/// Offline initialization; returns `(alpha, beta)`.
#[pyfunction]
#[pyo3(signature = (successes, n0, rho_min = 0.875))]
fn init_from_samples(successes: u64, n0: u64, rho_min: f64) -> PyResult<(f64, f64)> {
    let p = TrackerParams {
        rho_min,
        rho_max: rho_min.max(TrackerParams::default().rho_max),
        ..TrackerParams::default()
    };
    let s = tracker::init_from_samples(0, successes, n0, &p).map_err(to_py)?;
    Ok((s.alpha, s.beta))
}

/// Per-prompt value tracker.
#[pyclass(name = "Tracker", module = "spolab")]
struct PyTracker {
    inner: ValueTracker,
}

#[pymethods]
impl PyTracker {
    #[new]
    #[pyo3(signature = (prompts, d_half = 0.1, rho_min = 0.875, rho_max = 0.96))]
    fn new(prompts: usize, d_half: f64, rho_min: f64, rho_max: f64) -> PyResult<Self> {
        Ok(Self {
            inner: ValueTracker::uniform(params(d_half, rho_min, rho_max)?, prompts),
        })
    }

    /// Load a snapshot produced by `snapshot()` or `spolab init-tracker`.
    #[staticmethod]
    #[pyo3(signature = (data, prompts, d_half = 0.1, rho_min = 0.875, rho_max = 0.96))]
    fn restore(
        data: &[u8],
        prompts: usize,
        d_half: f64,
        rho_min: f64,
        rho_max: f64,
    ) -> PyResult<Self> {
        let states = tracker::restore(data).map_err(to_py)?;
        let inner = ValueTracker::from_states(params(d_half, rho_min, rho_max)?, prompts, &states)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values()
    }

    /// `(alpha, beta)` of prompt `x`.
    fn state(&self, x: usize) -> PyResult<(f64, f64)> {
        self.check(x)?;
        let s = self.inner.state(x);
        Ok((s.alpha, s.beta))
    }

    /// Update prompt `x` with reward `r`, discounting by the forgetting
    /// factor for KL divergence `kl`.
    fn observe(&mut self, x: usize, r: f64, kl: f64) -> PyResult<f64> {
        self.check(x)?;
        let rho = tracker::forgetting_factor(kl, self.inner.params()).map_err(to_py)?;
        let version = self.inner.state(x).last_acted_version;
        self.inner.observe(x, r, rho, version).map_err(to_py)?;
        Ok(self.inner.value(x))
    }

    fn snapshot<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &tracker::snapshot(self.inner.states()))
    }
}

impl PyTracker {
    fn check(&self, x: usize) -> PyResult<()> {
        if x < self.inner.len() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!(
                "prompt {x} outside 0..{}",
                self.inner.len()
            )))
        }
    }
}

/// Globally normalized advantages: `(values, mean, std, degenerate)`.
#[pyfunction]
fn normalize_global(advantages: Vec<f64>) -> PyResult<(Vec<f64>, f64, f64, bool)> {
    let n = advantage::normalize_global(&advantages).map_err(to_py)?;
    Ok((n.values, n.stats.mean, n.stats.std, n.degenerate))
}

#[pyfunction]
#[pyo3(signature = (rewards, eps = advantage::GRPO_EPS))]
fn grpo_advantages(rewards: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    advantage::grpo_advantages(&rewards, eps).map_err(to_py)
}

#[pyfunction]
fn rloo_advantages(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    advantage::rloo_advantages(&rewards).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (values, explore_bonus = sampler::DEFAULT_EXPLORE_BONUS))]
fn sampling_probabilities(values: Vec<f64>, explore_bonus: f64) -> PyResult<Vec<f64>> {
    Ok(sampler::compute_weights(&values, explore_bonus)
        .map_err(to_py)?
        .probabilities())
}

/// Draw `batch_size` prompt indices weighted by tracker `values`.
#[pyfunction]
#[pyo3(signature = (values, batch_size, seed, replacement = false, explore_bonus = sampler::DEFAULT_EXPLORE_BONUS))]
fn sample_batch(
    values: Vec<f64>,
    batch_size: usize,
    seed: u64,
    replacement: bool,
    explore_bonus: f64,
) -> PyResult<Vec<usize>> {
    let w = sampler::compute_weights(&values, explore_bonus).map_err(to_py)?;
    sampler::sample_batch(
        &w,
        batch_size,
        replacement,
        &mut rng::stream(seed, Purpose::Sampler, 0),
    )
    .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (ratio, adv, eps_low = 0.2, eps_high = 0.28))]
fn clip_objective(ratio: f64, adv: f64, eps_low: f64, eps_high: f64) -> PyResult<f64> {
    let p = ClipParams {
        eps_low,
        eps_high,
        ..ClipParams::default()
    };
    p.validate().map_err(to_py)?;
    optimizer::clip_objective(ratio, adv, &p).map_err(to_py)
}

/// Tabular softmax policy.
#[pyclass(name = "Policy", module = "spolab")]
struct PyPolicy {
    inner: PolicyTable,
}

#[pymethods]
impl PyPolicy {
    /// Uniform policy, or the given row-major logits.
    #[new]
    #[pyo3(signature = (prompts, actions, logits = None))]
    fn new(prompts: usize, actions: usize, logits: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = match logits {
            Some(l) => PolicyTable::from_logits(prompts, actions, l).map_err(to_py)?,
            None => PolicyTable::uniform(prompts, actions),
        };
        Ok(Self { inner })
    }

    #[getter]
    fn prompts(&self) -> usize {
        self.inner.prompts()
    }

    #[getter]
    fn actions(&self) -> usize {
        self.inner.actions()
    }

    fn logits(&self) -> Vec<f64> {
        self.inner.logits().to_vec()
    }

    fn probs(&self, x: usize) -> PyResult<Vec<f64>> {
        self.check(x)?;
        Ok(self.inner.probs(x))
    }

    /// `KL(self(.|x) || other(.|x))`.
    fn kl(&self, other: &PyPolicy, x: usize) -> PyResult<f64> {
        self.check(x)?;
        if other.inner.prompts() != self.inner.prompts()
            || other.inner.actions() != self.inner.actions()
        {
            return Err(PyValueError::new_err("policy shapes differ"));
        }
        Ok(envbed::policy_kl(&self.inner, &other.inner, x))
    }

    /// Clipped surrogate loss and its logit gradient for samples given as
    /// `(prompt, action, old_log_prob, advantage)` tuples.
    #[pyo3(signature = (samples, eps_low = 0.2, eps_high = 0.28))]
    fn surrogate(
        &self,
        samples: Vec<(usize, usize, f64, f64)>,
        eps_low: f64,
        eps_high: f64,
    ) -> PyResult<(f64, Vec<f64>)> {
        let p = ClipParams {
            eps_low,
            eps_high,
            ..ClipParams::default()
        };
        p.validate().map_err(to_py)?;
        let samples = samples
            .into_iter()
            .map(|(x, a, lp, adv)| {
                self.check(x)?;
                if a >= self.inner.actions() {
                    return Err(PyValueError::new_err(format!("action {a} out of range")));
                }
                let mut s = advantage::Sample::new(x, a, 0.0, 0.0, lp);
                s.normalized_advantage = Some(adv);
                Ok(s)
            })
            .collect::<PyResult<Vec<_>>>()?;
        optimizer::surrogate_and_gradient(&self.inner, &samples, &p).map_err(to_py)
    }
}

impl PyPolicy {
    fn check(&self, x: usize) -> PyResult<()> {
        if x < self.inner.prompts() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!(
                "prompt {x} outside 0..{}",
                self.inner.prompts()
            )))
        }
    }
}

#[pyfunction]
fn expected_dynamic_samples(p: f64) -> PyResult<f64> {
    analysis::expected_dynamic_samples(p).map_err(to_py)
}

#[pyfunction]
fn degeneracy_prob(p: f64, g: u32) -> PyResult<f64> {
    analysis::degeneracy_prob(p, g).map_err(to_py)
}

#[pyfunction]
fn information_loss_factor(p: f64, g: u32) -> PyResult<f64> {
    analysis::information_loss_factor(p, g).map_err(to_py)
}

/// Variance ratio and its three factors; `n_eff=None` means unbounded.
#[pyfunction]
#[pyo3(signature = (g, p, n_eff = None, psi_g = 0.0, psi_b = 0.0))]
fn variance_ratio<'py>(
    py: Python<'py>,
    g: u32,
    p: f64,
    n_eff: Option<f64>,
    psi_g: f64,
    psi_b: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = analysis::variance_ratio(&VarianceRatioParams {
        group_size: g,
        n_eff: n_eff.unwrap_or(f64::INFINITY),
        p,
        psi_g,
        psi_b,
    })
    .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("baseline_noise", r.baseline_noise)?;
    d.set_item("information_loss", r.information_loss)?;
    d.set_item("normalization_noise", r.normalization_noise)?;
    d.set_item("ratio", r.ratio)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (p, n, trials = 100_000, seed = 0))]
fn normalization_excess_variance(p: f64, n: usize, trials: u64, seed: u64) -> PyResult<f64> {
    analysis::normalization_excess_variance(
        p,
        n,
        trials,
        &mut rng::stream(seed, Purpose::MonteCarlo, 0),
    )
    .map_err(to_py)
}

fn report_dict<'py>(py: Python<'py>, r: &ScenarioReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("strategy", r.strategy.as_str())?;
    d.set_item("batch_target", r.batch_target)?;
    d.set_item("tasks_launched", r.tasks_launched)?;
    d.set_item("makespan", r.makespan)?;
    d.set_item("wasted", r.wasted)?;
    d.set_item("wasted_exclusive", r.wasted_exclusive)?;
    Ok(d)
}

#[pyfunction]
fn group_batch_makespan<'py>(
    py: Python<'py>,
    groups: Vec<Vec<f64>>,
    groups_needed: usize,
) -> PyResult<Bound<'py, PyDict>> {
    report_dict(
        py,
        &schedsim::group_batch_makespan(&groups, groups_needed).map_err(to_py)?,
    )
}

#[pyfunction]
fn groupfree_batch_makespan<'py>(
    py: Python<'py>,
    latencies: Vec<f64>,
    take: usize,
) -> PyResult<Bound<'py, PyDict>> {
    report_dict(
        py,
        &schedsim::groupfree_batch_makespan(&latencies, take).map_err(to_py)?,
    )
}

/// Speedup of group-free over group assembly for each replication of a
/// scenario given as JSON text.
#[pyfunction]
#[pyo3(signature = (config_json, replications, threads = 1))]
fn sched_speedups(config_json: &str, replications: u64, threads: usize) -> PyResult<Vec<f64>> {
    let cfg: ScenarioConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let outcomes = schedsim::run_replications(&cfg, replications, threads).map_err(to_py)?;
    Ok(outcomes.iter().map(|o| o.speedup).collect())
}

fn metrics_dict<'py>(py: Python<'py>, m: &IterationMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iter", m.iter)?;
    d.set_item("J", m.expected_reward)?;
    d.set_item("adv_var_raw", m.adv_var_raw)?;
    d.set_item("degenerate_ratio", m.degenerate_ratio)?;
    d.set_item("nz_ratio_1e-4", m.nz_ratio_small)?;
    d.set_item("nz_ratio_0.02", m.nz_ratio_large)?;
    d.set_item("tracker_mse", m.tracker_mse)?;
    d.set_item("samples", m.samples)?;
    d.set_item("contributing", m.contributing)?;
    Ok(d)
}

/// Run a training config (JSON text). Relative fixture paths resolve
/// against `base_dir`. Returns one dict per iteration.
#[pyfunction]
#[pyo3(signature = (config_json, base_dir = ".", seed = None))]
fn train<'py>(
    py: Python<'py>,
    config_json: &str,
    base_dir: &str,
    seed: Option<u64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut cfg: RunConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let fixture = cfg
        .env_fixture(std::path::Path::new(base_dir))
        .map_err(to_py)?;
    let (env, policy) = fixture.build().map_err(to_py)?;
    let rows = py
        .detach(|| Trainer::new(cfg, env, policy).and_then(Trainer::run))
        .map_err(to_py)?;
    rows.iter().map(|m| metrics_dict(py, m)).collect()
}

/// Metrics rows in the CLI's CSV format.
#[pyfunction]
#[pyo3(signature = (config_json, base_dir = ".", seed = None))]
fn train_csv(
    py: Python<'_>,
    config_json: &str,
    base_dir: &str,
    seed: Option<u64>,
) -> PyResult<String> {
    let mut cfg: RunConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let fixture = cfg
        .env_fixture(std::path::Path::new(base_dir))
        .map_err(to_py)?;
    let (env, policy) = fixture.build().map_err(to_py)?;
    let rows = py
        .detach(|| Trainer::new(cfg, env, policy).and_then(Trainer::run))
        .map_err(to_py)?;
    Ok(trainloop::metrics_csv(&rows))
}

#[pymodule]
fn spolab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTracker>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(forgetting_factor, m)?)?;
    m.add_function(wrap_pyfunction!(update_binary, m)?)?;
    m.add_function(wrap_pyfunction!(update_general, m)?)?;
    m.add_function(wrap_pyfunction!(init_from_samples, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_global, m)?)?;
    m.add_function(wrap_pyfunction!(grpo_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(rloo_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(sampling_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(sample_batch, m)?)?;
    m.add_function(wrap_pyfunction!(clip_objective, m)?)?;
    m.add_function(wrap_pyfunction!(expected_dynamic_samples, m)?)?;
    m.add_function(wrap_pyfunction!(degeneracy_prob, m)?)?;
    m.add_function(wrap_pyfunction!(information_loss_factor, m)?)?;
    m.add_function(wrap_pyfunction!(variance_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(normalization_excess_variance, m)?)?;
    m.add_function(wrap_pyfunction!(group_batch_makespan, m)?)?;
    m.add_function(wrap_pyfunction!(groupfree_batch_makespan, m)?)?;
    m.add_function(wrap_pyfunction!(sched_speedups, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(train_csv, m)?)?;
    Ok(())
}

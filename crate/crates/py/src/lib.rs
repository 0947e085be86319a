//! Python bindings: scenario generation, evaluation, solving and training.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::Value;

use secsched::agents::checkpoint::Checkpoint;
use secsched::agents::dqn::{DqnConfig, DqnPolicy, DqnTrainer};
use secsched::agents::ppo::{ActorCritic, PpoConfig, PpoPolicy, PpoTrainer};
use secsched::agents::{CurveRow, GreedyLatency, RandomValid};
use secsched::metrics::{summarize, MetricSummary};
use secsched::scenario::{generate_scenario, ScenarioParams, WorkloadConfig};
use secsched::simenv::{run_episode, state_len, EnvConfig, Policy};
use secsched::solver::{solve_trace_in_batches, EvolveConfig, SolverKind};
use secsched::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => PyFileNotFoundError::new_err(io.to_string()),
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        e @ (Error::InvalidParameter(_) | Error::BudgetExceeded { .. }) => PyValueError::new_err(e.to_string()),
        e if e.is_data_error() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn env_config(strict_paper: bool) -> EnvConfig {
    if strict_paper {
        EnvConfig::strict_paper()
    } else {
        EnvConfig::default()
    }
}

/// A generated or loaded cluster scenario.
#[pyclass(frozen, module = "secsched")]
struct Scenario {
    inner: Arc<secsched::scenario::Scenario>,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    #[pyo3(signature = (nodes=125, types=10, functions=200, requests=10_000, zipf_beta=1.0, rate=10.0, seed=0))]
    fn generate(
        nodes: usize,
        types: usize,
        functions: usize,
        requests: usize,
        zipf_beta: f64,
        rate: f64,
        seed: u64,
    ) -> PyResult<Scenario> {
        let p = ScenarioParams {
            num_nodes: nodes,
            num_types: types,
            num_functions: functions,
            num_requests: requests,
            seed,
            workload: WorkloadConfig {
                zipf_beta,
                arrival_rate_per_s: rate,
                ..WorkloadConfig::default()
            },
            ..ScenarioParams::default()
        };
        let sc = generate_scenario(&p).map_err(py_err)?;
        Ok(Scenario { inner: Arc::new(sc) })
    }

    /// Loads `scenario.json` or a directory containing one.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Scenario> {
        let sc = secsched::scenario::Scenario::load(&path).map_err(py_err)?;
        Ok(Scenario { inner: Arc::new(sc) })
    }

    /// Writes scenario.json and the topology, function and trace CSVs.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save_dir(&dir).map_err(py_err)
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.nodes.len()
    }

    #[getter]
    fn num_functions(&self) -> usize {
        self.inner.functions.len()
    }

    #[getter]
    fn num_requests(&self) -> usize {
        self.inner.trace.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(nodes={}, functions={}, requests={})",
            self.num_nodes(),
            self.num_functions(),
            self.num_requests()
        )
    }
}

fn summary_dict<'py>(py: Python<'py>, s: &MetricSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("count", s.count)?;
    d.set_item("mean_ms", s.mean_ms)?;
    d.set_item("p50_ms", s.p50_ms)?;
    d.set_item("p95_ms", s.p95_ms)?;
    d.set_item("p99_ms", s.p99_ms)?;
    d.set_item("slo_violation_rate", s.slo_violation_rate)?;
    d.set_item("mean_decision_time_us", s.mean_decision_time_us)?;
    Ok(d)
}

fn load_policy(spec: &str, sc: &secsched::scenario::Scenario, seed: u64) -> Result<Box<dyn Policy + Send>, Error> {
    Ok(match spec {
        "greedy" => Box::new(GreedyLatency),
        "random" => Box::new(RandomValid::new(seed)),
        path => {
            let ckpt = Checkpoint::load(std::path::Path::new(path))?;
            let n = sc.nodes.len();
            let algo = ckpt.header.algo.clone();
            ckpt.check_compatible(&algo, n, state_len(n))?;
            match algo.as_str() {
                "ppo" => Box::new(PpoPolicy::new(ActorCritic::from_checkpoint(&ckpt, n)?)),
                "dqn" => Box::new(DqnPolicy { q: ckpt.net("q")? }),
                other => return Err(Error::Checkpoint(format!("unknown algorithm {other:?}"))),
            }
        }
    })
}

/// Runs one episode of `policy` ("greedy", "random" or a checkpoint path)
/// and returns its latency summary.
#[pyfunction]
#[pyo3(signature = (scenario, policy="greedy", seed=0, strict_paper=false))]
fn evaluate<'py>(
    py: Python<'py>,
    scenario: &Scenario,
    policy: &str,
    seed: u64,
    strict_paper: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let sc = scenario.inner.clone();
    let spec = policy.to_string();
    let summary = py
        .detach(move || -> Result<MetricSummary, Error> {
            let mut pol = load_policy(&spec, &sc, seed)?;
            let report = run_episode(pol.as_mut(), sc, env_config(strict_paper), seed)?;
            summarize(&report)
        })
        .map_err(py_err)?;
    summary_dict(py, &summary)
}

/// Solves the trace in static batches and replays the placements.
#[pyfunction]
#[pyo3(signature = (scenario, method="evolve", budget=None, batch_size=16, seed=0, strict_paper=false))]
fn solve<'py>(
    py: Python<'py>,
    scenario: &Scenario,
    method: &str,
    budget: Option<u64>,
    batch_size: usize,
    seed: u64,
    strict_paper: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = match method {
        "brute" => SolverKind::Brute {
            budget: budget.unwrap_or(10_000_000),
        },
        "evolve" => SolverKind::Evolve(EvolveConfig::with_budget(budget.unwrap_or(50_000), seed)),
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}; use 'brute' or 'evolve'"))),
    };
    let sc = scenario.inner.clone();
    let (summary, objective) = py
        .detach(move || -> Result<(MetricSummary, f64), Error> {
            let run = solve_trace_in_batches(sc, env_config(strict_paper), batch_size, &kind, true)?;
            let objective = run.batches.iter().map(|b| b.result.objective_ms).sum();
            Ok((summarize(&run.report)?, objective))
        })
        .map_err(py_err)?;
    let d = summary_dict(py, &summary)?;
    d.set_item("objective_ms", objective)?;
    Ok(d)
}

/// Applies a JSON object of overrides to a serializable config.
fn overlay<T: serde::Serialize + serde::de::DeserializeOwned>(base: T, overrides: Option<&str>) -> PyResult<T> {
    let Some(text) = overrides else { return Ok(base) };
    let bad = |e: serde_json::Error| PyValueError::new_err(format!("config: {e}"));
    let patch: Value = serde_json::from_str(text).map_err(bad)?;
    let mut merged = serde_json::to_value(&base).map_err(bad)?;
    let (Value::Object(fields), Value::Object(patch)) = (&mut merged, patch) else {
        return Err(PyValueError::new_err("config must be a JSON object"));
    };
    for (k, v) in patch {
        if !fields.contains_key(&k) {
            return Err(PyValueError::new_err(format!("unknown config key {k:?}")));
        }
        fields.insert(k, v);
    }
    serde_json::from_value(merged).map_err(bad)
}

fn curve_dicts<'py>(py: Python<'py>, rows: &[CurveRow]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("env_steps", r.env_steps)?;
            d.set_item("mean_episode_reward", r.mean_episode_reward)?;
            d.set_item("mean_latency_ms", r.mean_latency_ms)?;
            d.set_item("p99_latency_ms", r.p99_latency_ms)?;
            d.set_item("slo_violation_rate", r.slo_violation_rate)?;
            d.set_item("clip_fraction", r.clip_fraction)?;
            d.set_item("entropy", r.entropy)?;
            Ok(d)
        })
        .collect()
}

/// Trains a PPO or DQN agent, writes its checkpoint and returns the
/// learning curve. `config` is a JSON object of hyperparameter overrides.
#[pyfunction]
#[pyo3(signature = (scenario, checkpoint, algo="ppo", steps=50_000, seed=0, config=None, strict_paper=false))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    scenario: &Scenario,
    checkpoint: PathBuf,
    algo: &str,
    steps: u64,
    seed: u64,
    config: Option<&str>,
    strict_paper: bool,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let sc = scenario.inner.clone();
    let env = EnvConfig {
        strict_actions: false,
        ..env_config(strict_paper)
    };
    let rows = match algo {
        "ppo" => {
            let mut base = PpoConfig::default();
            if strict_paper {
                base.advantage = secsched::agents::ppo::AdvantageMode::OneStep;
            }
            let cfg = overlay(base, config)?;
            py.detach(move || -> Result<Vec<CurveRow>, Error> {
                let mut t = PpoTrainer::new(sc, env, cfg, seed, steps)?;
                t.run(|_| {})?;
                t.checkpoint()?.save(&checkpoint)?;
                Ok(t.curve)
            })
        }
        "dqn" => {
            let cfg = overlay(DqnConfig::default(), config)?;
            py.detach(move || -> Result<Vec<CurveRow>, Error> {
                let mut t = DqnTrainer::new(sc, env, cfg, seed, steps)?;
                t.run(|_| {})?;
                t.checkpoint()?.save(&checkpoint)?;
                Ok(t.curve)
            })
        }
        other => return Err(PyValueError::new_err(format!("unknown algorithm {other:?}; use 'ppo' or 'dqn'"))),
    }
    .map_err(py_err)?;
    curve_dicts(py, &rows)
}

/// Nearest-rank percentile of `samples` at quantile `q` in (0, 1].
#[pyfunction]
fn percentile(samples: Vec<f64>, q: f64) -> PyResult<f64> {
    secsched::metrics::percentile(&samples, q).map_err(py_err)
}

#[pymodule(name = "secsched")]
fn secsched_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_applies_known_keys_and_rejects_unknown_ones() {
        let cfg = overlay(PpoConfig::default(), Some(r#"{"hidden": 32}"#)).unwrap();
        assert_eq!(cfg.hidden, 32);
        assert_eq!(cfg.rollout_steps, PpoConfig::default().rollout_steps);
        assert!(overlay(PpoConfig::default(), Some(r#"{"hiden": 32}"#)).is_err());
        assert!(overlay(PpoConfig::default(), Some("[1]")).is_err());
        assert_eq!(overlay(DqnConfig::default(), None).unwrap(), DqnConfig::default());
    }

    #[test]
    fn strict_flag_selects_the_strict_environment() {
        assert_eq!(env_config(true), EnvConfig::strict_paper());
        assert_eq!(env_config(false), EnvConfig::default());
    }
}

//! Scheduling agents: PPO with a hierarchical actor, an n-step DQN
//! baseline, and two heuristics.

pub mod checkpoint;
pub mod dqn;
pub mod ppo;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::percentile;
use crate::simenv::{Action, Policy, SimEnv};

pub use checkpoint::Checkpoint;
pub use dqn::{DqnConfig, DqnPolicy, DqnTrainer};
pub use ppo::{ActorCritic, AdvantageMode, PpoConfig, PpoPolicy, PpoTrainer};

/// Uniform over every valid `(node, reuse/new)` pair.
#[derive(Debug, Clone)]
pub struct RandomValid {
    rng: ChaCha8Rng,
}

impl RandomValid {
    pub fn new(seed: u64) -> Self {
        RandomValid {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomValid {
    fn decide(&mut self, env: &SimEnv) -> Result<Action> {
        env.mask()
            .valid_actions()
            .choose(&mut self.rng)
            .copied()
            .ok_or(Error::AllMasked)
    }

    fn name(&self) -> String {
        "random".into()
    }
}

/// Myopic: the valid action with the lowest estimated latency.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyLatency;

impl Policy for GreedyLatency {
    fn decide(&mut self, env: &SimEnv) -> Result<Action> {
        env.best_valid_action().ok_or(Error::AllMasked)
    }

    fn name(&self) -> String {
        "greedy".into()
    }
}

/// One row of a training learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub update: u64,
    pub env_steps: u64,
    /// Mean per-step reward over the rollout scaled to one full trace.
    pub mean_episode_reward: f64,
    pub mean_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub slo_violation_rate: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub value_loss: f64,
}

pub const CURVE_HEADER: [&str; 7] = [
    "env_steps",
    "mean_episode_reward",
    "mean_latency_ms",
    "p99_latency_ms",
    "slo_violation_rate",
    "clip_fraction",
    "entropy",
];

pub fn curve_record(r: &CurveRow) -> [String; 7] {
    [
        r.env_steps.to_string(),
        r.mean_episode_reward.to_string(),
        r.mean_latency_ms.to_string(),
        r.p99_latency_ms.to_string(),
        r.slo_violation_rate.to_string(),
        r.clip_fraction.to_string(),
        r.entropy.to_string(),
    ]
}

pub fn write_curve_csv(rows: &[CurveRow], path: &std::path::Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(CURVE_HEADER)?;
    for r in rows {
        w.write_record(curve_record(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Rollout statistics over `(reward, latency_ms, slo_met)` samples.
pub(crate) fn rollout_stats(samples: &[(f64, f64, bool)], trace_len: usize) -> (f64, f64, f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let n = samples.len() as f64;
    let reward = samples.iter().map(|s| s.0).sum::<f64>() / n * trace_len as f64;
    let lat: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mean = lat.iter().sum::<f64>() / n;
    let p99 = percentile(&lat, 0.99).unwrap_or(0.0);
    let viol = samples.iter().filter(|s| !s.2).count() as f64 / n;
    (reward, mean, p99, viol)
}

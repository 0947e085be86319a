//! n-step DQN over the flattened `|V| x 2` joint action space, with a
//! uniform replay buffer, a periodically synced target network and masked
//! epsilon-greedy exploration.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::ppo::{restore_rng, Worker};
use super::{rollout_stats, CurveRow};
use crate::error::{Error, Result};
use crate::neural::{clip_global_norm, Activation, AdamConfig, AdamState, InitConfig, Mlp};
use crate::scenario::Scenario;
use crate::simenv::{state_len, Action, EnvConfig, Policy, SimEnv};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub gamma: f64,
    pub n_step: usize,
    pub replay_capacity: usize,
    /// Learner steps between target-network syncs.
    pub target_sync: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of training over which epsilon decays linearly.
    pub eps_fraction: f64,
    pub learning_starts: u64,
    /// Environment steps per learner step.
    pub train_freq: u64,
    pub hidden: usize,
    pub max_grad_norm: f64,
    pub huber_delta: f64,
    /// Environment steps per learning-curve row.
    pub log_interval: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.99,
            n_step: 3,
            replay_capacity: 100_000,
            target_sync: 1000,
            batch_size: 64,
            lr: 5e-4,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.3,
            learning_starts: 1000,
            train_freq: 4,
            hidden: 128,
            max_grad_norm: 10.0,
            huber_delta: 1.0,
            log_interval: 2048,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_step == 0 || self.batch_size == 0 || self.replay_capacity == 0 || self.train_freq == 0 {
            return Err(Error::InvalidParameter(
                "n_step, batch_size, replay_capacity and train_freq must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter("gamma must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayItem {
    pub state: Vec<f32>,
    pub action: usize,
    /// Discounted sum of up to `n` rewards.
    pub ret: f64,
    pub next_state: Vec<f32>,
    pub next_mask: Vec<bool>,
    /// `gamma^k` for the bootstrap term, zero at episode end.
    pub discount: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Replay {
    items: Vec<ReplayItem>,
    next: usize,
    capacity: usize,
}

impl Replay {
    pub fn new(capacity: usize) -> Self {
        Replay {
            items: Vec::new(),
            next: 0,
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: ReplayItem) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample<'a, R: Rng>(&'a self, n: usize, rng: &mut R) -> Vec<&'a ReplayItem> {
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

/// Accumulates single-step transitions into n-step replay items.
#[derive(Debug, Clone, Default)]
pub struct NStepBuffer {
    pending: VecDeque<(Vec<f32>, usize, f64)>,
}

impl NStepBuffer {
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        cfg: &DqnConfig,
        state: Vec<f32>,
        action: usize,
        reward: f64,
        next_state: &[f32],
        next_mask: &[bool],
        done: bool,
    ) -> Vec<ReplayItem> {
        self.pending.push_back((state, action, reward));
        let mut out = Vec::new();
        let emit = |pending: &VecDeque<(Vec<f32>, usize, f64)>, terminal: bool| {
            let (s, a, _) = &pending[0];
            let mut ret = 0.0;
            let mut g = 1.0;
            for (_, _, r) in pending {
                ret += g * r;
                g *= cfg.gamma;
            }
            ReplayItem {
                state: s.clone(),
                action: *a,
                ret,
                next_state: next_state.to_vec(),
                next_mask: if terminal { vec![true; next_mask.len()] } else { next_mask.to_vec() },
                discount: if terminal { 0.0 } else { g },
            }
        };
        if done {
            while !self.pending.is_empty() {
                out.push(emit(&self.pending, true));
                self.pending.pop_front();
            }
        } else if self.pending.len() >= cfg.n_step {
            out.push(emit(&self.pending, false));
            self.pending.pop_front();
        }
        out
    }
}

fn masked_argmax(q: &[f32], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct DqnTrainer {
    pub config: DqnConfig,
    pub q: Mlp<f32>,
    pub target: Mlp<f32>,
    pub adam: AdamState<f32>,
    pub worker: Worker,
    pub rng: ChaCha8Rng,
    pub replay: Replay,
    pub nstep: NStepBuffer,
    pub env_steps: u64,
    pub learner_steps: u64,
    pub total_steps: u64,
    pub seed: u64,
    pub curve: Vec<CurveRow>,
    window: Vec<(f64, f64, bool)>,
    window_loss: (f64, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResumeState {
    rng_seed: String,
    rng_word_pos: String,
    episode_seed: u64,
    episode_actions: Vec<usize>,
    episodes: u64,
    learner_steps: u64,
    total_steps: u64,
    adam_step: u64,
    env_config: EnvConfig,
}

impl DqnTrainer {
    pub fn new(scenario: Arc<Scenario>, env_config: EnvConfig, config: DqnConfig, seed: u64, total_steps: u64) -> Result<Self> {
        config.validate()?;
        if total_steps == 0 {
            return Err(Error::InvalidParameter("total_steps must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = scenario.nodes.len();
        let q = Mlp::new(
            &[state_len(n), config.hidden, config.hidden, 2 * n],
            Activation::Identity,
            InitConfig::default(),
            &mut rng,
        )?;
        let adam = AdamState::new(
            &q,
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
        );
        Ok(DqnTrainer {
            target: q.clone(),
            q,
            adam,
            worker: Worker::new(scenario, env_config, seed)?,
            rng,
            replay: Replay::new(config.replay_capacity),
            nstep: NStepBuffer::default(),
            env_steps: 0,
            learner_steps: 0,
            total_steps,
            seed,
            curve: Vec::new(),
            window: Vec::new(),
            window_loss: (0.0, 0),
            config,
        })
    }

    pub fn epsilon(&self) -> f64 {
        let horizon = self.config.eps_fraction * self.total_steps as f64;
        let frac = if horizon > 0.0 { (self.env_steps as f64 / horizon).min(1.0) } else { 1.0 };
        self.config.eps_start * (1.0 - frac) + self.config.eps_end * frac
    }

    pub fn is_finished(&self) -> bool {
        self.env_steps >= self.total_steps
    }

    /// One environment step, plus a learner step when due. Returns a curve
    /// row when a logging interval completes.
    pub fn step(&mut self) -> Result<Option<CurveRow>> {
        let env = &self.worker.env;
        let state = env.observe();
        let mask = env.mask().joint();
        let a = if self.rng.gen::<f64>() < self.epsilon() {
            let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            *valid.choose(&mut self.rng).ok_or(Error::AllMasked)?
        } else {
            masked_argmax(&self.q.forward(&state)?, &mask).ok_or(Error::AllMasked)?
        };
        let out = self.worker.step(Action::from_joint_index(a))?;
        let next_mask = self.worker.env.mask().joint();
        let next_state = if out.done { out.next_state.clone() } else { self.worker.env.observe() };
        for item in self.nstep.push(&self.config, state, a, out.reward, &next_state, &next_mask, out.done) {
            self.replay.push(item);
        }
        self.env_steps += 1;
        self.window.push((out.reward, out.breakdown.total_ms, out.slo_met));

        if self.env_steps >= self.config.learning_starts
            && self.env_steps.is_multiple_of(self.config.train_freq)
            && self.replay.len() >= self.config.batch_size
        {
            let loss = self.learn()?;
            self.window_loss.0 += loss;
            self.window_loss.1 += 1;
        }

        if self.env_steps.is_multiple_of(self.config.log_interval) || self.is_finished() {
            let (reward, mean, p99, viol) = rollout_stats(&self.window, self.worker.env.scenario().trace.len());
            let row = CurveRow {
                update: self.learner_steps,
                env_steps: self.env_steps,
                mean_episode_reward: reward,
                mean_latency_ms: mean,
                p99_latency_ms: p99,
                slo_violation_rate: viol,
                clip_fraction: 0.0,
                entropy: 0.0,
                value_loss: if self.window_loss.1 > 0 { self.window_loss.0 / self.window_loss.1 as f64 } else { 0.0 },
            };
            self.window.clear();
            self.window_loss = (0.0, 0);
            self.curve.push(row.clone());
            return Ok(Some(row));
        }
        Ok(None)
    }

    /// One minibatch of Huber TD regression; returns the mean loss.
    fn learn(&mut self) -> Result<f64> {
        let batch: Vec<ReplayItem> = self
            .replay
            .sample(self.config.batch_size, &mut self.rng)
            .into_iter()
            .cloned()
            .collect();
        let b = batch.len() as f64;
        let delta = self.config.huber_delta;
        let mut grads = self.q.zero_grads();
        let mut loss = 0.0;
        for it in &batch {
            let mut y = it.ret;
            if it.discount > 0.0 {
                let qn = self.target.forward(&it.next_state)?;
                let best = masked_argmax(&qn, &it.next_mask).ok_or(Error::AllMasked)?;
                y += it.discount * qn[best] as f64;
            }
            let cache = self.q.forward_cached(&it.state)?;
            let err = cache.output()[it.action] as f64 - y;
            loss += if err.abs() <= delta { 0.5 * err * err } else { delta * (err.abs() - 0.5 * delta) };
            let mut g = vec![0.0f32; self.q.output_size()];
            g[it.action] = (err.clamp(-delta, delta) / b) as f32;
            self.q.backward(&cache, &g, &mut grads)?;
        }
        if !loss.is_finite() {
            return Err(Error::Numerical("non-finite TD loss".into()));
        }
        clip_global_norm(&mut [&mut grads], self.config.max_grad_norm);
        self.adam.step(&mut self.q, &grads)?;
        self.learner_steps += 1;
        if self.learner_steps.is_multiple_of(self.config.target_sync) {
            self.target = self.q.clone();
        }
        Ok(loss / b)
    }

    pub fn run(&mut self, mut progress: impl FnMut(&CurveRow)) -> Result<()> {
        while !self.is_finished() {
            if let Some(row) = self.step()? {
                progress(&row);
            }
        }
        Ok(())
    }

    pub fn policy(&self) -> DqnPolicy {
        DqnPolicy { q: self.q.clone() }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let n = self.worker.env.num_nodes();
        let mut c = Checkpoint::new("dqn", n, state_len(n), serde_json::to_value(&self.config)?, self.env_steps, self.seed);
        c.push_net("q", &self.q);
        c.push_net("q.target", &self.target);
        c.push_adam("q", &self.adam);
        let rs = ResumeState {
            rng_seed: self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            episode_seed: self.worker.episode_seed,
            episode_actions: self.worker.episode_actions.iter().map(|a| a.joint_index()).collect(),
            episodes: self.worker.episodes,
            learner_steps: self.learner_steps,
            total_steps: self.total_steps,
            adam_step: self.adam.step,
            env_config: *self.worker.env.config(),
        };
        c.header.resume = Some(serde_json::to_value(rs)?);
        Ok(c)
    }

    /// Restores weights, optimizer, exploration schedule and environment
    /// position. The replay buffer is not persisted and starts empty.
    pub fn resume(scenario: Arc<Scenario>, ckpt: &Checkpoint) -> Result<Self> {
        let n = scenario.nodes.len();
        ckpt.check_compatible("dqn", n, state_len(n))?;
        let config: DqnConfig = serde_json::from_value(ckpt.header.config.clone())
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let rs: ResumeState = serde_json::from_value(
            ckpt.header
                .resume
                .clone()
                .ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("resume state: {e}")))?;
        let q = ckpt.net("q")?;
        let target = ckpt.net("q.target")?;
        let adam = ckpt.adam(
            "q",
            &q,
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            rs.adam_step,
        )?;
        let actions: Vec<Action> = rs.episode_actions.iter().map(|&i| Action::from_joint_index(i)).collect();
        Ok(DqnTrainer {
            q,
            target,
            adam,
            worker: Worker::replay(scenario, rs.env_config, rs.episode_seed, &actions, rs.episodes)?,
            rng: restore_rng(&rs.rng_seed, &rs.rng_word_pos)?,
            replay: Replay::new(config.replay_capacity),
            nstep: NStepBuffer::default(),
            env_steps: ckpt.header.training_step,
            learner_steps: rs.learner_steps,
            total_steps: rs.total_steps,
            seed: ckpt.header.seed,
            curve: Vec::new(),
            window: Vec::new(),
            window_loss: (0.0, 0),
            config,
        })
    }
}

/// Greedy masked argmax over joint Q-values.
#[derive(Debug, Clone)]
pub struct DqnPolicy {
    pub q: Mlp<f32>,
}

impl DqnPolicy {
    pub fn load(path: &std::path::Path, scenario: &Scenario) -> Result<DqnPolicy> {
        let ckpt = Checkpoint::load(path)?;
        let n = scenario.nodes.len();
        ckpt.check_compatible("dqn", n, state_len(n))?;
        Ok(DqnPolicy { q: ckpt.net("q")? })
    }
}

impl Policy for DqnPolicy {
    fn decide(&mut self, env: &SimEnv) -> Result<Action> {
        let q = self.q.forward(&env.observe())?;
        masked_argmax(&q, &env.mask().joint())
            .map(Action::from_joint_index)
            .ok_or(Error::AllMasked)
    }

    fn name(&self) -> String {
        "dqn".into()
    }
}

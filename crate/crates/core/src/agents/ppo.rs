//! Clipped-surrogate PPO with a hierarchical actor: a node head, then a
//! reuse/new head conditioned on the chosen node, over a shared trunk.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::{rollout_stats, CurveRow};
use crate::error::{Error, Result};
use crate::neural::{
    clip_global_norm, masked_sample, Activation, AdamConfig, AdamState, CategoricalHead, InitConfig, Mlp,
    MlpGrads,
};
use crate::scenario::Scenario;
use crate::simenv::{state_len, Action, ActionMask, EnvConfig, Policy, ReuseChoice, SimEnv};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdvantageMode {
    OneStep,
    Gae { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_eps: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub rollout_steps: usize,
    pub entropy_coef: f64,
    /// Linearly anneal the entropy bonus to zero over training.
    pub entropy_anneal: bool,
    pub value_coef: f64,
    pub advantage: AdvantageMode,
    pub normalize_advantages: bool,
    pub max_grad_norm: f64,
    pub hidden: usize,
    pub reuse_hidden: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            clip_eps: 0.2,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            epochs: 4,
            minibatch: 256,
            rollout_steps: 2048,
            entropy_coef: 0.01,
            entropy_anneal: true,
            value_coef: 0.5,
            advantage: AdvantageMode::Gae { lambda: 0.95 },
            normalize_advantages: true,
            max_grad_norm: 10.0,
            hidden: 128,
            reuse_hidden: 64,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.clip_eps <= 0.0 {
            return bad("clip_eps must be positive");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.rollout_steps == 0 {
            return bad("epochs, minibatch and rollout_steps must be positive");
        }
        if self.hidden == 0 || self.reuse_hidden == 0 {
            return bad("hidden sizes must be positive");
        }
        if let AdvantageMode::Gae { lambda } = self.advantage {
            if !(0.0..=1.0).contains(&lambda) {
                return bad("GAE lambda must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub trunk: Mlp<f32>,
    pub node_head: Mlp<f32>,
    pub reuse_head: Mlp<f32>,
    pub critic: Mlp<f32>,
}

/// A sampled or greedy action with its log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorOutput {
    pub action: Action,
    pub log_prob_node: f64,
    pub log_prob_reuse: f64,
    pub log_prob: f64,
}

pub enum ActMode<'a, R: Rng> {
    Sample(&'a mut R),
    Greedy,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(
        state_len: usize,
        num_nodes: usize,
        hidden: usize,
        reuse_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let init = InitConfig::default();
        Ok(ActorCritic {
            trunk: Mlp::new(&[state_len, hidden, hidden], Activation::Tanh, InitConfig { output_gain: 1.0, ..init }, rng)?,
            node_head: Mlp::new(&[hidden, num_nodes], Activation::Identity, init, rng)?,
            reuse_head: Mlp::new(&[hidden + num_nodes, reuse_hidden, 2], Activation::Identity, init, rng)?,
            critic: Mlp::new(&[state_len, hidden, hidden, 1], Activation::Identity, init, rng)?,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_head.output_size()
    }

    pub fn state_len(&self) -> usize {
        self.trunk.input_size()
    }

    pub fn value(&self, state: &[f32]) -> Result<f64> {
        Ok(self.critic.forward(state)?[0] as f64)
    }

    fn reuse_input(&self, z: &[f32], node: usize) -> Vec<f32> {
        let mut x = Vec::with_capacity(z.len() + self.num_nodes());
        x.extend_from_slice(z);
        x.extend((0..self.num_nodes()).map(|v| if v == node { 1.0 } else { 0.0 }));
        x
    }

    pub fn node_distribution(&self, state: &[f32], mask: &[bool]) -> Result<CategoricalHead> {
        let z = self.trunk.forward(state)?;
        CategoricalHead::new(&self.node_head.forward(&z)?, Some(mask))
    }

    pub fn act<R: Rng>(&self, state: &[f32], mask: &ActionMask, mode: ActMode<'_, R>) -> Result<ActorOutput> {
        let z = self.trunk.forward(state)?;
        let node_dist = CategoricalHead::new(&self.node_head.forward(&z)?, Some(&mask.node))?;
        let mut rng = match mode {
            ActMode::Sample(r) => Some(r),
            ActMode::Greedy => None,
        };
        let (node, lp1) = match rng.as_deref_mut() {
            Some(r) => masked_sample(&node_dist, r)?,
            None => {
                let i = node_dist.argmax()?;
                (i, node_dist.log_prob(i)?)
            }
        };
        let reuse_dist = CategoricalHead::new(
            &self.reuse_head.forward(&self.reuse_input(&z, node))?,
            Some(&mask.choice[node]),
        )?;
        let (choice, lp2) = match rng {
            Some(r) => masked_sample(&reuse_dist, r)?,
            None => {
                let i = reuse_dist.argmax()?;
                (i, reuse_dist.log_prob(i)?)
            }
        };
        Ok(ActorOutput {
            action: Action::new(node, ReuseChoice::from_index(choice)),
            log_prob_node: lp1,
            log_prob_reuse: lp2,
            log_prob: lp1 + lp2,
        })
    }

    /// `(log p(node), log p(choice | node), H(node), H(choice | node))` of
    /// a stored transition under the current parameters.
    pub fn evaluate(&self, t: &Transition) -> Result<(f64, f64, f64, f64)> {
        let z = self.trunk.forward(&t.state)?;
        let d1 = CategoricalHead::new(&self.node_head.forward(&z)?, Some(&t.node_mask))?;
        let d2 = CategoricalHead::new(
            &self.reuse_head.forward(&self.reuse_input(&z, t.action.node))?,
            Some(&t.choice_mask),
        )?;
        Ok((
            d1.log_prob(t.action.node)?,
            d2.log_prob(t.action.choice.index())?,
            d1.entropy()?,
            d2.entropy()?,
        ))
    }

    fn nets(&self) -> [&Mlp<f32>; 4] {
        [&self.trunk, &self.node_head, &self.reuse_head, &self.critic]
    }

    pub fn all_finite(&self) -> bool {
        self.nets().iter().all(|n| n.all_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub node_mask: Vec<bool>,
    /// Reuse/new mask at the chosen node.
    pub choice_mask: [bool; 2],
    pub action: Action,
    pub log_prob_node: f64,
    pub log_prob_reuse: f64,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    /// The episode ended with this step.
    pub done: bool,
    pub latency_ms: f64,
    pub slo_met: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
    /// Critic value of the state after the last step (zero if it ended an
    /// episode).
    pub bootstrap_value: f64,
}

/// Discounted rewards-to-go, reset at episode ends and bootstrapped at the
/// rollout cut.
pub fn rewards_to_go(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; traj.steps.len()];
    let mut next = traj.bootstrap_value;
    for (i, t) in traj.steps.iter().enumerate().rev() {
        if t.done {
            next = 0.0;
        }
        next = t.reward + gamma * next;
        out[i] = next;
    }
    out
}

/// Unnormalized advantages of one trajectory.
pub fn compute_advantages(traj: &Trajectory, gamma: f64, mode: AdvantageMode) -> Vec<f64> {
    let n = traj.steps.len();
    let mut out = vec![0.0; n];
    let lambda = match mode {
        AdvantageMode::OneStep => 0.0,
        AdvantageMode::Gae { lambda } => lambda,
    };
    let mut carry = 0.0;
    for i in (0..n).rev() {
        let t = &traj.steps[i];
        let next_value = if t.done {
            0.0
        } else if i + 1 < n {
            traj.steps[i + 1].value
        } else {
            traj.bootstrap_value
        };
        let delta = t.reward + gamma * next_value - t.value;
        carry = if t.done { delta } else { delta + gamma * lambda * carry };
        out[i] = carry;
    }
    out
}

/// Rescales to zero mean and unit variance (population variance).
pub fn normalize(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    xs.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub steps: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn from_trajectories(trajs: Vec<Trajectory>, cfg: &PpoConfig) -> RolloutBatch {
        let mut b = RolloutBatch::default();
        for t in trajs {
            b.advantages.extend(compute_advantages(&t, cfg.gamma, cfg.advantage));
            b.returns.extend(rewards_to_go(&t, cfg.gamma));
            b.steps.extend(t.steps);
        }
        if cfg.normalize_advantages {
            normalize(&mut b.advantages);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A simulator plus the bookkeeping needed to resume its episode exactly.
#[derive(Debug, Clone)]
pub struct Worker {
    pub env: SimEnv,
    pub episode_seed: u64,
    pub episode_actions: Vec<Action>,
    pub episodes: u64,
}

impl Worker {
    pub fn new(scenario: Arc<Scenario>, config: EnvConfig, seed: u64) -> Result<Worker> {
        let mut env = SimEnv::new(scenario, config);
        env.reset(seed)?;
        Ok(Worker {
            env,
            episode_seed: seed,
            episode_actions: Vec::new(),
            episodes: 0,
        })
    }

    /// Rebuilds a worker mid-episode by replaying the applied actions.
    pub fn replay(scenario: Arc<Scenario>, config: EnvConfig, seed: u64, actions: &[Action], episodes: u64) -> Result<Worker> {
        let mut w = Worker::new(scenario, config, seed)?;
        for &a in actions {
            w.env.step(a)?;
        }
        w.episode_actions = actions.to_vec();
        w.episodes = episodes;
        Ok(w)
    }

    pub fn step(&mut self, action: Action) -> Result<crate::simenv::StepOutcome> {
        let out = self.env.step(action)?;
        self.episode_actions.push(out.applied);
        if out.done {
            self.episodes += 1;
            self.episode_seed = self.episode_seed.wrapping_add(1);
            self.env.reset(self.episode_seed)?;
            self.episode_actions.clear();
        }
        Ok(out)
    }
}

/// Runs the stochastic policy for `steps` transitions on every worker.
pub fn ppo_collect<R: Rng>(
    workers: &mut [Worker],
    ac: &ActorCritic,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(workers.len());
    for w in workers.iter_mut() {
        let mut traj = Trajectory::default();
        for _ in 0..steps {
            let state = w.env.observe();
            let mask = w.env.mask().clone();
            let a = ac.act(&state, &mask, ActMode::Sample(&mut *rng))?;
            let value = ac.value(&state)?;
            let res = w.step(a.action)?;
            traj.steps.push(Transition {
                choice_mask: mask.choice[a.action.node],
                node_mask: mask.node,
                state,
                action: a.action,
                log_prob_node: a.log_prob_node,
                log_prob_reuse: a.log_prob_reuse,
                log_prob: a.log_prob,
                value,
                reward: res.reward,
                done: res.done,
                latency_ms: res.breakdown.total_ms,
                slo_met: res.slo_met,
            });
        }
        traj.bootstrap_value = if traj.steps.last().is_some_and(|t| t.done) {
            0.0
        } else {
            ac.value(&w.env.observe())?
        };
        out.push(traj);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PpoOptimizers {
    pub trunk: AdamState<f32>,
    pub node_head: AdamState<f32>,
    pub reuse_head: AdamState<f32>,
    pub critic: AdamState<f32>,
}

impl PpoOptimizers {
    pub fn new(ac: &ActorCritic, cfg: &PpoConfig) -> Self {
        let actor = AdamConfig {
            lr: cfg.actor_lr,
            ..AdamConfig::default()
        };
        let critic = AdamConfig {
            lr: cfg.critic_lr,
            ..AdamConfig::default()
        };
        PpoOptimizers {
            trunk: AdamState::new(&ac.trunk, actor),
            node_head: AdamState::new(&ac.node_head, actor),
            reuse_head: AdamState::new(&ac.reuse_head, actor),
            critic: AdamState::new(&ac.critic, critic),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
}

/// Clipped surrogate objective and clip fraction of `batch` under the
/// current policy, without updating anything.
pub fn surrogate(ac: &ActorCritic, batch: &RolloutBatch, clip_eps: f64) -> Result<(f64, f64)> {
    let mut s = 0.0;
    let mut clipped = 0usize;
    for (t, &adv) in batch.steps.iter().zip(&batch.advantages) {
        let (lp1, lp2, _, _) = ac.evaluate(t)?;
        let ratio = (lp1 + lp2 - t.log_prob).exp();
        s += (ratio * adv).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv);
        if (ratio - 1.0).abs() > clip_eps {
            clipped += 1;
        }
    }
    let n = batch.len().max(1) as f64;
    Ok((s / n, clipped as f64 / n))
}

struct Grads {
    trunk: MlpGrads<f32>,
    node_head: MlpGrads<f32>,
    reuse_head: MlpGrads<f32>,
    critic: MlpGrads<f32>,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// `epochs` passes of minibatch gradient ascent on the clipped surrogate
/// plus entropy bonus, and critic regression onto rewards-to-go. On a
/// numerical failure the parameters and optimizer state are restored.
pub fn ppo_update<R: Rng>(
    ac: &mut ActorCritic,
    opt: &mut PpoOptimizers,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    entropy_coef: f64,
    rng: &mut R,
) -> Result<UpdateStats> {
    let saved = (ac.clone(), opt.clone());
    match update_inner(ac, opt, batch, cfg, entropy_coef, rng) {
        Ok(s) => Ok(s),
        Err(e) => {
            *ac = saved.0;
            *opt = saved.1;
            Err(e)
        }
    }
}

fn update_inner<R: Rng>(
    ac: &mut ActorCritic,
    opt: &mut PpoOptimizers,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    entropy_coef: f64,
    rng: &mut R,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty rollout batch".into()));
    }
    let mut stats = UpdateStats::default();
    let mut seen = 0usize;
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let h = ac.trunk.output_size();
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.minibatch) {
            let mb = chunk.len() as f64;
            let mut g = Grads {
                trunk: ac.trunk.zero_grads(),
                node_head: ac.node_head.zero_grads(),
                reuse_head: ac.reuse_head.zero_grads(),
                critic: ac.critic.zero_grads(),
            };
            for &i in chunk {
                let t = &batch.steps[i];
                let adv = batch.advantages[i];
                let ret = batch.returns[i];

                let c_trunk = ac.trunk.forward_cached(&t.state)?;
                let z = c_trunk.output().to_vec();
                let c_node = ac.node_head.forward_cached(&z)?;
                let d1 = CategoricalHead::new(c_node.output(), Some(&t.node_mask))?;
                let c_reuse = ac.reuse_head.forward_cached(&ac.reuse_input(&z, t.action.node))?;
                let d2 = CategoricalHead::new(c_reuse.output(), Some(&t.choice_mask))?;
                let lp = d1.log_prob(t.action.node)? + d2.log_prob(t.action.choice.index())?;
                let ratio = (lp - t.log_prob).exp();
                if !ratio.is_finite() {
                    return Err(Error::Numerical(format!("probability ratio {ratio}")));
                }
                let unclipped = ratio * adv;
                let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
                let surr = unclipped.min(clipped);
                let ent = d1.entropy()? + d2.entropy()?;
                if (ratio - 1.0).abs() > cfg.clip_eps {
                    stats.clip_fraction += 1.0;
                }
                stats.surrogate += surr;
                stats.entropy += ent;
                stats.approx_kl += t.log_prob - lp;

                // d(loss)/d(log p): zero where the clipped branch is active
                let active = (adv > 0.0 && ratio > 1.0 + cfg.clip_eps) || (adv < 0.0 && ratio < 1.0 - cfg.clip_eps);
                let dlogp = if active { 0.0 } else { ratio * adv };
                let head_grad = |d: &CategoricalHead, a: usize| -> Result<Vec<f32>> {
                    let gl = d.grad_log_prob(a)?;
                    let ge = d.grad_entropy()?;
                    Ok(to_f32(
                        &gl.iter()
                            .zip(&ge)
                            .map(|(l, e)| -(dlogp * l + entropy_coef * e) / mb)
                            .collect::<Vec<_>>(),
                    ))
                };
                let g1 = head_grad(&d1, t.action.node)?;
                let g2 = head_grad(&d2, t.action.choice.index())?;
                let mut dz = ac.node_head.backward(&c_node, &g1, &mut g.node_head)?;
                let dx2 = ac.reuse_head.backward(&c_reuse, &g2, &mut g.reuse_head)?;
                for (a, b) in dz.iter_mut().zip(&dx2[..h]) {
                    *a += *b;
                }
                ac.trunk.backward(&c_trunk, &dz, &mut g.trunk)?;

                let c_v = ac.critic.forward_cached(&t.state)?;
                let err = c_v.output()[0] as f64 - ret;
                stats.value_loss += err * err;
                let gv = [(2.0 * cfg.value_coef * err / mb) as f32];
                ac.critic.backward(&c_v, &gv, &mut g.critic)?;
                seen += 1;
            }
            if !stats.surrogate.is_finite() || !stats.value_loss.is_finite() {
                return Err(Error::Numerical("non-finite loss".into()));
            }
            clip_global_norm(&mut [&mut g.trunk, &mut g.node_head, &mut g.reuse_head], cfg.max_grad_norm);
            clip_global_norm(&mut [&mut g.critic], cfg.max_grad_norm);
            opt.trunk.step(&mut ac.trunk, &g.trunk)?;
            opt.node_head.step(&mut ac.node_head, &g.node_head)?;
            opt.reuse_head.step(&mut ac.reuse_head, &g.reuse_head)?;
            opt.critic.step(&mut ac.critic, &g.critic)?;
        }
    }
    if !ac.all_finite() {
        return Err(Error::Numerical("non-finite parameters after update".into()));
    }
    let n = seen as f64;
    Ok(UpdateStats {
        surrogate: stats.surrogate / n,
        clip_fraction: stats.clip_fraction / n,
        value_loss: stats.value_loss / n,
        entropy: stats.entropy / n,
        approx_kl: stats.approx_kl / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResumeState {
    rng_seed: String,
    rng_word_pos: String,
    episode_seed: u64,
    episode_actions: Vec<usize>,
    episodes: u64,
    updates: u64,
    total_steps: u64,
    adam_steps: [u64; 4],
    env_config: EnvConfig,
}

/// Single-worker PPO training loop with exact checkpoint/resume.
#[derive(Debug, Clone)]
pub struct PpoTrainer {
    pub config: PpoConfig,
    pub ac: ActorCritic,
    pub opt: PpoOptimizers,
    pub worker: Worker,
    pub rng: ChaCha8Rng,
    pub env_steps: u64,
    pub total_steps: u64,
    pub updates: u64,
    pub seed: u64,
    pub curve: Vec<CurveRow>,
}

impl PpoTrainer {
    pub fn new(
        scenario: Arc<Scenario>,
        env_config: EnvConfig,
        config: PpoConfig,
        seed: u64,
        total_steps: u64,
    ) -> Result<PpoTrainer> {
        config.validate()?;
        if total_steps == 0 || total_steps < config.rollout_steps as u64 {
            return Err(Error::InvalidParameter(format!(
                "total_steps ({total_steps}) must be at least rollout_steps ({})",
                config.rollout_steps
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = scenario.nodes.len();
        let ac = ActorCritic::new(state_len(n), n, config.hidden, config.reuse_hidden, &mut rng)?;
        let opt = PpoOptimizers::new(&ac, &config);
        let worker = Worker::new(scenario, env_config, seed)?;
        Ok(PpoTrainer {
            config,
            ac,
            opt,
            worker,
            rng,
            env_steps: 0,
            total_steps,
            updates: 0,
            seed,
            curve: Vec::new(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.env_steps >= self.total_steps
    }

    pub fn entropy_coef(&self) -> f64 {
        if self.config.entropy_anneal && self.total_steps > 0 {
            let frac = (self.env_steps as f64 / self.total_steps as f64).min(1.0);
            self.config.entropy_coef * (1.0 - frac)
        } else {
            self.config.entropy_coef
        }
    }

    /// Collects one rollout and applies one PPO update.
    pub fn update_once(&mut self) -> Result<CurveRow> {
        let steps = (self.config.rollout_steps as u64).min(self.total_steps.saturating_sub(self.env_steps)).max(1) as usize;
        let coef = self.entropy_coef();
        let trajs = ppo_collect(std::slice::from_mut(&mut self.worker), &self.ac, steps, &mut self.rng)?;
        let samples: Vec<(f64, f64, bool)> = trajs
            .iter()
            .flat_map(|t| t.steps.iter().map(|s| (s.reward, s.latency_ms, s.slo_met)))
            .collect();
        let batch = RolloutBatch::from_trajectories(trajs, &self.config);
        let stats = ppo_update(&mut self.ac, &mut self.opt, &batch, &self.config, coef, &mut self.rng)?;
        self.env_steps += steps as u64;
        self.updates += 1;
        let (reward, mean, p99, viol) = rollout_stats(&samples, self.worker.env.scenario().trace.len());
        let row = CurveRow {
            update: self.updates,
            env_steps: self.env_steps,
            mean_episode_reward: reward,
            mean_latency_ms: mean,
            p99_latency_ms: p99,
            slo_violation_rate: viol,
            clip_fraction: stats.clip_fraction,
            entropy: stats.entropy,
            value_loss: stats.value_loss,
        };
        self.curve.push(row.clone());
        Ok(row)
    }

    pub fn run(&mut self, mut progress: impl FnMut(&CurveRow)) -> Result<()> {
        while !self.is_finished() {
            let row = self.update_once()?;
            progress(&row);
        }
        Ok(())
    }

    pub fn policy(&self) -> PpoPolicy {
        PpoPolicy::new(self.ac.clone())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let n = self.ac.num_nodes();
        let mut c = Checkpoint::new(
            "ppo",
            n,
            self.ac.state_len(),
            serde_json::to_value(&self.config)?,
            self.env_steps,
            self.seed,
        );
        c.push_net("actor.trunk", &self.ac.trunk);
        c.push_net("actor.node_head", &self.ac.node_head);
        c.push_net("actor.reuse_head", &self.ac.reuse_head);
        c.push_net("critic", &self.ac.critic);
        c.push_adam("actor.trunk", &self.opt.trunk);
        c.push_adam("actor.node_head", &self.opt.node_head);
        c.push_adam("actor.reuse_head", &self.opt.reuse_head);
        c.push_adam("critic", &self.opt.critic);
        let resume = ResumeState {
            rng_seed: self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            episode_seed: self.worker.episode_seed,
            episode_actions: self.worker.episode_actions.iter().map(|a| a.joint_index()).collect(),
            episodes: self.worker.episodes,
            updates: self.updates,
            total_steps: self.total_steps,
            adam_steps: [self.opt.trunk.step, self.opt.node_head.step, self.opt.reuse_head.step, self.opt.critic.step],
            env_config: *self.worker.env.config(),
        };
        c.header.resume = Some(serde_json::to_value(resume)?);
        Ok(c)
    }

    /// Restores a trainer so that its next update is identical to the one
    /// the original run would have made.
    pub fn resume(scenario: Arc<Scenario>, ckpt: &Checkpoint) -> Result<PpoTrainer> {
        let n = scenario.nodes.len();
        ckpt.check_compatible("ppo", n, state_len(n))?;
        let config: PpoConfig = serde_json::from_value(ckpt.header.config.clone())
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let rs: ResumeState = serde_json::from_value(
            ckpt.header
                .resume
                .clone()
                .ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("resume state: {e}")))?;
        let ac = ActorCritic::from_checkpoint(ckpt, n)?;
        let base = PpoOptimizers::new(&ac, &config);
        let opt = PpoOptimizers {
            trunk: ckpt.adam("actor.trunk", &ac.trunk, base.trunk.config, rs.adam_steps[0])?,
            node_head: ckpt.adam("actor.node_head", &ac.node_head, base.node_head.config, rs.adam_steps[1])?,
            reuse_head: ckpt.adam("actor.reuse_head", &ac.reuse_head, base.reuse_head.config, rs.adam_steps[2])?,
            critic: ckpt.adam("critic", &ac.critic, base.critic.config, rs.adam_steps[3])?,
        };
        let rng = restore_rng(&rs.rng_seed, &rs.rng_word_pos)?;
        let actions: Vec<Action> = rs.episode_actions.iter().map(|&i| Action::from_joint_index(i)).collect();
        let worker = Worker::replay(scenario, rs.env_config, rs.episode_seed, &actions, rs.episodes)?;
        Ok(PpoTrainer {
            config,
            ac,
            opt,
            worker,
            rng,
            env_steps: ckpt.header.training_step,
            total_steps: rs.total_steps,
            updates: rs.updates,
            seed: ckpt.header.seed,
            curve: Vec::new(),
        })
    }
}

pub(crate) fn restore_rng(seed_hex: &str, word_pos: &str) -> Result<ChaCha8Rng> {
    let bytes = hex::decode(seed_hex).map_err(|e| Error::Checkpoint(format!("rng seed: {e}")))?;
    let seed: [u8; 32] = bytes
        .try_into()
        .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
    let pos: u128 = word_pos
        .parse()
        .map_err(|e| Error::Checkpoint(format!("rng position: {e}")))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(pos);
    Ok(rng)
}

impl ActorCritic {
    pub fn from_checkpoint(ckpt: &Checkpoint, num_nodes: usize) -> Result<ActorCritic> {
        let ac = ActorCritic {
            trunk: ckpt.net("actor.trunk")?,
            node_head: ckpt.net("actor.node_head")?,
            reuse_head: ckpt.net("actor.reuse_head")?,
            critic: ckpt.net("critic")?,
        };
        if ac.num_nodes() != num_nodes || ac.reuse_head.input_size() != ac.trunk.output_size() + num_nodes {
            return Err(Error::Checkpoint("network shapes do not match the scenario".into()));
        }
        Ok(ac)
    }

    pub fn load_policy(path: &std::path::Path, scenario: &Scenario) -> Result<ActorCritic> {
        let ckpt = Checkpoint::load(path)?;
        let n = scenario.nodes.len();
        ckpt.check_compatible("ppo", n, state_len(n))?;
        ActorCritic::from_checkpoint(&ckpt, n)
    }
}

/// Evaluation-time PPO policy: greedy by default, stochastic on request.
#[derive(Debug, Clone)]
pub struct PpoPolicy {
    pub ac: ActorCritic,
    pub stochastic: Option<ChaCha8Rng>,
}

impl PpoPolicy {
    pub fn new(ac: ActorCritic) -> Self {
        PpoPolicy { ac, stochastic: None }
    }

    pub fn sampling(ac: ActorCritic, seed: u64) -> Self {
        PpoPolicy {
            ac,
            stochastic: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl Policy for PpoPolicy {
    fn decide(&mut self, env: &SimEnv) -> Result<Action> {
        let state = env.observe();
        let out = match self.stochastic.as_mut() {
            Some(rng) => self.ac.act(&state, env.mask(), ActMode::Sample(rng))?,
            None => self.ac.act::<ChaCha8Rng>(&state, env.mask(), ActMode::Greedy)?,
        };
        Ok(out.action)
    }

    fn name(&self) -> String {
        "ppo".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(reward: f64, value: f64, done: bool) -> Transition {
        Transition {
            state: vec![],
            node_mask: vec![true],
            choice_mask: [true, true],
            action: Action::new(0, ReuseChoice::New),
            log_prob_node: 0.0,
            log_prob_reuse: 0.0,
            log_prob: 0.0,
            value,
            reward,
            done,
            latency_ms: 0.0,
            slo_met: true,
        }
    }

    #[test]
    fn rewards_to_go_reset_at_episode_end() {
        let t = Trajectory {
            steps: vec![step(1.0, 0.0, false), step(1.0, 0.0, true), step(2.0, 0.0, false)],
            bootstrap_value: 10.0,
        };
        let r = rewards_to_go(&t, 0.5);
        assert_eq!(r, vec![1.5, 1.0, 7.0]);
    }

    #[test]
    fn one_step_advantage_is_td_error() {
        let t = Trajectory {
            steps: vec![step(1.0, 2.0, false), step(-1.0, 3.0, false)],
            bootstrap_value: 4.0,
        };
        let a = compute_advantages(&t, 0.9, AdvantageMode::OneStep);
        assert!((a[0] - (1.0 + 0.9 * 3.0 - 2.0)).abs() < 1e-12);
        assert!((a[1] - (-1.0 + 0.9 * 4.0 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn gae_with_unit_lambda_is_return_minus_value() {
        let t = Trajectory {
            steps: vec![step(1.0, 0.5, false), step(2.0, 0.25, false), step(3.0, 1.0, true)],
            bootstrap_value: 0.0,
        };
        let a = compute_advantages(&t, 0.9, AdvantageMode::Gae { lambda: 1.0 });
        let r = rewards_to_go(&t, 0.9);
        for i in 0..3 {
            assert!((a[i] - (r[i] - t.steps[i].value)).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_has_zero_mean_unit_variance() {
        let mut x = vec![1.0, 2.0, 3.0, 10.0];
        normalize(&mut x);
        let m: f64 = x.iter().sum::<f64>() / 4.0;
        let v: f64 = x.iter().map(|y| (y - m).powi(2)).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rng_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _: u64 = rng.gen();
        let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        let mut back = restore_rng(&seed, &rng.get_word_pos().to_string()).unwrap();
        assert_eq!(rng.gen::<u64>(), back.gen::<u64>());
    }
}

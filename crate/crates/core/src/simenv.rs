//! Discrete-event cluster simulator with a reinforcement-learning interface.
//!
//! One request is presented at a time. The agent picks a host node and whether
//! to reuse an idle container or create a new one; the environment enforces
//! CPU and memory capacities, runs the container lifecycle (busy, idle,
//! expired) and reports the latency breakdown and reward of each placement.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::{breakdown_parts, check_slo, LatencyBreakdown, LatencyParams};
use crate::scenario::{Request, Scenario};

/// Layout version of [`encode_state`]; bump on any change to the vector.
pub const STATE_VERSION: u32 = 1;
pub const IDLE_CAP: usize = 8;
pub const BUSY_CAP: usize = 16;
pub const STATE_CLAMP: f32 = 1.5;
const CAP_EPS: f64 = 1e-6;

pub fn state_len(num_nodes: usize) -> usize {
    4 * num_nodes + 8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Idle containers are reclaimed after this long; 0 disables reuse.
    pub keep_alive_ms: f64,
    pub include_wait_in_reward: bool,
    /// Exercise the latency model exactly: no waiting in the reward and no
    /// deferral of infeasible requests (such traces are rejected).
    pub strict_paper: bool,
    /// Invalid actions are errors when set; otherwise they are remapped.
    pub strict_actions: bool,
    pub latency: LatencyParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            keep_alive_ms: 60_000.0,
            include_wait_in_reward: true,
            strict_paper: false,
            strict_actions: true,
            latency: LatencyParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn strict_paper() -> Self {
        EnvConfig {
            include_wait_in_reward: false,
            strict_paper: true,
            ..EnvConfig::default()
        }
    }

    pub fn training() -> Self {
        EnvConfig {
            strict_actions: false,
            ..EnvConfig::default()
        }
    }

    fn wait_in_reward(&self) -> bool {
        self.include_wait_in_reward && !self.strict_paper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReuseChoice {
    Reuse = 0,
    New = 1,
}

impl ReuseChoice {
    pub fn from_index(i: usize) -> ReuseChoice {
        if i == 0 {
            ReuseChoice::Reuse
        } else {
            ReuseChoice::New
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_new(self) -> bool {
        self == ReuseChoice::New
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub node: usize,
    pub choice: ReuseChoice,
}

impl Action {
    pub fn new(node: usize, choice: ReuseChoice) -> Action {
        Action { node, choice }
    }

    /// Index into the flattened `|V| x 2` joint action space.
    pub fn joint_index(self) -> usize {
        self.node * 2 + self.choice.index()
    }

    pub fn from_joint_index(i: usize) -> Action {
        Action::new(i / 2, ReuseChoice::from_index(i % 2))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {:?})", self.node, self.choice)
    }
}

/// Feasibility masks; `choice[v][0]` is Reuse and `choice[v][1]` is New.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask {
    pub node: Vec<bool>,
    pub choice: Vec<[bool; 2]>,
}

impl ActionMask {
    pub fn any(&self) -> bool {
        self.node.iter().any(|&b| b)
    }

    pub fn allows(&self, a: Action) -> bool {
        a.node < self.node.len() && self.choice[a.node][a.choice.index()]
    }

    pub fn valid_actions(&self) -> Vec<Action> {
        let mut out = Vec::new();
        for (v, c) in self.choice.iter().enumerate() {
            for (i, &ok) in c.iter().enumerate() {
                if ok {
                    out.push(Action::new(v, ReuseChoice::from_index(i)));
                }
            }
        }
        out
    }

    /// Flattened `|V| x 2` joint mask.
    pub fn joint(&self) -> Vec<bool> {
        self.choice.iter().flat_map(|c| c.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ContainerStatus {
    Busy { cpu_cores: f64 },
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerInstance {
    pub container_id: u64,
    pub node_id: usize,
    pub function_id: usize,
    pub mem_mb: f64,
    pub status: ContainerStatus,
    pub idle_since_ms: f64,
    pub expires_at_ms: f64,
    /// Incremented every time the container turns idle; stale expiry events
    /// carry an older epoch and are ignored.
    epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Completion { container_id: u64 },
    Expiry { container_id: u64, epoch: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time_ms: f64,
    seq: u64,
    kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time_ms
            .total_cmp(&other.time_ms)
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct ClusterState {
    pub clock_ms: f64,
    pub free_cpu_cores: Vec<f64>,
    pub free_mem_mb: Vec<f64>,
    pub containers: BTreeMap<u64, ContainerInstance>,
    /// Idle container ids per `[node][function]`, oldest first.
    idle: Vec<Vec<VecDeque<u64>>>,
    busy_count: Vec<usize>,
    cap_cpu: Vec<f64>,
    cap_mem: Vec<f64>,
    events: BinaryHeap<Reverse<Event>>,
    next_container: u64,
    next_seq: u64,
}

impl ClusterState {
    pub fn new(scenario: &Scenario) -> ClusterState {
        let n = scenario.nodes.len();
        let cap_cpu: Vec<f64> = scenario.nodes.iter().map(|v| v.cpu_cores as f64).collect();
        let cap_mem: Vec<f64> = scenario.nodes.iter().map(|v| v.mem_mb).collect();
        ClusterState {
            clock_ms: 0.0,
            free_cpu_cores: cap_cpu.clone(),
            free_mem_mb: cap_mem.clone(),
            cap_cpu,
            cap_mem,
            containers: BTreeMap::new(),
            idle: vec![vec![VecDeque::new(); scenario.functions.len()]; n],
            busy_count: vec![0; n],
            events: BinaryHeap::new(),
            next_container: 0,
            next_seq: 0,
        }
    }

    pub fn idle_count(&self, node: usize, function: usize) -> usize {
        self.idle[node][function].len()
    }

    pub fn busy_count(&self, node: usize) -> usize {
        self.busy_count[node]
    }

    pub fn pending_events(&self) -> usize {
        self.events.len()
    }

    /// Checks capacity bounds and memory/CPU conservation on every node.
    pub fn check_invariants(&self, scenario: &Scenario) -> std::result::Result<(), String> {
        for (v, spec) in scenario.nodes.iter().enumerate() {
            let cap_cpu = spec.cpu_cores as f64;
            let (cpu, mem) = (self.free_cpu_cores[v], self.free_mem_mb[v]);
            if !(0.0..=cap_cpu).contains(&cpu) {
                return Err(format!("node {v}: free cpu {cpu} outside [0, {cap_cpu}]"));
            }
            if !(0.0..=spec.mem_mb).contains(&mem) {
                return Err(format!("node {v}: free mem {mem} outside [0, {}]", spec.mem_mb));
            }
            let held_mem: f64 = self
                .containers
                .values()
                .filter(|c| c.node_id == v)
                .map(|c| c.mem_mb)
                .sum();
            let held_cpu: f64 = self
                .containers
                .values()
                .filter(|c| c.node_id == v)
                .map(|c| match c.status {
                    ContainerStatus::Busy { cpu_cores } => cpu_cores,
                    ContainerStatus::Idle => 0.0,
                })
                .sum();
            let tol = 1e-6 * spec.mem_mb.max(1.0);
            if (held_mem + mem - spec.mem_mb).abs() > tol {
                return Err(format!(
                    "node {v}: memory not conserved ({held_mem} held + {mem} free != {})",
                    spec.mem_mb
                ));
            }
            if (held_cpu + cpu - cap_cpu).abs() > 1e-6 * cap_cpu {
                return Err(format!("node {v}: cpu not conserved"));
            }
        }
        Ok(())
    }

    fn push_event(&mut self, time_ms: f64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(Reverse(Event { time_ms, seq, kind }));
    }

    fn peek_time(&self) -> Option<f64> {
        self.events.peek().map(|Reverse(e)| e.time_ms)
    }

    fn apply_next_event(&mut self, keep_alive_ms: f64) -> bool {
        let Some(Reverse(ev)) = self.events.pop() else {
            return false;
        };
        self.clock_ms = self.clock_ms.max(ev.time_ms);
        match ev.kind {
            EventKind::Completion { container_id } => {
                let c = self
                    .containers
                    .get_mut(&container_id)
                    .expect("completion for live container");
                let ContainerStatus::Busy { cpu_cores } = c.status else {
                    unreachable!("completion for idle container {container_id}");
                };
                let (node, function) = (c.node_id, c.function_id);
                self.free_cpu_cores[node] += cpu_cores;
                self.busy_count[node] -= 1;
                if keep_alive_ms <= 0.0 {
                    let c = self.containers.remove(&container_id).expect("live");
                    self.free_mem_mb[node] += c.mem_mb;
                } else {
                    c.status = ContainerStatus::Idle;
                    c.idle_since_ms = ev.time_ms;
                    c.expires_at_ms = ev.time_ms + keep_alive_ms;
                    c.epoch += 1;
                    let (expires, epoch) = (c.expires_at_ms, c.epoch);
                    self.idle[node][function].push_back(container_id);
                    self.push_event(expires, EventKind::Expiry { container_id, epoch });
                }
                self.clamp_node(node);
            }
            EventKind::Expiry { container_id, epoch } => {
                let live = self
                    .containers
                    .get(&container_id)
                    .is_some_and(|c| c.epoch == epoch && c.status == ContainerStatus::Idle);
                if live {
                    let c = self.containers.remove(&container_id).expect("live");
                    let q = &mut self.idle[c.node_id][c.function_id];
                    let pos = q.iter().position(|&id| id == container_id).expect("indexed");
                    q.remove(pos);
                    self.free_mem_mb[c.node_id] += c.mem_mb;
                    self.clamp_node(c.node_id);
                }
            }
        }
        true
    }

    fn clamp_node(&mut self, node: usize) {
        self.free_cpu_cores[node] = self.free_cpu_cores[node].clamp(0.0, self.cap_cpu[node]);
        self.free_mem_mb[node] = self.free_mem_mb[node].clamp(0.0, self.cap_mem[node]);
    }

    fn advance_to(&mut self, time_ms: f64, keep_alive_ms: f64) {
        while self.peek_time().is_some_and(|t| t <= time_ms) {
            self.apply_next_event(keep_alive_ms);
        }
        self.clock_ms = self.clock_ms.max(time_ms);
    }
}

pub fn action_mask(state: &ClusterState, req: &Request) -> ActionMask {
    let n = state.free_cpu_cores.len();
    let mut node = vec![false; n];
    let mut choice = vec![[false; 2]; n];
    for v in 0..n {
        let cpu_ok = state.free_cpu_cores[v] + CAP_EPS >= req.cpu_cores;
        let reuse = cpu_ok && state.idle_count(v, req.function_id) > 0;
        let new = cpu_ok && state.free_mem_mb[v] + CAP_EPS >= req.mem_mb;
        choice[v] = [reuse, new];
        node[v] = reuse || new;
    }
    ActionMask { node, choice }
}

/// Flat state vector: four features per node followed by eight request
/// features, each clamped to `[0, 1.5]`.
pub fn encode_state(state: &ClusterState, req: &Request, scenario: &Scenario) -> Vec<f32> {
    let mut out = Vec::with_capacity(state_len(scenario.nodes.len()));
    for (v, spec) in scenario.nodes.iter().enumerate() {
        out.push(state.free_cpu_cores[v] / spec.cpu_cores as f64);
        out.push(state.free_mem_mb[v] / spec.mem_mb);
        out.push(state.idle_count(v, req.function_id).min(IDLE_CAP) as f64 / IDLE_CAP as f64);
        out.push(state.busy_count(v).min(BUSY_CAP) as f64 / BUSY_CAP as f64);
    }
    let extent = scenario.extent();
    let src = scenario.node(req.source_node);
    let f = scenario.function(req.function_id);
    out.extend([
        src.pos_x / extent,
        src.pos_y / extent,
        req.cpu_cores / 32.0,
        req.mem_mb / 4096.0,
        req.cpu_time_ms / 1000.0,
        req.data_mb / 100.0,
        f.image_mb / 1000.0,
        req.slo_ms / 400.0,
    ]);
    out.into_iter()
        .map(|x| (x as f32).clamp(0.0, STATE_CLAMP))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub breakdown: LatencyBreakdown,
    pub slo_met: bool,
    pub next_state: Vec<f32>,
    pub done: bool,
    /// The submitted action was invalid and was replaced by `applied`.
    pub remapped: bool,
    pub applied: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: u64,
    pub node_id: usize,
    pub new_container: bool,
    pub wait_ms: f64,
    pub cold_ms: f64,
    pub comp_ms: f64,
    pub comm_ms: f64,
    pub total_ms: f64,
    pub slo_ms: f64,
    pub slo_met: bool,
    pub reward: f64,
    pub decision_time_us: f64,
}

pub const EPISODE_HEADER: [&str; 12] = [
    "request_id",
    "node_id",
    "new_container",
    "wait_ms",
    "cold_ms",
    "comp_ms",
    "comm_ms",
    "total_ms",
    "slo_ms",
    "slo_met",
    "reward",
    "decision_time_us",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub records: Vec<RequestRecord>,
    pub total_reward: f64,
    /// Requests that had to wait because no node could host them at arrival.
    pub deferred: usize,
    pub remapped: usize,
}

impl EpisodeReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(EPISODE_HEADER)?;
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<EpisodeReport> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut report = EpisodeReport::default();
        for rec in rdr.deserialize() {
            let r: RequestRecord = rec?;
            report.total_reward += r.reward;
            if r.wait_ms > 0.0 {
                report.deferred += 1;
            }
            report.records.push(r);
        }
        Ok(report)
    }

    pub fn mean_latency_ms(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.total_ms).sum::<f64>() / self.records.len() as f64
    }

    pub fn slo_violation_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| !r.slo_met).count() as f64 / self.records.len() as f64
    }
}

/// The simulation environment. Not `Sync` by intent of use: one instance is
/// driven by one thread at a time, but it can be moved between threads.
#[derive(Debug, Clone)]
pub struct SimEnv {
    scenario: Arc<Scenario>,
    config: EnvConfig,
    state: ClusterState,
    cursor: usize,
    wait_ms: f64,
    mask: ActionMask,
    done: bool,
    started: bool,
    seed: u64,
    deferred: usize,
    remapped: usize,
}

impl SimEnv {
    pub fn new(scenario: Arc<Scenario>, config: EnvConfig) -> SimEnv {
        let state = ClusterState::new(&scenario);
        let n = scenario.nodes.len();
        SimEnv {
            scenario,
            config,
            state,
            cursor: 0,
            wait_ms: 0.0,
            mask: ActionMask {
                node: vec![false; n],
                choice: vec![[false; 2]; n],
            },
            done: true,
            started: false,
            seed: 0,
            deferred: 0,
            remapped: 0,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn scenario_arc(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn cluster(&self) -> &ClusterState {
        &self.state
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn num_nodes(&self) -> usize {
        self.scenario.nodes.len()
    }

    pub fn state_len(&self) -> usize {
        state_len(self.num_nodes())
    }

    /// Index of the request currently awaiting a decision.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn deferred(&self) -> usize {
        self.deferred
    }

    pub fn remapped(&self) -> usize {
        self.remapped
    }

    pub fn current_request(&self) -> Option<&Request> {
        if self.done {
            None
        } else {
            self.scenario.trace.get(self.cursor)
        }
    }

    /// Waiting time accumulated by the current request before it could be
    /// placed.
    pub fn current_wait_ms(&self) -> f64 {
        self.wait_ms
    }

    pub fn mask(&self) -> &ActionMask {
        &self.mask
    }

    pub fn observe(&self) -> Vec<f32> {
        match self.current_request() {
            Some(r) => encode_state(&self.state, r, &self.scenario),
            None => vec![0.0; self.state_len()],
        }
    }

    /// Latency of placing the current request with `action`, excluding wait.
    pub fn estimate(&self, action: Action) -> Option<LatencyBreakdown> {
        let req = self.current_request()?;
        let sc = &self.scenario;
        Some(breakdown_parts(
            req,
            sc.function(req.function_id),
            sc.node(req.source_node),
            sc.node(action.node),
            &sc.link_model,
            self.config.latency,
            action.choice.is_new(),
            0.0,
        ))
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<f32>> {
        if self.scenario.trace.is_empty() {
            return Err(Error::InvalidScenario("empty trace".into()));
        }
        self.state = ClusterState::new(&self.scenario);
        self.cursor = 0;
        self.done = false;
        self.started = true;
        self.seed = seed;
        self.deferred = 0;
        self.remapped = 0;
        self.present_current()?;
        Ok(self.observe())
    }

    /// Advances the clock to the current request's arrival, deferring it
    /// until some node can host it.
    fn present_current(&mut self) -> Result<()> {
        let req = self.scenario.trace[self.cursor].clone();
        let keep_alive = self.config.keep_alive_ms;
        self.state.advance_to(req.arrival_ms, keep_alive);
        self.mask = action_mask(&self.state, &req);
        if !self.mask.any() {
            if self.config.strict_paper {
                return Err(Error::InfeasibleStrict {
                    request_id: req.request_id,
                });
            }
            self.deferred += 1;
            while !self.mask.any() {
                if !self.state.apply_next_event(keep_alive) {
                    return Err(Error::Unschedulable {
                        request_id: req.request_id,
                    });
                }
                // drain simultaneous events before re-checking
                let now = self.state.clock_ms;
                self.state.advance_to(now, keep_alive);
                self.mask = action_mask(&self.state, &req);
            }
        }
        self.wait_ms = self.state.clock_ms - req.arrival_ms;
        Ok(())
    }

    /// Replacement for an invalid action: keep the node and flip the reuse
    /// choice when possible, else the feasible action of lowest latency.
    pub fn remap(&self, action: Action) -> Action {
        if action.node < self.mask.node.len() && self.mask.node[action.node] {
            let flipped = match action.choice {
                ReuseChoice::Reuse => ReuseChoice::New,
                ReuseChoice::New => ReuseChoice::Reuse,
            };
            return Action::new(action.node, flipped);
        }
        self.best_valid_action().expect("mask has a valid action")
    }

    /// Valid action minimizing the estimated latency; ties go to the lowest
    /// node id, then Reuse over New.
    pub fn best_valid_action(&self) -> Option<Action> {
        let mut best: Option<(f64, Action)> = None;
        for a in self.mask.valid_actions() {
            let t = self.estimate(a)?.service_ms();
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, a));
            }
        }
        best.map(|(_, a)| a)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done || !self.started {
            return Err(Error::EpisodeOver);
        }
        let mut applied = action;
        let mut remapped = false;
        if !self.mask.allows(action) {
            if self.config.strict_actions {
                return Err(Error::InvalidAction {
                    action: action.to_string(),
                    reason: "violates the feasibility mask".into(),
                });
            }
            applied = self.remap(action);
            remapped = true;
            self.remapped += 1;
        }

        let req = self.scenario.trace[self.cursor].clone();
        let sc = Arc::clone(&self.scenario);
        let v = applied.node;
        let st = &mut self.state;
        let container_id = match applied.choice {
            ReuseChoice::Reuse => {
                let id = st.idle[v][req.function_id]
                    .pop_front()
                    .expect("mask guarantees an idle container");
                let c = st.containers.get_mut(&id).expect("indexed container");
                c.status = ContainerStatus::Busy {
                    cpu_cores: req.cpu_cores,
                };
                id
            }
            ReuseChoice::New => {
                let id = st.next_container;
                st.next_container += 1;
                st.free_mem_mb[v] = (st.free_mem_mb[v] - req.mem_mb).max(0.0);
                st.containers.insert(
                    id,
                    ContainerInstance {
                        container_id: id,
                        node_id: v,
                        function_id: req.function_id,
                        mem_mb: req.mem_mb,
                        status: ContainerStatus::Busy {
                            cpu_cores: req.cpu_cores,
                        },
                        idle_since_ms: f64::NAN,
                        expires_at_ms: f64::NAN,
                        epoch: 0,
                    },
                );
                id
            }
        };
        st.free_cpu_cores[v] = (st.free_cpu_cores[v] - req.cpu_cores).max(0.0);
        st.busy_count[v] += 1;

        let breakdown = breakdown_parts(
            &req,
            sc.function(req.function_id),
            sc.node(req.source_node),
            sc.node(v),
            &sc.link_model,
            self.config.latency,
            applied.choice.is_new(),
            self.wait_ms,
        );
        let finish = st.clock_ms + breakdown.service_ms();
        st.push_event(finish, EventKind::Completion { container_id });

        let mut cost_ms = breakdown.service_ms();
        if self.config.wait_in_reward() {
            cost_ms += breakdown.wait_ms;
        }
        let reward = -cost_ms / 1000.0;
        let slo_met = check_slo(&breakdown, &req);

        self.cursor += 1;
        if self.cursor >= self.scenario.trace.len() {
            self.done = true;
        } else {
            self.present_current()?;
        }
        Ok(StepOutcome {
            reward,
            breakdown,
            slo_met,
            next_state: self.observe(),
            done: self.done,
            remapped,
            applied,
        })
    }
}

/// A scheduling policy driven by [`run_episode`].
pub trait Policy {
    fn decide(&mut self, env: &SimEnv) -> Result<Action>;

    fn name(&self) -> String {
        "policy".into()
    }
}

impl<F> Policy for F
where
    F: FnMut(&SimEnv) -> Result<Action>,
{
    fn decide(&mut self, env: &SimEnv) -> Result<Action> {
        self(env)
    }
}

pub fn run_episode<P: Policy + ?Sized>(
    policy: &mut P,
    scenario: Arc<Scenario>,
    config: EnvConfig,
    seed: u64,
) -> Result<EpisodeReport> {
    run_episode_with(policy, scenario, config, seed, true)
}

/// Like [`run_episode`]; with `record_timing` off every decision time is
/// reported as zero so the report is byte-for-byte reproducible.
pub fn run_episode_with<P: Policy + ?Sized>(
    policy: &mut P,
    scenario: Arc<Scenario>,
    config: EnvConfig,
    seed: u64,
    record_timing: bool,
) -> Result<EpisodeReport> {
    let mut env = SimEnv::new(scenario, config);
    env.reset(seed)?;
    let mut report = EpisodeReport::default();
    while !env.is_done() {
        let req = env.current_request().expect("not done").clone();
        let t0 = Instant::now();
        let action = policy.decide(&env)?;
        let elapsed = t0.elapsed();
        let out = env.step(action)?;
        report.total_reward += out.reward;
        report.records.push(RequestRecord {
            request_id: req.request_id,
            node_id: out.applied.node,
            new_container: out.applied.choice.is_new(),
            wait_ms: out.breakdown.wait_ms,
            cold_ms: out.breakdown.cold_ms,
            comp_ms: out.breakdown.comp_ms,
            comm_ms: out.breakdown.comm_ms,
            total_ms: out.breakdown.total_ms,
            slo_ms: req.slo_ms,
            slo_met: out.slo_met,
            reward: out.reward,
            decision_time_us: if record_timing {
                elapsed.as_secs_f64() * 1e6
            } else {
                0.0
            },
        });
    }
    report.deferred = env.deferred();
    report.remapped = env.remapped();
    Ok(report)
}

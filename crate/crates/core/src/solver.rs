//! Offline placement solvers for a batch of requests: an exhaustive
//! depth-first oracle for tiny instances and a mixed-integer evolutionary
//! search whose constraint handling follows the oracle-penalty idea
//! (a Midaco-style stand-in).

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::{breakdown_parts, LatencyParams};
use crate::scenario::{FunctionSpec, LinkModel, NodeSpec, Request, Scenario};
use crate::simenv::{Action, EnvConfig, EpisodeReport, ReuseChoice, RequestRecord, SimEnv};

pub type AssignmentVector = Vec<Action>;

/// A static batch placement problem. Capacities are what is free at batch
/// start; `idle` counts reusable containers per `(node, function)`.
#[derive(Debug, Clone)]
pub struct StaticInstance {
    pub nodes: Vec<NodeSpec>,
    pub functions: Vec<FunctionSpec>,
    pub requests: Vec<Request>,
    pub idle: BTreeMap<(usize, usize), usize>,
    pub free_cpu: Vec<f64>,
    pub free_mem: Vec<f64>,
    pub link_model: LinkModel,
    pub latency: LatencyParams,
    /// Service latency per `[request][node][reuse/new]`.
    table: Vec<[f64; 2]>,
}

impl StaticInstance {
    pub fn new(
        nodes: Vec<NodeSpec>,
        functions: Vec<FunctionSpec>,
        requests: Vec<Request>,
        idle: BTreeMap<(usize, usize), usize>,
        link_model: LinkModel,
        latency: LatencyParams,
    ) -> Result<StaticInstance> {
        let free_cpu = nodes.iter().map(|n| n.cpu_cores as f64).collect();
        let free_mem = nodes.iter().map(|n| n.mem_mb).collect();
        Self::with_capacity(nodes, functions, requests, idle, free_cpu, free_mem, link_model, latency)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_capacity(
        nodes: Vec<NodeSpec>,
        functions: Vec<FunctionSpec>,
        requests: Vec<Request>,
        idle: BTreeMap<(usize, usize), usize>,
        free_cpu: Vec<f64>,
        free_mem: Vec<f64>,
        link_model: LinkModel,
        latency: LatencyParams,
    ) -> Result<StaticInstance> {
        if nodes.is_empty() || free_cpu.len() != nodes.len() || free_mem.len() != nodes.len() {
            return Err(Error::InvalidParameter("instance needs nodes with capacities".into()));
        }
        for r in &requests {
            if r.source_node >= nodes.len() || r.function_id >= functions.len() {
                return Err(Error::InvalidScenario(format!(
                    "request {} references unknown node or function",
                    r.request_id
                )));
            }
        }
        let mut table = Vec::with_capacity(requests.len() * nodes.len());
        for r in &requests {
            let f = &functions[r.function_id];
            let src = &nodes[r.source_node];
            for host in &nodes {
                let cost = |new| breakdown_parts(r, f, src, host, &link_model, latency, new, 0.0).service_ms();
                table.push([cost(false), cost(true)]);
            }
        }
        Ok(StaticInstance {
            nodes,
            functions,
            requests,
            idle,
            free_cpu,
            free_mem,
            link_model,
            latency,
            table,
        })
    }

    /// Snapshot of the environment's cluster for the next `batch_size`
    /// requests, starting at the request awaiting a decision.
    pub fn from_env(env: &SimEnv, batch_size: usize) -> Result<StaticInstance> {
        let sc = env.scenario();
        let start = env.cursor();
        let end = (start + batch_size).min(sc.trace.len());
        let requests = sc.trace[start..end].to_vec();
        let cl = env.cluster();
        let mut idle = BTreeMap::new();
        for r in &requests {
            for v in 0..sc.nodes.len() {
                let c = cl.idle_count(v, r.function_id);
                if c > 0 {
                    idle.insert((v, r.function_id), c);
                }
            }
        }
        StaticInstance::with_capacity(
            sc.nodes.clone(),
            sc.functions.clone(),
            requests,
            idle,
            cl.free_cpu_cores.clone(),
            cl.free_mem_mb.clone(),
            sc.link_model,
            env.config().latency,
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_requests(&self) -> usize {
        self.requests.len()
    }

    pub fn service_ms(&self, k: usize, a: Action) -> f64 {
        self.table[k * self.nodes.len() + a.node][a.choice.index()]
    }

    pub fn search_space(&self) -> f64 {
        (2.0 * self.nodes.len() as f64).powi(self.requests.len() as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objective_ms: f64,
    /// Sum of positive constraint residuals, each normalized by its capacity.
    pub violation: f64,
    /// The capacity and reuse part of `violation`, i.e. placements the
    /// cluster cannot carry out at all (SLO overshoot excluded).
    pub hard_violation: f64,
}

impl Evaluation {
    pub fn feasible(&self) -> bool {
        self.violation == 0.0
    }

    /// Ordered by capacity/reuse violation, then total violation, then
    /// objective.
    pub fn better_than(&self, other: &Evaluation) -> bool {
        self.key() < other.key()
    }

    pub fn key(&self) -> (f64, f64, f64) {
        (self.hard_violation, self.violation, self.objective_ms)
    }
}

/// Running totals shared by full evaluation and the depth-first search.
/// Both add requests in index order, so a complete search path reproduces
/// the evaluation of that assignment bit for bit.
#[derive(Debug, Clone)]
struct Accounting {
    cpu: Vec<f64>,
    mem: Vec<f64>,
    reuse: BTreeMap<(usize, usize), usize>,
    objective: f64,
    slo: f64,
}

/// What [`Accounting::push`] overwrote.
struct Undo {
    node: usize,
    cpu: f64,
    mem: f64,
    objective: f64,
    slo: f64,
    reuse: Option<(usize, usize)>,
}

impl Accounting {
    fn new(inst: &StaticInstance) -> Self {
        Accounting {
            cpu: vec![0.0; inst.nodes.len()],
            mem: vec![0.0; inst.nodes.len()],
            reuse: BTreeMap::new(),
            objective: 0.0,
            slo: 0.0,
        }
    }

    fn cpu_res(inst: &StaticInstance, v: usize, used: f64) -> f64 {
        (used - inst.free_cpu[v]).max(0.0) / inst.nodes[v].cpu_cores as f64
    }

    fn mem_res(inst: &StaticInstance, v: usize, used: f64) -> f64 {
        (used - inst.free_mem[v]).max(0.0) / inst.nodes[v].mem_mb
    }

    fn reuse_res(inst: &StaticInstance, key: (usize, usize), used: usize) -> f64 {
        used.saturating_sub(inst.idle.get(&key).copied().unwrap_or(0)) as f64
    }

    /// Adds request `k` placed by `a`.
    fn push(&mut self, inst: &StaticInstance, k: usize, a: Action) -> Undo {
        let r = &inst.requests[k];
        let v = a.node;
        let t = inst.service_ms(k, a);
        let mut undo = Undo {
            node: v,
            cpu: self.cpu[v],
            mem: self.mem[v],
            objective: self.objective,
            slo: self.slo,
            reuse: None,
        };
        self.objective += t;
        self.slo += (t - r.slo_ms).max(0.0) / r.slo_ms;
        self.cpu[v] += r.cpu_cores;
        match a.choice {
            ReuseChoice::New => self.mem[v] += r.mem_mb,
            ReuseChoice::Reuse => {
                let key = (v, r.function_id);
                *self.reuse.entry(key).or_insert(0) += 1;
                undo.reuse = Some(key);
            }
        }
        undo
    }

    fn undo(&mut self, u: Undo) {
        self.cpu[u.node] = u.cpu;
        self.mem[u.node] = u.mem;
        self.objective = u.objective;
        self.slo = u.slo;
        if let Some(key) = u.reuse {
            *self.reuse.get_mut(&key).expect("pushed") -= 1;
        }
    }

    /// `(hard, total)` violation of the current totals. Never decreases as
    /// requests are added.
    fn violation(&self, inst: &StaticInstance) -> (f64, f64) {
        let mut v = 0.0;
        for n in 0..inst.nodes.len() {
            v += Self::cpu_res(inst, n, self.cpu[n]);
            v += Self::mem_res(inst, n, self.mem[n]);
        }
        for (&key, &used) in &self.reuse {
            v += Self::reuse_res(inst, key, used);
        }
        (v, v + self.slo)
    }
}

/// Objective (sum of per-request latencies, no waiting) and normalized
/// constraint violation of a complete assignment.
pub fn evaluate_assignment(inst: &StaticInstance, assign: &[Action]) -> Result<Evaluation> {
    if assign.len() != inst.requests.len() {
        return Err(Error::InvalidParameter(format!(
            "assignment covers {} of {} requests",
            assign.len(),
            inst.requests.len()
        )));
    }
    if let Some(a) = assign.iter().find(|a| a.node >= inst.nodes.len()) {
        return Err(Error::InvalidParameter(format!("assignment uses unknown node {}", a.node)));
    }
    let mut acc = Accounting::new(inst);
    for (k, &a) in assign.iter().enumerate() {
        acc.push(inst, k, a);
    }
    let (hard_violation, violation) = acc.violation(inst);
    Ok(Evaluation {
        objective_ms: acc.objective,
        violation,
        hard_violation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub assignment: AssignmentVector,
    pub objective_ms: f64,
    pub feasible: bool,
    pub violation: f64,
    pub hard_violation: f64,
    pub evaluations: u64,
    pub wall_time_ms: f64,
    /// `Evaluation::key` of the incumbent after each generation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<(f64, f64, f64)>,
}

/// Sequential greedy: each request takes its cheapest option that keeps the
/// capacity and reuse residuals at zero, falling back to the cheapest option.
pub fn greedy_assignment(inst: &StaticInstance) -> AssignmentVector {
    let mut acc = Accounting::new(inst);
    let mut out = Vec::with_capacity(inst.requests.len());
    for k in 0..inst.requests.len() {
        let (hard, _) = acc.violation(inst);
        let mut best: Option<(bool, f64, Action)> = None;
        for v in 0..inst.nodes.len() {
            for choice in [ReuseChoice::Reuse, ReuseChoice::New] {
                let a = Action::new(v, choice);
                let t = inst.service_ms(k, a);
                let undo = acc.push(inst, k, a);
                let ok = acc.violation(inst).0 <= hard;
                acc.undo(undo);
                let better = match best {
                    None => true,
                    Some((bok, bt, _)) => (ok && !bok) || (ok == bok && t < bt),
                };
                if better {
                    best = Some((ok, t, a));
                }
            }
        }
        let a = best.expect("at least one node").2;
        acc.push(inst, k, a);
        out.push(a);
    }
    out
}

pub const DEFAULT_BRUTE_BUDGET: u64 = 10_000_000;

/// Exact minimizer of `Evaluation::key` in lexicographic order by
/// depth-first search with partial-cost pruning. A zero-violation optimum is
/// the constrained optimum; otherwise the result is flagged infeasible.
pub fn brute_force(inst: &StaticInstance, budget_evals: u64) -> Result<SolverResult> {
    let needed = inst.search_space();
    if needed > budget_evals as f64 {
        return Err(Error::BudgetExceeded {
            needed,
            budget: budget_evals,
        });
    }
    let t0 = Instant::now();
    let k = inst.requests.len();
    let mut search = Dfs {
        inst,
        acc: Accounting::new(inst),
        current: Vec::with_capacity(k),
        best: None,
        visited: 0,
    };
    search.descend();
    let (assignment, eval) = match search.best {
        Some(b) => b,
        None => (
            Vec::new(),
            Evaluation {
                objective_ms: 0.0,
                violation: 0.0,
                hard_violation: 0.0,
            },
        ),
    };
    Ok(SolverResult {
        feasible: eval.feasible(),
        objective_ms: eval.objective_ms,
        violation: eval.violation,
        hard_violation: eval.hard_violation,
        assignment,
        evaluations: search.visited,
        wall_time_ms: t0.elapsed().as_secs_f64() * 1e3,
        history: Vec::new(),
    })
}

struct Dfs<'a> {
    inst: &'a StaticInstance,
    acc: Accounting,
    current: Vec<Action>,
    best: Option<(Vec<Action>, Evaluation)>,
    visited: u64,
}

impl Dfs<'_> {
    fn pruned(&self) -> bool {
        match &self.best {
            None => false,
            Some((_, b)) => {
                let (hard, total) = self.acc.violation(self.inst);
                (hard, total, self.acc.objective) >= b.key()
            }
        }
    }

    fn descend(&mut self) {
        let depth = self.current.len();
        if depth == self.inst.requests.len() {
            self.visited += 1;
            let eval = evaluate_assignment(self.inst, &self.current).expect("complete assignment");
            if self.best.as_ref().is_none_or(|(_, b)| eval.better_than(b)) {
                self.best = Some((self.current.clone(), eval));
            }
            return;
        }
        for v in 0..self.inst.nodes.len() {
            for choice in [ReuseChoice::Reuse, ReuseChoice::New] {
                let a = Action::new(v, choice);
                self.visited += 1;
                let undo = self.acc.push(self.inst, depth, a);
                if !self.pruned() {
                    self.current.push(a);
                    self.descend();
                    self.current.pop();
                }
                self.acc.undo(undo);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveConfig {
    pub pop: usize,
    pub generations: usize,
    /// Per-gene probability of resampling `(node, reuse/new)`.
    pub mutation_rate: f64,
    pub seed: u64,
    pub violation_scale: f64,
    /// Stop once this many candidate evaluations have been spent.
    pub max_evaluations: Option<u64>,
    pub threads: usize,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            pop: 64,
            generations: 500,
            mutation_rate: 0.1,
            seed: 0,
            violation_scale: 1e6,
            max_evaluations: None,
            threads: 1,
        }
    }
}

impl EvolveConfig {
    /// Configuration that spends exactly `budget` evaluations.
    pub fn with_budget(budget: u64, seed: u64) -> EvolveConfig {
        EvolveConfig {
            generations: usize::MAX,
            max_evaluations: Some(budget),
            seed,
            ..EvolveConfig::default()
        }
    }
}

/// Oracle-penalty fitness. `omega` must be at least the objective of every
/// feasible candidate under comparison, so that any feasible candidate
/// ranks ahead of every infeasible one.
pub fn penalty_fitness(eval: &Evaluation, omega: f64, violation_scale: f64) -> f64 {
    if eval.feasible() {
        eval.objective_ms
    } else {
        omega + violation_scale * eval.violation
    }
}

#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    pub result: SolverResult,
    pub population: Vec<AssignmentVector>,
    /// Per generation: the oracle value Ω and every candidate's
    /// `(feasible, fitness)`; kept only when tracing is requested.
    pub fitness_trace: Vec<(f64, Vec<(bool, f64)>)>,
}

pub fn evolve(inst: &StaticInstance, cfg: &EvolveConfig) -> Result<SolverResult> {
    Ok(evolve_seeded(inst, cfg, &[], false)?.result)
}

/// Evolutionary search starting from `initial` (padded with the greedy
/// solution and random candidates up to `cfg.pop`).
pub fn evolve_seeded(
    inst: &StaticInstance,
    cfg: &EvolveConfig,
    initial: &[AssignmentVector],
    trace_fitness: bool,
) -> Result<EvolveOutcome> {
    if cfg.pop < 4 {
        return Err(Error::InvalidParameter("evolve needs pop >= 4".into()));
    }
    if cfg.max_evaluations == Some(0) {
        return Err(Error::InvalidParameter("evolve needs a budget of at least one evaluation".into()));
    }
    let t0 = Instant::now();
    let k = inst.requests.len();
    let nv = inst.nodes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let random_gene = |rng: &mut ChaCha8Rng| {
        Action::new(rng.gen_range(0..nv), ReuseChoice::from_index(rng.gen_range(0..2)))
    };

    if k == 0 {
        return Ok(EvolveOutcome {
            result: SolverResult {
                assignment: Vec::new(),
                objective_ms: 0.0,
                feasible: true,
                violation: 0.0,
                hard_violation: 0.0,
                evaluations: 0,
                wall_time_ms: 0.0,
                history: Vec::new(),
            },
            population: Vec::new(),
            fitness_trace: Vec::new(),
        });
    }

    let greedy = greedy_assignment(inst);
    let greedy_eval = evaluate_assignment(inst, &greedy)?;
    let mut pop: Vec<AssignmentVector> = initial.iter().take(cfg.pop).cloned().collect();
    for a in &pop {
        if a.len() != k {
            return Err(Error::InvalidParameter("seed candidate has wrong length".into()));
        }
    }
    if pop.len() < cfg.pop {
        pop.push(greedy.clone());
    }
    while pop.len() < cfg.pop {
        pop.push((0..k).map(|_| random_gene(&mut rng)).collect());
    }

    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::InvalidParameter(e.to_string()))?,
        )
    } else {
        None
    };
    let evaluate_all = |pop: &[AssignmentVector]| -> Vec<Evaluation> {
        let f = |a: &AssignmentVector| evaluate_assignment(inst, a).expect("well-formed candidate");
        match &pool {
            Some(p) => p.install(|| pop.par_iter().map(f).collect()),
            None => pop.iter().map(f).collect(),
        }
    };

    let budget = cfg.max_evaluations.unwrap_or(u64::MAX);
    let mut evaluations: u64 = 0;
    let mut incumbent: Option<(AssignmentVector, Evaluation)> = None;
    let mut omega = greedy_eval.objective_ms;
    let mut history = Vec::new();
    let mut fitness_trace = Vec::new();
    let mut generation = 0usize;

    loop {
        // the final generation is cut short so the budget is never exceeded
        let remaining = budget - evaluations;
        if (pop.len() as u64) > remaining {
            pop.truncate(remaining as usize);
        }
        let evals = evaluate_all(&pop);
        evaluations += evals.len() as u64;
        for (a, e) in pop.iter().zip(&evals) {
            if incumbent.as_ref().is_none_or(|(_, b)| e.better_than(b)) {
                incumbent = Some((a.clone(), *e));
            }
        }
        for e in evals.iter().filter(|e| e.feasible()) {
            omega = omega.max(e.objective_ms);
        }
        let fitness: Vec<f64> = evals
            .iter()
            .map(|e| penalty_fitness(e, omega, cfg.violation_scale))
            .collect();
        if trace_fitness {
            fitness_trace.push((
                omega,
                evals.iter().zip(&fitness).map(|(e, &f)| (e.feasible(), f)).collect(),
            ));
        }
        let (_, inc_eval) = incumbent.as_ref().expect("non-empty population");
        history.push(inc_eval.key());

        generation += 1;
        if generation >= cfg.generations || evaluations >= budget {
            break;
        }

        // unrealizable placements lose first; fitness ties go to objective
        let better = |i: usize, j: usize| {
            (evals[i].hard_violation, fitness[i], evals[i].objective_ms)
                < (evals[j].hard_violation, fitness[j], evals[j].objective_ms)
        };
        let tournament = |rng: &mut ChaCha8Rng| {
            let i = rng.gen_range(0..pop.len());
            let j = rng.gen_range(0..pop.len());
            if better(j, i) {
                j
            } else {
                i
            }
        };
        let mut next = Vec::with_capacity(cfg.pop);
        next.push(incumbent.as_ref().expect("set").0.clone());
        while next.len() < cfg.pop {
            let p1 = tournament(&mut rng);
            let p2 = tournament(&mut rng);
            let child: AssignmentVector = (0..k)
                .map(|g| {
                    let gene = if rng.gen_bool(0.5) { pop[p1][g] } else { pop[p2][g] };
                    if cfg.mutation_rate > 0.0 && rng.gen::<f64>() < cfg.mutation_rate {
                        random_gene(&mut rng)
                    } else {
                        gene
                    }
                })
                .collect();
            next.push(child);
        }
        pop = next;
    }

    let (assignment, eval) = incumbent.expect("evaluated at least once");
    Ok(EvolveOutcome {
        result: SolverResult {
            assignment,
            objective_ms: eval.objective_ms,
            feasible: eval.feasible(),
            violation: eval.violation,
            hard_violation: eval.hard_violation,
            evaluations,
            wall_time_ms: t0.elapsed().as_secs_f64() * 1e3,
            history,
        },
        population: pop,
        fitness_trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SolverKind {
    Brute { budget: u64 },
    Evolve(EvolveConfig),
}

impl SolverKind {
    pub fn solve(&self, inst: &StaticInstance, batch_index: u64) -> Result<SolverResult> {
        match self {
            SolverKind::Brute { budget } => brute_force(inst, *budget),
            SolverKind::Evolve(cfg) => {
                let cfg = EvolveConfig {
                    seed: cfg.seed.wrapping_add(batch_index),
                    ..cfg.clone()
                };
                evolve(inst, &cfg)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub batch_index: u64,
    pub first_request: u64,
    pub size: usize,
    #[serde(flatten)]
    pub result: SolverResult,
}

#[derive(Debug, Clone)]
pub struct BatchRun {
    pub report: EpisodeReport,
    pub batches: Vec<BatchResult>,
}

/// Partitions the trace into consecutive batches, solves each one against
/// the simulator state at batch start, and replays the chosen placements
/// through the simulator for accounting.
pub fn solve_trace_in_batches(
    scenario: Arc<Scenario>,
    config: EnvConfig,
    batch_size: usize,
    solver: &SolverKind,
    record_timing: bool,
) -> Result<BatchRun> {
    if batch_size < 1 {
        return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
    }
    let mut env = SimEnv::new(scenario, EnvConfig {
        strict_actions: false,
        ..config
    });
    env.reset(0)?;
    let mut report = EpisodeReport::default();
    let mut batches = Vec::new();
    let mut batch_index = 0u64;
    while !env.is_done() {
        let inst = StaticInstance::from_env(&env, batch_size)?;
        let t0 = Instant::now();
        let res = solver.solve(&inst, batch_index)?;
        let per_request_us = t0.elapsed().as_secs_f64() * 1e6 / inst.num_requests() as f64;
        for (req, &a) in inst.requests.iter().zip(&res.assignment) {
            let out = env.step(a)?;
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
                decision_time_us: if record_timing { per_request_us } else { 0.0 },
            });
        }
        let mut res = res;
        if !record_timing {
            res.wall_time_ms = 0.0;
        }
        res.history.clear();
        batches.push(BatchResult {
            batch_index,
            first_request: inst.requests[0].request_id,
            size: inst.num_requests(),
            result: res,
        });
        batch_index += 1;
    }
    report.deferred = env.deferred();
    report.remapped = env.remapped();
    Ok(BatchRun { report, batches })
}

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use secsched::agents::checkpoint::Checkpoint;
use secsched::agents::dqn::{DqnConfig, DqnPolicy, DqnTrainer};
use secsched::agents::ppo::{ActorCritic, AdvantageMode, PpoConfig, PpoPolicy, PpoTrainer};
use secsched::agents::{curve_record, CurveRow, GreedyLatency, RandomValid, CURVE_HEADER};
use secsched::metrics::{compare, summarize, write_compare_csv, MetricSummary};
use secsched::scenario::{
    generate_scenario, save_functions_csv, save_topology_csv, save_trace_csv, Scenario, ScenarioParams,
    WorkloadConfig,
};
use secsched::simenv::{run_episode_with, state_len, EnvConfig, EpisodeReport, Policy};
use secsched::solver::{solve_trace_in_batches, EvolveConfig, SolverKind};

use crate::output::{sha256_file, OutDir};
use crate::{AdvantageArg, Algo, Cli, Command, Method, Mode};

/// A command-line usage error (exit code 1).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// 1 for usage errors, 2 for bad or missing input data, 3 for runtime failures.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use secsched::Error as E;
    use std::io::ErrorKind;
    let io_code = |e: &std::io::Error| match e.kind() {
        ErrorKind::NotFound | ErrorKind::InvalidData | ErrorKind::PermissionDenied => 2,
        _ => 3,
    };
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidParameter(_) | E::BudgetExceeded { .. } => 1,
                E::Unschedulable { .. } | E::InfeasibleStrict { .. } => 2,
                E::Io(io) => io_code(io),
                e if e.is_data_error() => 2,
                _ => 3,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return io_code(io);
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    3
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::StrictPaper => "strict_paper",
            Mode::Extended => "extended",
        }
    }

    fn eval_env(self) -> EnvConfig {
        match self {
            Mode::StrictPaper => EnvConfig::strict_paper(),
            Mode::Extended => EnvConfig::default(),
        }
    }

    fn train_env(self) -> EnvConfig {
        EnvConfig {
            strict_actions: false,
            ..self.eval_env()
        }
    }
}

fn threads() -> Result<usize> {
    match std::env::var("SEC_SCHED_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(usage(format!("SEC_SCHED_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(1),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let n = threads()?;
    // Only fails if a pool already exists, which is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    let timing = !cli.no_timing;
    match cli.command {
        Command::Generate {
            nodes,
            types,
            functions,
            requests,
            zipf_beta,
            rate,
            seed,
            out,
        } => {
            let params = ScenarioParams {
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
            generate(cli.mode, &params, &out)
        }
        Command::Train {
            algo,
            scenario,
            steps,
            seed,
            out,
            resume,
            config,
            advantage,
            checkpoint_every,
        } => {
            if checkpoint_every == 0 {
                return Err(usage("--checkpoint-every must be at least 1"));
            }
            let args = TrainArgs {
                mode: cli.mode,
                scenario_path: scenario,
                steps,
                seed,
                resume,
                config,
                advantage,
                checkpoint_every,
            };
            match algo {
                Algo::Ppo => train_ppo(&args, &out),
                Algo::Dqn => train_dqn(&args, &out),
            }
        }
        Command::Evaluate {
            policy,
            scenario,
            seed,
            out,
            name,
        } => evaluate(cli.mode, &policy, &scenario, seed, &out, name, timing),
        Command::Solve {
            method,
            budget,
            batch_size,
            scenario,
            seed,
            out,
            config,
            name,
        } => {
            let kind = match method {
                Method::Brute => {
                    if config.is_some() {
                        return Err(usage("--config applies to the evolutionary solver only"));
                    }
                    SolverKind::Brute {
                        budget: budget.unwrap_or(10_000_000),
                    }
                }
                Method::Evolve => {
                    let base = EvolveConfig {
                        threads: n,
                        ..EvolveConfig::with_budget(budget.unwrap_or(50_000), seed)
                    };
                    let mut cfg: EvolveConfig = overlay(base, config.as_deref())?;
                    if let Some(b) = budget {
                        cfg.max_evaluations = Some(b);
                    }
                    SolverKind::Evolve(cfg)
                }
            };
            let name = name.unwrap_or_else(|| match method {
                Method::Brute => "brute".into(),
                Method::Evolve => "evolve".into(),
            });
            solve(cli.mode, kind, batch_size, &scenario, seed, &out, &name, timing)
        }
        Command::Compare { inputs, out } => compare_runs(cli.mode, &inputs, &out),
    }
}

/// Applies a JSON object of overrides to `base`; unknown keys are rejected.
fn overlay<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(base) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let patch: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut merged = serde_json::to_value(&base)?;
    let (Value::Object(fields), Value::Object(patch)) = (&mut merged, patch) else {
        return Err(usage(format!("{}: config must be a JSON object", path.display())));
    };
    for (key, value) in patch {
        if !fields.contains_key(&key) {
            let known: Vec<&str> = fields.keys().map(String::as_str).collect();
            return Err(usage(format!(
                "{}: unknown config key {key:?} (known: {})",
                path.display(),
                known.join(", ")
            )));
        }
        fields.insert(key, value);
    }
    serde_json::from_value(merged).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<Arc<Scenario>> {
    let sc = Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))?;
    Ok(Arc::new(sc))
}

fn generate(mode: Mode, params: &ScenarioParams, out: &Path) -> Result<()> {
    let sc = generate_scenario(params)?;
    let mut dir = OutDir::create(out)?;
    dir.write_with("scenario.json", |p| sc.save_json(p))?;
    dir.write_with("topology.csv", |p| save_topology_csv(p, &sc.nodes))?;
    dir.write_with("functions.csv", |p| save_functions_csv(p, &sc.functions))?;
    dir.write_with("trace.csv", |p| save_trace_csv(p, &sc.trace))?;
    let fingerprint = sc.fingerprint();
    let config = json!({ "params": params, "fingerprint": fingerprint });
    dir.finish("generate", mode.name(), &[("scenario", params.seed)], &config)?;
    println!(
        "nodes={} functions={} requests={} fingerprint={fingerprint}",
        sc.nodes.len(),
        sc.functions.len(),
        sc.trace.len()
    );
    Ok(())
}

struct TrainArgs {
    mode: Mode,
    scenario_path: PathBuf,
    steps: Option<u64>,
    seed: u64,
    resume: Option<PathBuf>,
    config: Option<PathBuf>,
    advantage: Option<AdvantageArg>,
    checkpoint_every: usize,
}

impl TrainArgs {
    fn steps(&self) -> Result<u64> {
        self.steps.ok_or_else(|| usage("--steps is required unless --resume is given"))
    }

    fn load_resume(&self) -> Result<Option<Checkpoint>> {
        let Some(path) = &self.resume else { return Ok(None) };
        if self.config.is_some() || self.advantage.is_some() {
            log::warn!("--config and --advantage are ignored on resume; the checkpoint's settings are used");
        }
        let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        Ok(Some(ckpt))
    }

    /// Curve rows of the run being resumed, up to the checkpoint's step.
    fn prior_curve(&self, ckpt: Option<&Checkpoint>) -> Result<Vec<csv::StringRecord>> {
        let (Some(path), Some(ckpt)) = (&self.resume, ckpt) else {
            return Ok(Vec::new());
        };
        let curve = path.with_file_name("learning_curve.csv");
        if !curve.exists() {
            return Ok(Vec::new());
        }
        let mut rd = csv::Reader::from_path(&curve).with_context(|| format!("reading {}", curve.display()))?;
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec.with_context(|| format!("reading {}", curve.display()))?;
            let step: u64 = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| secsched::Error::Parse {
                    path: curve.clone(),
                    line: rows.len() + 2,
                    msg: "env_steps is not an integer".into(),
                })?;
            if step <= ckpt.header.training_step {
                rows.push(rec);
            }
        }
        Ok(rows)
    }

    fn manifest(&self, algo: &str, sc: &Scenario, agent: &Value, total_steps: u64, env: &EnvConfig, resumed_from: Option<String>) -> Value {
        json!({
            "algo": algo,
            "scenario_fingerprint": sc.fingerprint(),
            "total_steps": total_steps,
            "checkpoint_every": self.checkpoint_every,
            "resumed_from_sha256": resumed_from,
            "agent": agent,
            "env": env,
        })
    }
}

fn save_progress(dir: &mut OutDir, ckpt: &Checkpoint, prior: &[csv::StringRecord], rows: &[CurveRow]) -> Result<()> {
    dir.write_with("checkpoint.bin", |p| ckpt.save(p))?;
    dir.write_with("learning_curve.csv", |p| {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(p)?;
        w.write_record(CURVE_HEADER)?;
        for r in prior {
            w.write_record(r)?;
        }
        for r in rows {
            w.write_record(curve_record(r))?;
        }
        w.flush()?;
        Ok(())
    })
}

fn print_row(r: &CurveRow) {
    println!(
        "step={} reward={:.4} p99={:.2} slo_viol={:.4}",
        r.env_steps, r.mean_episode_reward, r.p99_latency_ms, r.slo_violation_rate
    );
}

fn train_ppo(args: &TrainArgs, out: &Path) -> Result<()> {
    let sc = load_scenario(&args.scenario_path)?;
    let resume = args.load_resume()?;
    let prior = args.prior_curve(resume.as_ref())?;
    let mut trainer = match &resume {
        Some(ckpt) => {
            let mut t = PpoTrainer::resume(sc.clone(), ckpt)?;
            if let Some(s) = args.steps {
                t.total_steps = s;
            }
            t
        }
        None => {
            let mut base = PpoConfig::default();
            if args.mode == Mode::StrictPaper {
                base.advantage = AdvantageMode::OneStep;
            }
            let mut cfg: PpoConfig = overlay(base, args.config.as_deref())?;
            match args.advantage {
                Some(AdvantageArg::Gae) => {
                    if !matches!(cfg.advantage, AdvantageMode::Gae { .. }) {
                        cfg.advantage = AdvantageMode::Gae { lambda: 0.95 };
                    }
                }
                Some(AdvantageArg::OneStep) => cfg.advantage = AdvantageMode::OneStep,
                None => {}
            }
            PpoTrainer::new(sc.clone(), args.mode.train_env(), cfg, args.seed, args.steps()?)?
        }
    };
    let mut dir = OutDir::create(out)?;
    let mut since = 0;
    while !trainer.is_finished() {
        let row = trainer.update_once()?;
        print_row(&row);
        since += 1;
        if since >= args.checkpoint_every && !trainer.is_finished() {
            save_progress(&mut dir, &trainer.checkpoint()?, &prior, &trainer.curve)?;
            since = 0;
        }
    }
    let ckpt = trainer.checkpoint()?;
    save_progress(&mut dir, &ckpt, &prior, &trainer.curve)?;
    let resumed_from = args.resume.as_deref().map(sha256_file).transpose()?;
    let config = args.manifest(
        "ppo",
        &sc,
        &serde_json::to_value(&trainer.config)?,
        trainer.total_steps,
        trainer.worker.env.config(),
        resumed_from,
    );
    dir.finish("train", args.mode.name(), &[("train", trainer.seed)], &config)?;
    Ok(())
}

fn train_dqn(args: &TrainArgs, out: &Path) -> Result<()> {
    let sc = load_scenario(&args.scenario_path)?;
    if args.advantage.is_some() {
        return Err(usage("--advantage applies to PPO only"));
    }
    let resume = args.load_resume()?;
    let prior = args.prior_curve(resume.as_ref())?;
    let mut trainer = match &resume {
        Some(ckpt) => {
            let mut t = DqnTrainer::resume(sc.clone(), ckpt)?;
            if let Some(s) = args.steps {
                t.total_steps = s;
            }
            t
        }
        None => {
            let cfg: DqnConfig = overlay(DqnConfig::default(), args.config.as_deref())?;
            DqnTrainer::new(sc.clone(), args.mode.train_env(), cfg, args.seed, args.steps()?)?
        }
    };
    let mut dir = OutDir::create(out)?;
    let mut since = 0;
    while !trainer.is_finished() {
        if let Some(row) = trainer.step()? {
            print_row(&row);
            since += 1;
            if since >= args.checkpoint_every && !trainer.is_finished() {
                save_progress(&mut dir, &trainer.checkpoint()?, &prior, &trainer.curve)?;
                since = 0;
            }
        }
    }
    let ckpt = trainer.checkpoint()?;
    save_progress(&mut dir, &ckpt, &prior, &trainer.curve)?;
    let resumed_from = args.resume.as_deref().map(sha256_file).transpose()?;
    let config = args.manifest(
        "dqn",
        &sc,
        &serde_json::to_value(&trainer.config)?,
        trainer.total_steps,
        trainer.worker.env.config(),
        resumed_from,
    );
    dir.finish("train", args.mode.name(), &[("train", trainer.seed)], &config)?;
    Ok(())
}

/// Writes episode.csv, summary.csv and cdf_<name>.csv, and prints a summary line.
fn write_report(dir: &mut OutDir, name: &str, report: &EpisodeReport) -> Result<MetricSummary> {
    let summary = summarize(report)?;
    dir.write_with("episode.csv", |p| report.save_csv(p))?;
    dir.write_with("summary.csv", |p| summary.write_summary_csv(name, fs::File::create(p)?))?;
    dir.write_with(&format!("cdf_{name}.csv"), |p| summary.write_cdf_csv(fs::File::create(p)?))?;
    println!(
        "name={name} count={} mean_ms={:.3} p50_ms={:.3} p95_ms={:.3} p99_ms={:.3} slo_viol={:.4} decision_us={:.3} deferred={} remapped={}",
        summary.count,
        summary.mean_ms,
        summary.p50_ms,
        summary.p95_ms,
        summary.p99_ms,
        summary.slo_violation_rate,
        summary.mean_decision_time_us,
        report.deferred,
        report.remapped
    );
    Ok(summary)
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
        return Err(usage(format!("--name {name:?} must be non-empty and use only [A-Za-z0-9._-]")));
    }
    Ok(())
}

fn evaluate(mode: Mode, policy: &str, scenario: &Path, seed: u64, out: &Path, name: Option<String>, timing: bool) -> Result<()> {
    let sc = load_scenario(scenario)?;
    let n = sc.nodes.len();
    let (mut pol, kind, ckpt_hash): (Box<dyn Policy>, String, Option<String>) = match policy {
        "greedy" => (Box::new(GreedyLatency), "greedy".into(), None),
        "random" => (Box::new(RandomValid::new(seed)), "random".into(), None),
        path => {
            let path = Path::new(path);
            let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            let algo = ckpt.header.algo.clone();
            ckpt.check_compatible(&algo, n, state_len(n))?;
            let pol: Box<dyn Policy> = match algo.as_str() {
                "ppo" => Box::new(PpoPolicy::new(ActorCritic::from_checkpoint(&ckpt, n)?)),
                "dqn" => Box::new(DqnPolicy { q: ckpt.net("q")? }),
                other => return Err(secsched::Error::Checkpoint(format!("unknown algorithm {other:?}")).into()),
            };
            (pol, algo, Some(sha256_file(path)?))
        }
    };
    let name = name.unwrap_or_else(|| kind.clone());
    check_name(&name)?;
    let env = mode.eval_env();
    let report = run_episode_with(pol.as_mut(), sc.clone(), env, seed, timing)?;
    let mut dir = OutDir::create(out)?;
    write_report(&mut dir, &name, &report)?;
    let config = json!({
        "policy": kind,
        "name": name,
        "checkpoint_sha256": ckpt_hash,
        "scenario_fingerprint": sc.fingerprint(),
        "env": env,
        "record_timing": timing,
    });
    dir.finish("evaluate", mode.name(), &[("episode", seed)], &config)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn solve(mode: Mode, kind: SolverKind, batch_size: usize, scenario: &Path, seed: u64, out: &Path, name: &str, timing: bool) -> Result<()> {
    check_name(name)?;
    let sc = load_scenario(scenario)?;
    let env = mode.eval_env();
    let run = solve_trace_in_batches(sc.clone(), env, batch_size, &kind, timing)?;
    let mut dir = OutDir::create(out)?;
    write_report(&mut dir, name, &run.report)?;
    let objective: f64 = run.batches.iter().map(|b| b.result.objective_ms).sum();
    let feasible = run.batches.iter().filter(|b| b.result.feasible).count();
    let evaluations: u64 = run.batches.iter().map(|b| b.result.evaluations).sum();
    let wall: f64 = run.batches.iter().map(|b| b.result.wall_time_ms).sum();
    let result = json!({
        "solver": kind,
        "batch_size": batch_size,
        "seed": seed,
        "objective_ms": objective,
        "feasible_batches": feasible,
        "total_batches": run.batches.len(),
        "evaluations": evaluations,
        "wall_time_ms": wall,
        "batches": run.batches,
    });
    dir.write_json("solver_result.json", &result)?;
    println!("batches={} feasible={feasible} objective_ms={objective:.3} wall_ms={wall:.1}", run.batches.len());
    let config = json!({
        "solver": kind,
        "batch_size": batch_size,
        "name": name,
        "scenario_fingerprint": sc.fingerprint(),
        "env": env,
        "record_timing": timing,
    });
    dir.finish("solve", mode.name(), &[("solver", seed)], &config)?;
    Ok(())
}

fn compare_runs(mode: Mode, inputs: &[PathBuf], out: &Path) -> Result<()> {
    if inputs.len() < 2 {
        return Err(usage("compare needs at least two --inputs"));
    }
    let mut summaries = Vec::with_capacity(inputs.len());
    for dir in inputs {
        let path = dir.join("summary.csv");
        let (name, mut summary) =
            MetricSummary::load_summary_csv(&path).with_context(|| format!("loading {}", path.display()))?;
        summary.cdf.clear();
        summaries.push((name, summary));
    }
    let rows = compare(&summaries)?;
    let mut dir = OutDir::create(out)?;
    dir.write_with("compare.csv", |p| write_compare_csv(&rows, fs::File::create(p)?))?;
    for r in &rows {
        println!(
            "name={} mean_ratio={:.4} p99_ratio={:.4} slo_viol_ratio={:.4} speedup_vs_slowest={:.2}",
            r.name, r.mean_ratio, r.p99_ratio, r.slo_violation_ratio, r.speedup_vs_slowest
        );
    }
    let names: Vec<&str> = summaries.iter().map(|(n, _)| n.as_str()).collect();
    dir.finish("compare", mode.name(), &[], &json!({ "inputs": names }))?;
    Ok(())
}

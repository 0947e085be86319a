//! `secsched` command-line harness.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "secsched", version, about = "SLO-aware container scheduling for serverless edge clusters")]
pub struct Cli {
    /// `strict_paper` turns off waiting in the reward, deferral and GAE.
    #[arg(long, value_enum, default_value_t = Mode::Extended, global = true)]
    pub mode: Mode,

    /// Record zero decision and wall-clock times so reruns are byte-identical.
    #[arg(long, global = true)]
    pub no_timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Mode {
    StrictPaper,
    Extended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Ppo,
    Dqn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum AdvantageArg {
    Gae,
    OneStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Brute,
    Evolve,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded scenario (topology, functions, trace).
    Generate {
        #[arg(long, default_value_t = 125)]
        nodes: usize,
        #[arg(long, default_value_t = 10)]
        types: usize,
        #[arg(long, default_value_t = 200)]
        functions: usize,
        #[arg(long, default_value_t = 10_000)]
        requests: usize,
        #[arg(long, default_value_t = 1.0)]
        zipf_beta: f64,
        /// Mean arrival rate in requests per second.
        #[arg(long, default_value_t = 10.0)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a PPO or DQN scheduler.
    Train {
        #[arg(long, value_enum)]
        algo: Algo,
        #[arg(long)]
        scenario: PathBuf,
        /// Total environment steps (defaults to the checkpoint's budget on resume).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// JSON object overriding agent hyperparameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        advantage: Option<AdvantageArg>,
        /// Write a checkpoint after this many curve rows.
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
    },
    /// Run one episode of a policy and write its metrics.
    Evaluate {
        /// Checkpoint path, `greedy` or `random`.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Name used in summary.csv (defaults to the policy kind).
        #[arg(long)]
        name: Option<String>,
    },
    /// Solve the trace in static batches and replay the placements.
    Solve {
        #[arg(long, value_enum)]
        method: Method,
        /// Evaluation budget per batch.
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// JSON object overriding evolutionary solver settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Build a ratio-to-best table from evaluated runs.
    Compare {
        /// Run directories containing summary.csv.
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

//! Argument parsing and dispatch. Flags override values from `--config`.

use std::ffi::OsString;
use std::path::PathBuf;

use bacm_core::PromptVariant;
use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_bench, cmd_run, cmd_train_sim};
use crate::config::{PolicyKind, RunConfig};
use crate::error::AppError;

#[derive(Debug, Parser)]
#[command(name = "bacm", version, about = "Budget-aware context management: episodes, sweeps and a toy trainer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes for a single strategy, budget and objective count.
    Run(RolloutArgs),
    /// Sweep strategies x budgets x objective counts.
    Bench(RolloutArgs),
    /// Train the toy fold policy under a budget schedule.
    TrainSim(TrainArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Base seed. Episode e uses task seed `seed + e`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, AppError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Corpus JSONL (`{"id","title","text"}` per line).
    #[arg(long, requires = "pool")]
    pub corpus: Option<PathBuf>,
    /// QA pool JSONL (`{"question","gold_answers"}` per line).
    #[arg(long, requires = "corpus")]
    pub pool: Option<PathBuf>,
    /// Maximum context length(s) B, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub max_model_len: Vec<u64>,
    /// Objective count(s) N per task, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub objectives: Vec<usize>,
    /// no_management, reactive_summary, proactive_fixed_state, budget_aware,
    /// budget_aware_no_budget; comma separated.
    #[arg(long, value_delimiter = ',')]
    pub strategy: Vec<String>,
    /// Fold prompt for budget_aware: budget or no_budget.
    #[arg(long)]
    pub prompt: Option<PromptVariant>,
    /// Episodes per cell.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// heuristic, oracle, scripted or remote.
    #[arg(long, value_parser = parse_policy_kind)]
    pub policy: Option<PolicyKind>,
    /// JSON output queues for the scripted policy.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible API (remote policy).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name sent to the remote endpoint.
    #[arg(long)]
    pub model: Option<String>,
    /// Documents returned per search.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Tokens reserved below B.
    #[arg(long)]
    pub safety_margin: Option<u64>,
    /// whitespace or bytes_div4.
    #[arg(long)]
    pub tokenizer: Option<String>,
    /// Turn limit per episode (default 2N + 6).
    #[arg(long)]
    pub max_turns: Option<u32>,
    /// Maximum folds per episode.
    #[arg(long)]
    pub compression_cap: Option<u32>,
    /// Context fraction of the usable limit that triggers reactive_summary.
    #[arg(long)]
    pub trigger_fraction: Option<f64>,
    /// Fail episodes on unparseable policy output instead of falling back.
    #[arg(long)]
    pub strict: bool,
    /// Worker threads for bench (0 = available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
}

fn parse_policy_kind(s: &str) -> Result<PolicyKind, String> {
    match s {
        "heuristic" => Ok(PolicyKind::Heuristic),
        "oracle" => Ok(PolicyKind::Oracle),
        "scripted" => Ok(PolicyKind::Scripted),
        "remote" => Ok(PolicyKind::Remote),
        _ => Err(format!("unknown policy `{s}` (heuristic, oracle, scripted, remote)")),
    }
}

impl RolloutArgs {
    pub fn config(&self) -> Result<RunConfig, AppError> {
        let mut cfg = self.common.load()?;
        let r = &mut cfg.rollout;
        if self.corpus.is_some() {
            cfg.corpus.path = self.corpus.clone();
            cfg.corpus.pool = self.pool.clone();
        }
        if !self.max_model_len.is_empty() {
            r.max_model_len = self.max_model_len.clone();
        }
        if !self.objectives.is_empty() {
            r.objectives = self.objectives.clone();
        }
        if !self.strategy.is_empty() {
            r.strategies = self.strategy.clone();
        }
        if let Some(p) = self.prompt {
            r.prompt = p;
        }
        if let Some(v) = self.top_k {
            r.top_k = v;
        }
        if let Some(v) = self.safety_margin {
            r.safety_margin = v;
        }
        if let Some(v) = &self.tokenizer {
            r.tokenizer = v.clone();
        }
        if self.max_turns.is_some() {
            r.max_turns = self.max_turns;
        }
        if let Some(v) = self.compression_cap {
            r.compression_cap = v;
        }
        if let Some(v) = self.trigger_fraction {
            r.trigger_fraction = v;
        }
        if self.strict {
            r.strict = true;
        }
        if let Some(v) = self.episodes {
            cfg.episodes = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        let p = &mut cfg.policy;
        if let Some(k) = self.policy {
            p.kind = k;
        }
        if self.script.is_some() {
            p.script = self.script.clone();
        }
        if self.endpoint.is_some() {
            p.endpoint = self.endpoint.clone();
        }
        if self.model.is_some() {
            p.model = self.model.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// curriculum, static:B[:STEPS] or random:B1,B2[:STEPS].
    #[arg(long, visible_alias = "curriculum")]
    pub schedule: Option<String>,
    /// Steps for static and random schedules.
    #[arg(long)]
    pub steps: Option<u32>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub tasks_per_step: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub objectives: Option<usize>,
}

impl TrainArgs {
    pub fn config(&self) -> Result<RunConfig, AppError> {
        let mut cfg = self.common.load()?;
        let t = &mut cfg.train;
        if let Some(s) = &self.schedule {
            t.schedule = s.clone();
        }
        if let Some(v) = self.steps {
            t.steps = v;
        }
        if let Some(v) = self.group_size {
            t.group_size = v;
        }
        if let Some(v) = self.tasks_per_step {
            t.tasks_per_step = v;
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.objectives {
            t.objectives = v;
        }
        Ok(cfg)
    }
}

pub fn dispatch(cli: &Cli) -> Result<(), AppError> {
    match &cli.command {
        Command::Run(a) => cmd_run(&a.config()?),
        Command::Bench(a) => cmd_bench(&a.config()?),
        Command::TrainSim(a) => cmd_train_sim(&a.config()?),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}

//! `run`, `bench` and `train-sim`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::Context;
use bacm_core::environment::{compose_task, generate_synthetic_corpus, ComposedTask, CorpusIndex, QAItem};
use bacm_core::metrics::{aggregate, render_judge_prompt, render_table, score_trajectory, AggregateReport, EpisodeMetrics, GroupKey};
use bacm_core::policy::{HeuristicPolicy, Policy, ScriptedOutputs, ScriptedPolicy};
use bacm_core::rl::{train_toy_policy_with, RlError, StageSummary, TrainingTrace};
use bacm_core::rollout::{run_episode, Strategy, TrajectoryStatus};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PolicyKind, RunConfig};
use crate::error::AppError;
use crate::io::{self, ConfigEcho, IoError, OutDir, TrajectoryRecord, FORMAT_VERSION};
use crate::remote::{InFlightLimit, RemotePolicy, RemoteSettings};

/// Searchable corpus plus the question pool tasks are drawn from.
pub struct Workload {
    pub index: CorpusIndex,
    pub pool: Vec<QAItem>,
}

fn read_input<T>(what: &'static str, path: &Path, read: impl FnOnce(&Path) -> Result<T, IoError>) -> Result<T, AppError> {
    match read(path) {
        Ok(v) => Ok(v),
        Err(IoError::Open { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => {
            Err(AppError::MissingInput { what, path: path.into() })
        }
        Err(e) => Err(AppError::Other(e.into())),
    }
}

pub fn load_workload(cfg: &RunConfig) -> Result<Workload, AppError> {
    let (corpus, pool) = match (&cfg.corpus.path, &cfg.corpus.pool) {
        (Some(c), Some(p)) => (read_input("corpus file", c, io::read_corpus)?, read_input("QA pool file", p, io::read_pool)?),
        _ => {
            let s = &cfg.corpus.synthetic;
            generate_synthetic_corpus(s.seed, s.facts, s.filler_tokens)
        }
    };
    let index = CorpusIndex::build(&corpus).map_err(|e| AppError::Config(format!("corpus: {e}")))?;
    for q in &pool {
        q.validate().map_err(|e| AppError::Config(format!("QA pool: {e}")))?;
    }
    Ok(Workload { index, pool })
}

/// Where policy text comes from.
pub enum Backend {
    Heuristic { delimiter: String },
    Oracle { delimiter: String },
    Scripted(ScriptedOutputs),
    Remote(RemotePolicy),
}

impl Backend {
    /// Builds the backend, reading the script or credential up front.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, AppError> {
        let p = &cfg.policy;
        let delimiter = cfg.rollout.answer_delimiter.clone();
        Ok(match p.kind {
            PolicyKind::Heuristic => Backend::Heuristic { delimiter },
            PolicyKind::Oracle => Backend::Oracle { delimiter },
            PolicyKind::Scripted => {
                let path = p.script.as_ref().ok_or_else(|| AppError::Config("policy.script is required".into()))?;
                let text = std::fs::read_to_string(path)
                    .map_err(|_| AppError::MissingInput { what: "policy script", path: path.clone() })?;
                let outputs = serde_json::from_str(&text)
                    .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
                Backend::Scripted(outputs)
            }
            PolicyKind::Remote => {
                let settings = RemoteSettings {
                    endpoint: p.endpoint.clone().ok_or_else(|| AppError::Config("policy.endpoint is required".into()))?,
                    model: p.model.clone().ok_or_else(|| AppError::Config("policy.model is required".into()))?,
                    temperature: p.temperature,
                    max_tokens: p.max_tokens,
                    timeout: Duration::from_secs(p.timeout_secs),
                };
                let remote = RemotePolicy::from_env(settings, InFlightLimit::new(p.max_in_flight))
                    .map_err(|e| AppError::Config(e.to_string()))?;
                Backend::Remote(remote)
            }
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Backend::Heuristic { .. } => "heuristic",
            Backend::Oracle { .. } => "oracle",
            Backend::Scripted(_) => "scripted",
            Backend::Remote(_) => "remote",
        }
    }

    /// A fresh policy for one episode.
    pub fn policy_for(&self, task: &ComposedTask) -> Box<dyn Policy + Send> {
        match self {
            Backend::Heuristic { delimiter } => {
                let mut h = HeuristicPolicy::default();
                h.delimiter = delimiter.clone();
                Box::new(h)
            }
            Backend::Oracle { delimiter } => Box::new(ScriptedPolicy::oracle(task, delimiter)),
            Backend::Scripted(outputs) => Box::new(ScriptedPolicy::new(outputs.clone())),
            Backend::Remote(r) => Box::new(r.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    strategy: Strategy,
    max_model_len: u64,
    objectives: usize,
    episode: usize,
}

struct EpisodeOutput {
    key: GroupKey,
    metrics: EpisodeMetrics,
    record: TrajectoryRecord,
    task: ComposedTask,
}

/// Per-episode metrics line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub format_version: u32,
    pub episode: usize,
    pub strategy: String,
    pub max_model_len: u64,
    pub task_seed: u64,
    #[serde(flatten)]
    pub metrics: EpisodeMetrics,
}

fn task_seed(cfg: &RunConfig, episode: usize) -> u64 {
    cfg.seed.wrapping_add(episode as u64)
}

fn run_job(cfg: &RunConfig, work: &Workload, backend: &Backend, job: Job) -> Result<EpisodeOutput, String> {
    let seed = task_seed(cfg, job.episode);
    let task = compose_task(&work.pool, job.objectives, seed).map_err(|e| e.to_string())?;
    let rollout = cfg.rollout_config(job.max_model_len).map_err(|e| e.to_string())?;
    let mut policy = backend.policy_for(&task);
    let trajectory =
        run_episode(&task, &job.strategy, policy.as_mut(), &work.index, &rollout).map_err(|e| e.to_string())?;
    if trajectory.policy_retries > 0 {
        log::info!("episode {}: {} policy retries", job.episode, trajectory.policy_retries);
    }
    let metrics = score_trajectory(&trajectory, &task);
    let record = TrajectoryRecord {
        format_version: FORMAT_VERSION,
        episode: job.episode,
        config: ConfigEcho {
            policy: backend.label().into(),
            objectives: job.objectives,
            top_k: rollout.top_k,
            tokenizer: cfg.rollout.tokenizer.clone(),
            max_turns: rollout.turn_limit(job.objectives),
            strict: rollout.strict,
            run_seed: cfg.seed,
            task_seed: seed,
        },
        trajectory,
    };
    let key = GroupKey {
        strategy: job.strategy.label(),
        max_model_len: rollout.max_model_len,
        objectives: job.objectives,
    };
    Ok(EpisodeOutput { key, metrics, record, task })
}

fn metrics_record(out: &EpisodeOutput) -> MetricsRecord {
    MetricsRecord {
        format_version: FORMAT_VERSION,
        episode: out.record.episode,
        strategy: out.key.strategy.clone(),
        max_model_len: out.key.max_model_len.0,
        task_seed: out.record.config.task_seed,
        metrics: out.metrics.clone(),
    }
}

fn write_judge_prompts(out: &mut OutDir, prefix: &str, ep: &EpisodeOutput) -> Result<(), IoError> {
    for (j, item) in ep.task.objectives.iter().enumerate() {
        let response = ep.record.trajectory.final_answers.get(j).map(String::as_str).unwrap_or("");
        let prompt = render_judge_prompt(&item.question, response, &item.gold_answers[0]);
        out.write_text(&format!("{prefix}/episode-{:04}/q{:02}.txt", ep.record.episode, j + 1), "judge_prompt", &prompt)?;
    }
    Ok(())
}

/// One cell (first strategy, budget and objective count), `episodes`
/// episodes run in order.
pub fn cmd_run(cfg: &RunConfig) -> Result<(), AppError> {
    cfg.validate_rollout()?;
    let r = &cfg.rollout;
    if r.max_model_len.len() > 1 || r.objectives.len() > 1 || r.strategies.len() > 1 {
        log::warn!("run uses only the first strategy, budget and objective count; use bench for sweeps");
    }
    let backend = Backend::from_config(cfg)?;
    let work = load_workload(cfg)?;
    let strategy = cfg.strategies()?[0];
    let mut outputs = Vec::new();
    let mut failures = Vec::new();
    for episode in 0..cfg.episodes {
        let job = Job { strategy, max_model_len: r.max_model_len[0], objectives: r.objectives[0], episode };
        let out = run_job(cfg, &work, &backend, job).map_err(AppError::Config)?;
        if out.record.trajectory.status == TrajectoryStatus::Errored {
            failures.push(format!("episode {episode}: {}", out.record.trajectory.error.clone().unwrap_or_default()));
        }
        outputs.push(out);
    }

    let mut out = OutDir::create(&cfg.out_dir)?;
    let records: Vec<&TrajectoryRecord> = outputs.iter().map(|o| &o.record).collect();
    out.write_jsonl("trajectories.jsonl", "trajectories", records.iter().copied()).context("writing trajectories")?;
    let metrics: Vec<MetricsRecord> = outputs.iter().map(metrics_record).collect();
    out.write_jsonl("metrics.jsonl", "episode_metrics", &metrics).context("writing metrics")?;
    for o in &outputs {
        write_judge_prompts(&mut out, "judge", o).context("writing judge prompts")?;
    }
    let rows = aggregate(&outputs.iter().map(|o| (o.key.clone(), o.metrics.clone())).collect::<Vec<_>>())
        .map_err(|e| AppError::Other(e.into()))?;
    let table = render_table(&rows);
    out.write_text("summary.txt", "summary_table", &table).context("writing summary")?;
    out.finish("run", cfg.to_table()).context("writing manifest")?;
    print!("{table}");
    for o in &outputs {
        let t = &o.record.trajectory;
        println!(
            "episode {}: status={:?} summed_f1={:.3} compressions={} peak={} violated={}",
            o.record.episode, t.status, o.metrics.summed_f1, t.compressions_used, t.peak_tokens, t.budget_violated
        );
    }
    if !failures.is_empty() {
        return Err(AppError::Other(anyhow::anyhow!("{} episode(s) errored: {}", failures.len(), failures.join("; "))));
    }
    Ok(())
}

/// Outcome of one (strategy, budget, objectives) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub strategy: String,
    pub max_model_len: u64,
    pub objectives: usize,
    pub episodes_ok: usize,
    pub errors: Vec<String>,
}

/// Full cross product of strategies × budgets × objective counts.
pub fn cmd_bench(cfg: &RunConfig) -> Result<(), AppError> {
    cfg.validate_rollout()?;
    let backend = Backend::from_config(cfg)?;
    let work = load_workload(cfg)?;
    let strategies = cfg.strategies()?;
    let mut cells = Vec::new();
    for &strategy in &strategies {
        for &b in &cfg.rollout.max_model_len {
            for &n in &cfg.rollout.objectives {
                cells.push((strategy, b, n));
            }
        }
    }
    let jobs: Vec<Job> = cells
        .iter()
        .flat_map(|&(strategy, max_model_len, objectives)| {
            (0..cfg.episodes).map(move |episode| Job { strategy, max_model_len, objectives, episode })
        })
        .collect();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if cfg.workers > 0 {
        builder = builder.num_threads(cfg.workers);
    }
    let pool = builder.build().context("building worker pool")?;
    let results: Vec<Result<EpisodeOutput, String>> =
        pool.install(|| jobs.par_iter().map(|&job| run_job(cfg, &work, &backend, job)).collect());

    let mut status: BTreeMap<(String, u64, usize), CellStatus> = BTreeMap::new();
    for &(s, b, n) in &cells {
        let key = (s.label(), b, n);
        status.insert(
            key.clone(),
            CellStatus { strategy: key.0, max_model_len: b, objectives: n, episodes_ok: 0, errors: Vec::new() },
        );
    }
    let mut ok = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        let cell = status.get_mut(&(job.strategy.label(), job.max_model_len, job.objectives)).expect("known cell");
        match result {
            Ok(out) if out.record.trajectory.status == TrajectoryStatus::Errored => {
                let why = out.record.trajectory.error.clone().unwrap_or_default();
                cell.errors.push(format!("episode {}: {why}", job.episode));
            }
            Ok(out) => {
                cell.episodes_ok += 1;
                ok.push(out);
            }
            Err(e) => cell.errors.push(format!("episode {}: {e}", job.episode)),
        }
    }

    let mut out = OutDir::create(&cfg.out_dir)?;
    let records: Vec<&TrajectoryRecord> = ok.iter().map(|o| &o.record).collect();
    out.write_jsonl("trajectories.jsonl", "trajectories", records.iter().copied()).context("writing trajectories")?;
    let metrics: Vec<MetricsRecord> = ok.iter().map(metrics_record).collect();
    out.write_jsonl("metrics.jsonl", "episode_metrics", &metrics).context("writing metrics")?;
    let rows: Vec<AggregateReport> = if ok.is_empty() {
        Vec::new()
    } else {
        aggregate(&ok.iter().map(|o| (o.key.clone(), o.metrics.clone())).collect::<Vec<_>>())
            .map_err(|e| AppError::Other(e.into()))?
    };
    out.write_jsonl("report.jsonl", "aggregate_report", &rows).context("writing report")?;
    let table = render_table(&rows);
    out.write_text("report.txt", "report_table", &table).context("writing report table")?;
    let statuses: Vec<&CellStatus> = status.values().collect();
    let cells_path = out.write_jsonl("cells.jsonl", "cell_status", statuses.iter().copied()).context("writing cells")?;
    out.finish("bench", cfg.to_table()).context("writing manifest")?;
    print!("{table}");
    let failed: Vec<&CellStatus> = statuses.iter().copied().filter(|c| !c.errors.is_empty()).collect();
    for c in &failed {
        eprintln!(
            "cell {} B={} N={}: {} error(s), first: {}",
            c.strategy,
            c.max_model_len,
            c.objectives,
            c.errors.len(),
            c.errors[0]
        );
    }
    if !failed.is_empty() {
        return Err(AppError::CellsFailed { failed: failed.len(), total: statuses.len(), report: cells_path });
    }
    Ok(())
}

/// Fixed-width table of stage summaries.
pub fn render_stage_table(stages: &[StageSummary]) -> String {
    let mut s = format!("{:<7} {:>9} {:>7} {:>12} {:>10} {:>9}\n", "stage", "steps", "B_max", "reward_gated", "fold_freq", "decisions");
    for (i, st) in stages.iter().enumerate() {
        s.push_str(&format!(
            "{:<7} {:>9} {:>7} {:>12.4} {:>10.4} {:>9}\n",
            i + 1,
            format!("{}-{}", st.from_step, st.to_step),
            st.b_max_first,
            st.mean_constrained_reward,
            st.fold_frequency,
            st.decisions
        ));
    }
    s
}

pub fn cmd_train_sim(cfg: &RunConfig) -> Result<(), AppError> {
    let toy = cfg.toy_config()?;
    let mut out = OutDir::create(&cfg.out_dir)?;
    let trace_rel = "training.jsonl";
    let trace_path = out.path(trace_rel);
    let mut writer = BufWriter::new(File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?);
    let mut steps = 0usize;
    let mut write_err = None;
    let result = train_toy_policy_with(&toy, |step| {
        if write_err.is_none() {
            let line = serde_json::to_string(step).expect("serializable step");
            if let Err(e) = writeln!(writer, "{line}") {
                write_err = Some(e);
            }
        }
        steps += 1;
    });
    writer.flush()?;
    if let Some(e) = write_err {
        return Err(AppError::Other(anyhow::Error::new(e).context("writing training trace")));
    }
    out.record(trace_rel, "training_steps", Some(steps));
    let trace: TrainingTrace = match result {
        Ok(t) => t,
        Err(RlError::Diverged { step }) => {
            out.finish("train-sim", cfg.to_table()).context("writing manifest")?;
            return Err(AppError::Diverged { step, trace: trace_path });
        }
        Err(e) => return Err(AppError::Config(e.to_string())),
    };
    let stages = trace.stage_summaries();
    out.write_jsonl("stages.jsonl", "stage_summary", &stages).context("writing stages")?;
    let policy = serde_json::to_string_pretty(&trace.final_policy).expect("serializable policy");
    out.write_text("final_policy.json", "final_policy", &(policy + "\n")).context("writing final policy")?;
    let table = render_stage_table(&stages);
    out.write_text("stages.txt", "stage_table", &table).context("writing stage table")?;
    out.finish("train-sim", cfg.to_table()).context("writing manifest")?;
    println!("schedule {}", trace.schedule);
    print!("{table}");
    Ok(())
}

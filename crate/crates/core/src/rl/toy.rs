//! A tabular fold policy trained with group-relative, budget-gated rewards
//! on the synthetic corpus.
//!
//! The policy's only learned choice is the fold: a softmax over
//! {NONE, oldest half, ALL} per remaining-budget decile. Search and answer
//! behaviour is the heuristic agent's. Merged text is deliberately lossy, so
//! folding costs reward when the budget is loose and saves it (from the
//! zero-reward gate) when the budget is tight.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::curriculum::{BudgetSchedule, CurriculumSchedule};
use super::objective::{budget_constrained_reward, episode_reward, group_advantages, LossConfig, RlError};
use crate::budget::PromptVariant;
use crate::context::{BlockKind, FoldDirective};
use crate::environment::{compose_task, generate_synthetic_corpus, CorpusIndex};
use crate::policy::{oldest_half, render_as_tool_call, HeuristicPolicy, Policy, PolicyError, PolicyRequest};
use crate::rollout::{run_episode, RolloutConfig, Strategy};

/// Deciles -5..=9 of the remaining-budget percentage.
const BUCKETS: usize = 15;
const MIN_DECILE: i64 = -5;
const ACTIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub schedule: BudgetSchedule,
    pub group_size: usize,
    pub tasks_per_step: usize,
    pub learning_rate: f64,
    pub objectives: usize,
    pub num_facts: usize,
    pub filler_tokens_per_doc: usize,
    pub top_k: usize,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            schedule: BudgetSchedule::staged(CurriculumSchedule::five_stage()),
            group_size: 5,
            tasks_per_step: 2,
            learning_rate: 0.5,
            objectives: 2,
            num_facts: 120,
            filler_tokens_per_doc: 690,
            top_k: 3,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        self.schedule.validate()?;
        self.loss.validate()?;
        if self.group_size < 2 {
            return Err(RlError::GroupTooSmall(self.group_size));
        }
        if self.tasks_per_step == 0 || self.objectives == 0 || self.top_k == 0 {
            return Err(RlError::InvalidConfig("tasks_per_step, objectives and top_k must be positive"));
        }
        if self.num_facts < self.objectives {
            return Err(RlError::InvalidConfig("num_facts must be at least objectives"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(RlError::InvalidConfig("learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyAction {
    None,
    PartialHalf,
    All,
}

impl ToyAction {
    const ORDER: [ToyAction; ACTIONS] = [ToyAction::None, ToyAction::PartialHalf, ToyAction::All];

    fn index(self) -> usize {
        self as usize
    }
}

type Logits = [[f64; ACTIONS]; BUCKETS];

fn bucket(decile: i64) -> usize {
    (decile.clamp(MIN_DECILE, MIN_DECILE + BUCKETS as i64 - 1) - MIN_DECILE) as usize
}

fn softmax(row: &[f64; ACTIONS]) -> [f64; ACTIONS] {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; ACTIONS];
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = libm::exp(x - max);
        z += *o;
    }
    for o in &mut out {
        *o /= z;
    }
    out
}

/// One stochastic rollout policy drawn from the current table.
pub struct ToyPolicy<'a> {
    logits: &'a Logits,
    rng: ChaCha8Rng,
    agent: HeuristicPolicy,
    decisions: Vec<(usize, ToyAction)>,
}

impl<'a> ToyPolicy<'a> {
    fn new(logits: &'a Logits, seed: u64) -> Self {
        ToyPolicy { logits, rng: ChaCha8Rng::seed_from_u64(seed), agent: HeuristicPolicy::default(), decisions: Vec::new() }
    }

    fn sample(&mut self, b: usize) -> ToyAction {
        let p = softmax(&self.logits[b]);
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return ToyAction::ORDER[i];
            }
        }
        ToyAction::All
    }
}

impl Policy for ToyPolicy<'_> {
    fn respond(&mut self, request: &PolicyRequest<'_>) -> Result<String, PolicyError> {
        match request {
            PolicyRequest::Act { context } => Ok(self.agent.act(context)),
            PolicyRequest::Summarize { context } => Ok(self.agent.summarize(context)),
            PolicyRequest::Fold { context, budget, ids, .. } => {
                let has_content = context
                    .blocks()
                    .iter()
                    .any(|b| matches!(b.kind(), BlockKind::ToolObservation | BlockKind::Merged));
                let Some(state) = budget.filter(|_| has_content) else {
                    return Ok(render_as_tool_call(&FoldDirective::none()));
                };
                let b = bucket(state.remaining_pct.decile());
                let action = self.sample(b);
                self.decisions.push((b, action));
                let directive = match action {
                    ToyAction::None => FoldDirective::none(),
                    ToyAction::PartialHalf => {
                        let chosen = oldest_half(ids);
                        let text = format!("[folded {} commits]", chosen.len());
                        FoldDirective::partial(chosen, text)
                    }
                    ToyAction::All => FoldDirective::all(format!("[folded {} commits]", ids.len())),
                };
                Ok(render_as_tool_call(&directive))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: u32,
    pub b_max: u64,
    pub mean_reward: f64,
    pub mean_constrained_reward: f64,
    /// Counts of NONE, oldest-half and ALL decisions.
    pub action_counts: [u32; ACTIONS],
    pub folds_per_episode: f64,
}

impl StepTrace {
    pub fn decisions(&self) -> u32 {
        self.action_counts.iter().sum()
    }

    /// Share of decisions that folded (partial or all).
    pub fn fold_frequency(&self) -> f64 {
        let d = self.decisions();
        if d == 0 {
            0.0
        } else {
            (self.action_counts[1] + self.action_counts[2]) as f64 / d as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub from_step: u32,
    pub to_step: u32,
    pub b_max_first: u64,
    pub mean_constrained_reward: f64,
    /// Fold decisions over all decisions in the window.
    pub fold_frequency: f64,
    pub decisions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub schedule: String,
    pub steps: Vec<StepTrace>,
    pub windows: Vec<(u32, u32)>,
    /// Final fold probabilities per remaining-budget decile `-5..=9`.
    pub final_policy: Vec<(i64, [f64; ACTIONS])>,
}

impl TrainingTrace {
    pub fn stage_summaries(&self) -> Vec<StageSummary> {
        self.windows
            .iter()
            .map(|&(from, to)| {
                let rows: Vec<&StepTrace> = self.steps.iter().filter(|s| s.step >= from && s.step <= to).collect();
                let decisions: u32 = rows.iter().map(|s| s.decisions()).sum();
                let folds: u32 = rows.iter().map(|s| s.action_counts[1] + s.action_counts[2]).sum();
                let n = rows.len().max(1) as f64;
                StageSummary {
                    from_step: from,
                    to_step: to,
                    b_max_first: rows.first().map_or(0, |s| s.b_max),
                    mean_constrained_reward: rows.iter().map(|s| s.mean_constrained_reward).sum::<f64>() / n,
                    fold_frequency: if decisions == 0 { 0.0 } else { folds as f64 / decisions as f64 },
                    decisions,
                }
            })
            .collect()
    }
}

/// Trains the tabular fold policy over the configured schedule.
pub fn train_toy_policy(cfg: &ToyConfig) -> Result<TrainingTrace, RlError> {
    train_toy_policy_with(cfg, |_| {})
}

/// Like [`train_toy_policy`], handing each step's trace to `on_step` as soon
/// as it is complete.
pub fn train_toy_policy_with(cfg: &ToyConfig, mut on_step: impl FnMut(&StepTrace)) -> Result<TrainingTrace, RlError> {
    cfg.validate()?;
    let env = |e: crate::environment::EnvError| RlError::Environment(format!("{e}"));
    let (corpus, pool) = generate_synthetic_corpus(cfg.seed, cfg.num_facts, cfg.filler_tokens_per_doc);
    let index = CorpusIndex::build(&corpus).map_err(env)?;
    let strategy = Strategy::budget_aware(PromptVariant::Budget);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0074_6f79);
    let mut logits: Logits = [[0.0; ACTIONS]; BUCKETS];
    let mut steps = Vec::new();

    for step in cfg.schedule.first_step()..=cfg.schedule.last_step() {
        let b_max = cfg.schedule.budget_at(step)?;
        let mut rollout_cfg = RolloutConfig::new(b_max.0);
        rollout_cfg.top_k = cfg.top_k;
        let mut grad: Logits = [[0.0; ACTIONS]; BUCKETS];
        let mut counts = [0u32; ACTIONS];
        let (mut reward_sum, mut constrained_sum, mut fold_sum) = (0.0, 0.0, 0u32);
        let episodes = (cfg.tasks_per_step * cfg.group_size) as f64;

        for _ in 0..cfg.tasks_per_step {
            let task = compose_task(&pool, cfg.objectives, rng.gen()).map_err(env)?;
            let mut constrained = Vec::with_capacity(cfg.group_size);
            let mut decisions = Vec::with_capacity(cfg.group_size);
            for _ in 0..cfg.group_size {
                let mut policy = ToyPolicy::new(&logits, rng.gen());
                let traj = run_episode(&task, &strategy, &mut policy, &index, &rollout_cfg)
                    .map_err(|e| RlError::Environment(format!("{e}")))?;
                let r = episode_reward(&traj.final_answers, &task);
                let rc = budget_constrained_reward(r, &traj.ctx_lens(), b_max);
                reward_sum += r;
                constrained_sum += rc;
                fold_sum += traj.compressions_used;
                for (_, a) in &policy.decisions {
                    counts[a.index()] += 1;
                }
                constrained.push(rc);
                decisions.push(policy.decisions);
            }
            let adv = group_advantages(&constrained, cfg.loss.advantage_epsilon)?;
            for (a, made) in adv.values.iter().zip(&decisions) {
                if made.is_empty() || *a == 0.0 {
                    continue;
                }
                let w = a / made.len() as f64;
                for &(b, action) in made {
                    let p = softmax(&logits[b]);
                    for k in 0..ACTIONS {
                        let indicator = if k == action.index() { 1.0 } else { 0.0 };
                        grad[b][k] += w * (indicator - p[k]);
                    }
                }
            }
        }

        for (row, g) in logits.iter_mut().zip(&grad) {
            for (x, gx) in row.iter_mut().zip(g) {
                *x += cfg.learning_rate * gx / episodes;
            }
        }
        let trace = StepTrace {
            step,
            b_max: b_max.0,
            mean_reward: reward_sum / episodes,
            mean_constrained_reward: constrained_sum / episodes,
            action_counts: counts,
            folds_per_episode: fold_sum as f64 / episodes,
        };
        on_step(&trace);
        steps.push(trace);
        if logits.iter().flatten().any(|x| !x.is_finite()) {
            return Err(RlError::Diverged { step });
        }
    }

    let final_policy = (0..BUCKETS).map(|b| (b as i64 + MIN_DECILE, softmax(&logits[b]))).collect();
    Ok(TrainingTrace { schedule: cfg.schedule.describe(), steps, windows: cfg.schedule.report_windows(), final_policy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::TokenCount;

    #[test]
    fn buckets_clamp() {
        assert_eq!(bucket(-100), 0);
        assert_eq!(bucket(-5), 0);
        assert_eq!(bucket(0), 5);
        assert_eq!(bucket(9), 14);
        assert_eq!(bucket(10), 14);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, -2.0, 700.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(softmax(&[0.0; 3]), [1.0 / 3.0; 3]);
    }

    #[test]
    fn short_run_is_deterministic() {
        let cfg = ToyConfig {
            schedule: BudgetSchedule::Static { b_max: TokenCount(4096), steps: 3 },
            num_facts: 20,
            filler_tokens_per_doc: 50,
            ..ToyConfig::default()
        };
        let a = train_toy_policy(&cfg).unwrap();
        assert_eq!(a, train_toy_policy(&cfg).unwrap());
        assert_eq!(a.steps.len(), 3);
        assert!(a.steps.iter().all(|s| (0.0..=1.0).contains(&s.mean_constrained_reward)));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(train_toy_policy(&ToyConfig { group_size: 1, ..ToyConfig::default() }).is_err());
        assert!(train_toy_policy(&ToyConfig { learning_rate: 0.0, ..ToyConfig::default() }).is_err());
    }
}

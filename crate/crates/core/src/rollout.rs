//! The multi-turn episode loop.
//!
//! Each turn: the policy sees the visible context and acts. A search result
//! is held back as a [`PendingObservation`]; the strategy's refine step runs
//! against the buffer and the pending length only; the fold is applied; then
//! the observation is unsealed and appended.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::budget::{render_unbudgeted_prompt, BudgetState, PendingObservation, PromptVariant, DEFAULT_SAFETY_MARGIN};
use crate::context::{BlockKind, ContextBuffer, FoldDirective};
use crate::environment::{ComposedTask, CorpusIndex, DEFAULT_TOP_K};
use crate::policy::{parse_agent_action, parse_fold_directive, AgentAction, Policy, PolicyError, PolicyRequest, DEFAULT_ANSWER_DELIMITER};
use crate::tokens::{TokenCount, Tokenizer};

pub const DEFAULT_COMPRESSION_CAP: u32 = 10;
pub const DEFAULT_TRIGGER_FRACTION: f64 = 0.9;
pub const DEFAULT_MAX_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Never folds.
    NoManagement,
    /// Folds everything into a policy-written summary once the current
    /// context reaches `trigger_fraction` of the usable limit.
    ReactiveSummary { trigger_fraction: f64, cap: u32 },
    /// Folds everything into a policy-written state on every search turn.
    ProactiveFixedState,
    /// Shows the policy a fold prompt before each observation is loaded.
    BudgetAware { prompt: PromptVariant, cap: u32 },
}

impl Strategy {
    pub fn reactive() -> Self {
        Strategy::ReactiveSummary { trigger_fraction: DEFAULT_TRIGGER_FRACTION, cap: DEFAULT_COMPRESSION_CAP }
    }

    pub fn budget_aware(prompt: PromptVariant) -> Self {
        Strategy::BudgetAware { prompt, cap: DEFAULT_COMPRESSION_CAP }
    }

    /// `None` means uncapped.
    pub fn cap(&self) -> Option<u32> {
        match *self {
            Strategy::ReactiveSummary { cap, .. } | Strategy::BudgetAware { cap, .. } => Some(cap),
            Strategy::NoManagement | Strategy::ProactiveFixedState => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Strategy::NoManagement => "no_management".into(),
            Strategy::ReactiveSummary { .. } => "reactive_summary".into(),
            Strategy::ProactiveFixedState => "proactive_fixed_state".into(),
            Strategy::BudgetAware { prompt: PromptVariant::Budget, .. } => "budget_aware".into(),
            Strategy::BudgetAware { prompt: PromptVariant::NoBudget, .. } => "budget_aware_no_budget".into(),
        }
    }

    pub fn validate(&self) -> Result<(), RolloutError> {
        if let Strategy::ReactiveSummary { trigger_fraction, .. } = *self {
            if !(trigger_fraction > 0.0 && trigger_fraction <= 1.0) {
                return Err(RolloutError::Config(format!("trigger_fraction {trigger_fraction} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Strategy {
    type Err = RolloutError;

    /// Parses a label; caps and thresholds take their defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "no_management" | "none" => Ok(Strategy::NoManagement),
            "reactive_summary" | "reactive" => Ok(Strategy::reactive()),
            "proactive_fixed_state" | "proactive" => Ok(Strategy::ProactiveFixedState),
            "budget_aware" => Ok(Strategy::budget_aware(PromptVariant::Budget)),
            "budget_aware_no_budget" => Ok(Strategy::budget_aware(PromptVariant::NoBudget)),
            other => Err(RolloutError::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RolloutError {
    #[error("invalid rollout config: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub max_model_len: TokenCount,
    pub safety_margin: TokenCount,
    /// Defaults to `2N + 6` for an `N`-objective task.
    pub max_turns: Option<u32>,
    pub top_k: usize,
    pub tokenizer: Tokenizer,
    pub answer_delimiter: String,
    /// Turn unparseable policy output into an errored episode instead of a
    /// logged fallback.
    pub strict: bool,
    pub max_retries: u32,
    pub seed: u64,
}

impl RolloutConfig {
    pub fn new(max_model_len: u64) -> Self {
        RolloutConfig {
            max_model_len: TokenCount(max_model_len),
            safety_margin: DEFAULT_SAFETY_MARGIN,
            max_turns: None,
            top_k: DEFAULT_TOP_K,
            tokenizer: Tokenizer::whitespace(),
            answer_delimiter: DEFAULT_ANSWER_DELIMITER.into(),
            strict: false,
            max_retries: DEFAULT_MAX_RETRIES,
            seed: 0,
        }
    }

    pub fn turn_limit(&self, objectives: usize) -> u32 {
        self.max_turns.unwrap_or(2 * objectives as u32 + 6)
    }

    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.max_model_len <= self.safety_margin {
            return Err(RolloutError::Config(format!(
                "max_model_len {} must exceed safety margin {}",
                self.max_model_len, self.safety_margin
            )));
        }
        if self.max_turns == Some(0) {
            return Err(RolloutError::Config("max_turns must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(RolloutError::Config("top_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Answered,
    MaxTurns,
    Errored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u32,
    pub action: AgentAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_parse_error: Option<String>,
    /// Blocks hidden from the policy because the buffer exceeded the model
    /// window when it acted.
    pub hidden_blocks: u32,
    pub obs_len: Option<TokenCount>,
    pub budget: Option<BudgetState>,
    pub fold_directive: Option<FoldDirective>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_parse_error: Option<String>,
    pub cap_exceeded: bool,
    pub pre_fold_reads: u32,
    pub ctx_len_after: TokenCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRef {
    pub seed: u64,
    pub questions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: TaskRef,
    pub strategy: Strategy,
    pub max_model_len: TokenCount,
    pub safety_margin: TokenCount,
    pub turns: Vec<TurnRecord>,
    pub compressions_used: u32,
    pub peak_tokens: TokenCount,
    pub generated_tokens: TokenCount,
    pub final_answers: Vec<String>,
    pub status: TrajectoryStatus,
    pub budget_violated: bool,
    pub policy_retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trajectory {
    pub fn ctx_lens(&self) -> Vec<TokenCount> {
        self.turns.iter().map(|t| t.ctx_len_after).collect()
    }

    pub fn pre_fold_reads(&self) -> u32 {
        self.turns.iter().map(|t| t.pre_fold_reads).sum()
    }

    /// Recomputes the summary counters from the turn records.
    pub fn check_consistency(&self) -> Result<(), String> {
        let peak = self.turns.iter().map(|t| t.ctx_len_after).max().unwrap_or(TokenCount::ZERO);
        if peak != self.peak_tokens {
            return Err(format!("peak_tokens {} but turns give {}", self.peak_tokens, peak));
        }
        let folds = self
            .turns
            .iter()
            .filter(|t| t.fold_directive.as_ref().is_some_and(|d| !d.is_none()))
            .count() as u32;
        if folds != self.compressions_used {
            return Err(format!("compressions_used {} but turns give {}", self.compressions_used, folds));
        }
        if let Some(cap) = self.strategy.cap() {
            if folds > cap {
                return Err(format!("{folds} compressions exceed cap {cap}"));
            }
        }
        if detect_violation(self, self.max_model_len) != self.budget_violated {
            return Err("budget_violated flag disagrees with turn lengths".into());
        }
        Ok(())
    }
}

/// `true` iff some turn ended with more than `b_max` tokens of context.
pub fn detect_violation(trajectory: &Trajectory, b_max: TokenCount) -> bool {
    trajectory.turns.iter().any(|t| t.ctx_len_after > b_max)
}

struct Refinement {
    directive: FoldDirective,
    parse_error: Option<String>,
    cap_exceeded: bool,
}

enum Abort {
    Policy(PolicyError),
    Other(String),
}

struct Episode<'a, P: ?Sized> {
    policy: &'a mut P,
    cfg: &'a RolloutConfig,
    buffer: ContextBuffer,
    generated: TokenCount,
    retries: u32,
    compressions: u32,
}

impl<P: Policy + ?Sized> Episode<'_, P> {
    fn refine(&mut self, strategy: &Strategy, state: &BudgetState) -> Result<Refinement, Abort> {
        let keep = |parse_error: Option<String>, cap_exceeded: bool| Refinement {
            directive: FoldDirective::none(),
            parse_error,
            cap_exceeded,
        };
        match *strategy {
            Strategy::NoManagement => Ok(keep(None, false)),
            Strategy::ReactiveSummary { trigger_fraction, cap } => {
                let triggered =
                    state.current_ctx_len.0 as f64 >= trigger_fraction * state.usable_limit.0 as f64;
                if !triggered {
                    return Ok(keep(None, false));
                }
                if self.compressions >= cap {
                    return Ok(keep(None, true));
                }
                self.summarize_all()
            }
            Strategy::ProactiveFixedState => self.summarize_all(),
            Strategy::BudgetAware { prompt, cap } => {
                let ids = self.buffer.ids();
                let text = {
                    let view = self.buffer.window(self.cfg.max_model_len);
                    let rendered = match prompt {
                        PromptVariant::Budget => state.render_prompt(),
                        PromptVariant::NoBudget => render_unbudgeted_prompt(),
                    };
                    let budget = (prompt == PromptVariant::Budget).then_some(state);
                    let request = PolicyRequest::Fold { context: view, prompt: &rendered, budget, ids: &ids };
                    respond_with_retries(&mut *self.policy, &request, self.cfg.max_retries, &mut self.retries)
                        .map_err(Abort::Policy)?
                };
                self.generated += self.cfg.tokenizer.count(&text);
                let directive = match parse_fold_directive(&text, &ids) {
                    Ok(d) => d,
                    Err(e) if self.cfg.strict => return Err(Abort::Other(format!("fold parse error: {e}"))),
                    Err(e) => return Ok(keep(Some(e.to_string()), false)),
                };
                if !directive.is_none() && self.compressions >= cap {
                    return Ok(keep(None, true));
                }
                Ok(Refinement { directive, parse_error: None, cap_exceeded: false })
            }
        }
    }

    fn summarize_all(&mut self) -> Result<Refinement, Abort> {
        let text = {
            let request = PolicyRequest::Summarize { context: self.buffer.window(self.cfg.max_model_len) };
            respond_with_retries(&mut *self.policy, &request, self.cfg.max_retries, &mut self.retries)
                .map_err(Abort::Policy)?
        };
        self.generated += self.cfg.tokenizer.count(&text);
        if text.trim().is_empty() {
            if self.cfg.strict {
                return Err(Abort::Other("empty summary".into()));
            }
            return Ok(Refinement {
                directive: FoldDirective::none(),
                parse_error: Some("empty summary".into()),
                cap_exceeded: false,
            });
        }
        Ok(Refinement { directive: FoldDirective::all(text), parse_error: None, cap_exceeded: false })
    }
}

/// Runs one episode to completion. Only an invalid configuration is an
/// `Err`; runtime failures produce a trajectory with status `Errored`.
pub fn run_episode<P: Policy + ?Sized>(
    task: &ComposedTask,
    strategy: &Strategy,
    policy: &mut P,
    index: &CorpusIndex,
    cfg: &RolloutConfig,
) -> Result<Trajectory, RolloutError> {
    cfg.validate()?;
    strategy.validate()?;
    let tokenizer = cfg.tokenizer.clone();
    let mut ep = Episode {
        policy,
        cfg,
        buffer: ContextBuffer::new(task.composite_prompt.clone(), tokenizer.clone()),
        generated: TokenCount::ZERO,
        retries: 0,
        compressions: 0,
    };
    let mut turns: Vec<TurnRecord> = Vec::new();
    let mut final_answers = Vec::new();
    let mut status = TrajectoryStatus::MaxTurns;
    let mut error = None;

    for turn in 1..=cfg.turn_limit(task.objectives.len()) {
        let acted = {
            let view = ep.buffer.window(cfg.max_model_len);
            let hidden = (ep.buffer.len() - view.blocks().len()) as u32;
            respond_with_retries(&mut *ep.policy, &PolicyRequest::Act { context: view }, cfg.max_retries, &mut ep.retries)
                .map(|t| (t, hidden))
        };
        let (text, hidden_blocks) = match acted {
            Ok(v) => v,
            Err(e) => {
                error = Some(abort_message(Abort::Policy(e)));
                status = TrajectoryStatus::Errored;
                break;
            }
        };
        ep.generated += tokenizer.count(&text);
        let (action, action_parse_error) = match parse_agent_action(&text, &cfg.answer_delimiter) {
            Ok(a) => (a, None),
            Err(e) if cfg.strict => {
                error = Some(format!("action parse error: {e}"));
                status = TrajectoryStatus::Errored;
                break;
            }
            Err(e) => (AgentAction::Continue { raw: text.clone() }, Some(e.to_string())),
        };
        if !text.trim().is_empty() {
            ep.buffer.append(BlockKind::AssistantTurn, text).expect("non-empty text");
        }
        let mut record = TurnRecord {
            turn,
            action: action.clone(),
            action_parse_error,
            hidden_blocks,
            obs_len: None,
            budget: None,
            fold_directive: None,
            fold_parse_error: None,
            cap_exceeded: false,
            pre_fold_reads: 0,
            ctx_len_after: TokenCount::ZERO,
        };

        match action {
            AgentAction::Answer { answers } => {
                record.ctx_len_after = ep.buffer.token_len();
                turns.push(record);
                final_answers = answers;
                status = TrajectoryStatus::Answered;
                break;
            }
            AgentAction::Continue { .. } => {
                record.ctx_len_after = ep.buffer.token_len();
                turns.push(record);
            }
            AgentAction::Search { query } => {
                let result = match index.search(&query, cfg.top_k, &tokenizer) {
                    Ok(r) => r,
                    Err(e) => {
                        error = Some(format!("search failed: {e}"));
                        status = TrajectoryStatus::Errored;
                        break;
                    }
                };
                let pending = PendingObservation::new(result.rendered_observation, &tokenizer);
                let state = BudgetState::compute(&ep.buffer, &pending, cfg.max_model_len, cfg.safety_margin)
                    .expect("validated config");
                let refinement = match ep.refine(strategy, &state) {
                    Ok(r) => r,
                    Err(abort) => {
                        error = Some(abort_message(abort));
                        status = TrajectoryStatus::Errored;
                        break;
                    }
                };
                let mut directive = refinement.directive;
                let mut fold_parse_error = refinement.parse_error;
                let receipt = match ep.buffer.apply_fold(&directive) {
                    Ok(r) => r,
                    Err(e) => {
                        fold_parse_error = Some(e.to_string());
                        directive = FoldDirective::none();
                        ep.buffer.apply_fold(&directive).expect("identity fold")
                    }
                };
                if !directive.is_none() {
                    ep.compressions += 1;
                }
                let (content, early_reads) = pending.release(receipt);
                if let Err(e) = ep.buffer.append_observation(content) {
                    error = Some(format!("empty search result: {e}"));
                    status = TrajectoryStatus::Errored;
                    break;
                }
                record.obs_len = Some(state.pending_obs_len);
                record.budget = Some(state);
                record.fold_directive = Some(directive);
                record.fold_parse_error = fold_parse_error;
                record.cap_exceeded = refinement.cap_exceeded;
                record.pre_fold_reads = early_reads;
                record.ctx_len_after = ep.buffer.token_len();
                turns.push(record);
            }
        }
    }

    let peak_tokens = turns.iter().map(|t| t.ctx_len_after).max().unwrap_or(TokenCount::ZERO);
    let budget_violated = turns.iter().any(|t| t.ctx_len_after > cfg.max_model_len);
    Ok(Trajectory {
        task: TaskRef { seed: task.seed, questions: task.objectives.iter().map(|o| o.question.clone()).collect() },
        strategy: *strategy,
        max_model_len: cfg.max_model_len,
        safety_margin: cfg.safety_margin,
        turns,
        compressions_used: ep.compressions,
        peak_tokens,
        generated_tokens: ep.generated,
        final_answers,
        status,
        budget_violated,
        policy_retries: ep.retries,
        error,
    })
}

fn respond_with_retries<P: Policy + ?Sized>(
    policy: &mut P,
    request: &PolicyRequest<'_>,
    max_retries: u32,
    retries: &mut u32,
) -> Result<String, PolicyError> {
    let mut attempt = 0;
    loop {
        match policy.respond(request) {
            Err(e) if e.is_retryable() && attempt < max_retries => {
                attempt += 1;
                *retries += 1;
            }
            other => return other,
        }
    }
}

fn abort_message(abort: Abort) -> String {
    match abort {
        Abort::Policy(e) => format!("policy failed: {e}"),
        Abort::Other(s) => s,
    }
}

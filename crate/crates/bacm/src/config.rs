//! TOML run configuration shared by `run`, `bench` and `train-sim`.

use std::path::{Path, PathBuf};

use bacm_core::budget::DEFAULT_SAFETY_MARGIN;
use bacm_core::environment::DEFAULT_TOP_K;
use bacm_core::rl::{BudgetSchedule, LossConfig, ToyConfig};
use bacm_core::rollout::{
    RolloutConfig, Strategy, DEFAULT_COMPRESSION_CAP, DEFAULT_MAX_RETRIES, DEFAULT_TRIGGER_FRACTION,
};
use bacm_core::{PromptVariant, TokenCount, TokenScheme, Tokenizer};
use serde::{Deserialize, Serialize};

use crate::error::AppError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Episodes per (strategy, budget, objectives) cell.
    pub episodes: usize,
    /// Worker threads for `bench`; 0 means available parallelism.
    pub workers: usize,
    pub corpus: CorpusConfig,
    pub rollout: RolloutSection,
    pub policy: PolicyConfig,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("bacm-out"),
            seed: 0,
            episodes: 1,
            workers: 0,
            corpus: CorpusConfig::default(),
            rollout: RolloutSection::default(),
            policy: PolicyConfig::default(),
            train: TrainSection::default(),
        }
    }
}

/// Either both file paths, or neither (a synthetic corpus is generated).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub facts: usize,
    pub filler_tokens: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { seed: 0, facts: 400, filler_tokens: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    pub max_model_len: Vec<u64>,
    pub objectives: Vec<usize>,
    pub strategies: Vec<String>,
    pub prompt: PromptVariant,
    pub safety_margin: u64,
    pub top_k: usize,
    pub tokenizer: String,
    pub answer_delimiter: String,
    pub strict: bool,
    pub max_retries: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_turns: Option<u32>,
    pub compression_cap: u32,
    pub trigger_fraction: f64,
}

impl Default for RolloutSection {
    fn default() -> Self {
        RolloutSection {
            max_model_len: vec![8192],
            objectives: vec![2],
            strategies: vec!["budget_aware".into()],
            prompt: PromptVariant::Budget,
            safety_margin: DEFAULT_SAFETY_MARGIN.0,
            top_k: DEFAULT_TOP_K,
            tokenizer: "whitespace".into(),
            answer_delimiter: "\n".into(),
            strict: false,
            max_retries: DEFAULT_MAX_RETRIES,
            max_turns: None,
            compression_cap: DEFAULT_COMPRESSION_CAP,
            trigger_fraction: DEFAULT_TRIGGER_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Heuristic,
    Oracle,
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// JSON file with `act`, `fold` and `summarize` output queues.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: PolicyKind::Heuristic,
            script: None,
            endpoint: None,
            model: None,
            temperature: 0.0,
            max_tokens: 1024,
            timeout_secs: 120,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// `curriculum`, `static:B[:STEPS]` or `random:B1,B2[:STEPS]`.
    pub schedule: String,
    pub steps: u32,
    pub group_size: usize,
    pub tasks_per_step: usize,
    pub learning_rate: f64,
    pub objectives: usize,
    pub facts: usize,
    pub filler_tokens: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub advantage_epsilon: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let toy = ToyConfig::default();
        let loss = LossConfig::default();
        TrainSection {
            schedule: "curriculum".into(),
            steps: 300,
            group_size: toy.group_size,
            tasks_per_step: toy.tasks_per_step,
            learning_rate: toy.learning_rate,
            objectives: toy.objectives,
            facts: toy.num_facts,
            filler_tokens: toy.filler_tokens_per_doc,
            clip_epsilon: loss.clip_epsilon,
            kl_beta: loss.kl_beta,
            advantage_epsilon: loss.advantage_epsilon,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, AppError> {
        toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| AppError::MissingInput { what: "config file", path: path.into() })?;
        Self::parse(&text)
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config is always representable as TOML")
    }

    pub fn tokenizer(&self) -> Result<Tokenizer, AppError> {
        let scheme: TokenScheme = self.rollout.tokenizer.parse().map_err(|e| AppError::Config(format!("{e}")))?;
        match scheme {
            TokenScheme::External(name) => {
                Err(AppError::Config(format!("tokenizer `{name}` is not available from the command line")))
            }
            s => Ok(Tokenizer::new(s).map_err(|e| AppError::Config(format!("{e}")))?),
        }
    }

    /// Resolves the strategy labels, applying the prompt variant and caps.
    pub fn strategies(&self) -> Result<Vec<Strategy>, AppError> {
        self.rollout
            .strategies
            .iter()
            .map(|label| {
                let s: Strategy = label.parse().map_err(|e| AppError::Config(format!("{e}")))?;
                let r = &self.rollout;
                let s = match s {
                    Strategy::ReactiveSummary { .. } => {
                        Strategy::ReactiveSummary { trigger_fraction: r.trigger_fraction, cap: r.compression_cap }
                    }
                    Strategy::BudgetAware { prompt, .. } => {
                        let prompt = if label.replace('-', "_") == "budget_aware" { r.prompt } else { prompt };
                        Strategy::BudgetAware { prompt, cap: r.compression_cap }
                    }
                    other => other,
                };
                s.validate().map_err(|e| AppError::Config(format!("{e}")))?;
                Ok(s)
            })
            .collect()
    }

    pub fn rollout_config(&self, max_model_len: u64) -> Result<RolloutConfig, AppError> {
        let r = &self.rollout;
        let mut cfg = RolloutConfig::new(max_model_len);
        cfg.safety_margin = TokenCount(r.safety_margin);
        cfg.max_turns = r.max_turns;
        cfg.top_k = r.top_k;
        cfg.tokenizer = self.tokenizer()?;
        cfg.answer_delimiter = r.answer_delimiter.clone();
        cfg.strict = r.strict;
        cfg.max_retries = r.max_retries;
        cfg.seed = self.seed;
        cfg.validate().map_err(|e| AppError::Config(format!("{e}")))?;
        Ok(cfg)
    }

    pub fn toy_config(&self) -> Result<ToyConfig, AppError> {
        let t = &self.train;
        let schedule = BudgetSchedule::parse(&t.schedule, t.steps, self.seed).map_err(|e| AppError::Config(format!("{e}")))?;
        let cfg = ToyConfig {
            schedule,
            group_size: t.group_size,
            tasks_per_step: t.tasks_per_step,
            learning_rate: t.learning_rate,
            objectives: t.objectives,
            num_facts: t.facts,
            filler_tokens_per_doc: t.filler_tokens,
            top_k: self.rollout.top_k,
            loss: LossConfig { clip_epsilon: t.clip_epsilon, kl_beta: t.kl_beta, advantage_epsilon: t.advantage_epsilon },
            seed: self.seed,
        };
        cfg.validate().map_err(|e| AppError::Config(format!("{e}")))?;
        Ok(cfg)
    }

    /// Checks everything `run` and `bench` need before any work starts.
    pub fn validate_rollout(&self) -> Result<(), AppError> {
        let r = &self.rollout;
        if r.max_model_len.is_empty() || r.objectives.is_empty() || r.strategies.is_empty() {
            return Err(AppError::Config("max_model_len, objectives and strategies must be non-empty".into()));
        }
        if r.objectives.contains(&0) {
            return Err(AppError::Config("objectives must be positive".into()));
        }
        if self.episodes == 0 {
            return Err(AppError::Config("episodes must be positive".into()));
        }
        for &b in &r.max_model_len {
            self.rollout_config(b)?;
        }
        self.strategies()?;
        match (&self.corpus.path, &self.corpus.pool) {
            (Some(c), Some(p)) => {
                for (what, path) in [("corpus file", c), ("QA pool file", p)] {
                    if !path.is_file() {
                        return Err(AppError::MissingInput { what, path: path.clone() });
                    }
                }
            }
            (None, None) => {}
            _ => return Err(AppError::Config("corpus.path and corpus.pool must be given together".into())),
        }
        let p = &self.policy;
        match p.kind {
            PolicyKind::Scripted => match &p.script {
                None => return Err(AppError::Config("policy.kind = scripted needs policy.script".into())),
                Some(s) if !s.is_file() => return Err(AppError::MissingInput { what: "policy script", path: s.clone() }),
                Some(_) => {}
            },
            PolicyKind::Remote => {
                if p.endpoint.is_none() || p.model.is_none() {
                    return Err(AppError::Config("policy.kind = remote needs policy.endpoint and policy.model".into()));
                }
                if p.max_in_flight == 0 {
                    return Err(AppError::Config("policy.max_in_flight must be positive".into()));
                }
            }
            PolicyKind::Heuristic | PolicyKind::Oracle => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn full_round_trips() {
        let mut c = RunConfig::default();
        c.corpus.path = Some("c.jsonl".into());
        c.corpus.pool = Some("p.jsonl".into());
        c.rollout.max_model_len = vec![4096, 8192, 16384];
        c.rollout.strategies = vec!["no_management".into(), "budget_aware".into()];
        c.rollout.prompt = PromptVariant::NoBudget;
        c.rollout.max_turns = Some(12);
        c.policy.kind = PolicyKind::Remote;
        c.policy.endpoint = Some("http://localhost:1".into());
        c.policy.model = Some("m".into());
        c.train.schedule = "random:4096,8192".into();
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::parse("seed = 7\n[rollout]\nmax_model_len = [4096]\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.rollout.max_model_len, vec![4096]);
        assert_eq!(c.rollout.top_k, DEFAULT_TOP_K);
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(AppError::Config(_))));
    }

    #[test]
    fn prompt_variant_applies_to_budget_aware() {
        let mut c = RunConfig::default();
        c.rollout.prompt = PromptVariant::NoBudget;
        c.rollout.strategies = vec!["budget_aware".into(), "budget_aware_no_budget".into(), "reactive".into()];
        c.rollout.compression_cap = 3;
        let s = c.strategies().unwrap();
        assert_eq!(s[0], Strategy::BudgetAware { prompt: PromptVariant::NoBudget, cap: 3 });
        assert_eq!(s[1], Strategy::BudgetAware { prompt: PromptVariant::NoBudget, cap: 3 });
        assert_eq!(s[2].cap(), Some(3));
    }

    #[test]
    fn budget_must_exceed_margin() {
        let mut c = RunConfig::default();
        c.rollout.max_model_len = vec![1000];
        assert!(matches!(c.validate_rollout(), Err(AppError::Config(_))));
    }
}

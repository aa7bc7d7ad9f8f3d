//! Budget-aware context management for multi-turn, tool-using agents.
//!
//! The crate is `no_std` (with `alloc`) and contains every piece of logic that
//! does not touch the outside world:
//!
//! - [`tokens`]: deterministic, pluggable token counting.
//! - [`context`]: the commit-block buffer and its fold semantics.
//! - [`budget`]: budget snapshots, deferred observations, and prompt rendering.
//! - [`policy`]: model-output parsers, heuristic and scripted policies.
//! - [`environment`]: multi-objective task composition, BM25 retrieval and a
//!   synthetic corpus generator.
//! - [`rollout`]: the episode loop hosting the four context strategies.
//! - [`rl`]: budget-constrained rewards, group-relative advantages, the
//!   clipped token-level objective, curricula, and a toy trainer.
//! - [`metrics`]: token-level F1, episode metrics, aggregation, judge prompts.
//!
//! IO, the remote policy backend, and the CLI live in the companion `bacm`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod budget;
pub mod context;
pub mod environment;
pub mod metrics;
pub mod policy;
pub mod rl;
pub mod rollout;
pub mod text;
pub mod tokens;

pub use budget::{BudgetState, PendingObservation, PromptVariant};
pub use context::{BlockKind, CommitBlock, CommitId, ContextBuffer, ContextView, FoldDirective, FoldMode};
pub use environment::{ComposedTask, Corpus, CorpusIndex, Document, QAItem, RetrievalResult};
pub use metrics::{AggregateReport, EpisodeMetrics};
pub use policy::{AgentAction, HeuristicPolicy, Policy, PolicyError, PolicyRequest, ScriptedPolicy};
pub use rollout::{RolloutConfig, Strategy, Trajectory, TurnRecord};
pub use tokens::{TokenCount, TokenScheme, Tokenizer};

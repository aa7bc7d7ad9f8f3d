//! Budget-constrained policy-gradient arithmetic, budget curricula, and a
//! toy trainer that exercises them without a language model.

pub mod curriculum;
pub mod objective;
pub mod toy;

pub use curriculum::{curriculum_budget, BudgetSchedule, CurriculumSchedule, Stage};
pub use objective::{
    budget_constrained_reward, clipped_pg_term, episode_reward, group_advantages, kl_penalty, pg_objective,
    regularized_objective, AdvantageVector, KlEstimator, LossConfig, RlError, TokenLogRatios,
};
pub use toy::{train_toy_policy, train_toy_policy_with, StageSummary, StepTrace, ToyAction, ToyConfig, TrainingTrace};

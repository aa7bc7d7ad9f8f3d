//! Reward gating, group-relative advantages, the clipped token-level
//! objective and the KL regularizer.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::environment::ComposedTask;
use crate::metrics::objective_f1s;
use crate::tokens::TokenCount;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RlError {
    #[error("group-relative advantages need at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("rollout {0} has no tokens")]
    DegenerateRollout(usize),
    #[error("{what}: expected {expected}, got {found}")]
    SizeMismatch { what: &'static str, expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("step {step} is outside the schedule (steps {first}..={last})")]
    StepOutOfRange { step: u32, first: u32, last: u32 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(alloc::string::String),
    #[error("invalid loss config: {0}")]
    InvalidConfig(&'static str),
    #[error("training diverged at step {step}")]
    Diverged { step: u32 },
    #[error("environment error: {0}")]
    Environment(alloc::string::String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub advantage_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { clip_epsilon: 0.2, kl_beta: 0.001, advantage_epsilon: 1e-6 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(RlError::InvalidConfig("clip_epsilon must be in (0, 1)"));
        }
        if self.kl_beta < 0.0 || !self.kl_beta.is_finite() {
            return Err(RlError::InvalidConfig("kl_beta must be >= 0"));
        }
        if self.advantage_epsilon < 0.0 || !self.advantage_epsilon.is_finite() {
            return Err(RlError::InvalidConfig("advantage_epsilon must be >= 0"));
        }
        Ok(())
    }
}

/// Mean per-objective token F1 of the final answers; in `[0, 1]`.
pub fn episode_reward(final_answers: &[alloc::string::String], task: &ComposedTask) -> f64 {
    let f1s = objective_f1s(final_answers, task);
    if f1s.is_empty() {
        return 0.0;
    }
    f1s.iter().sum::<f64>() / f1s.len() as f64
}

/// `reward` if every context length is within `b_max` (inclusive), else 0.
pub fn budget_constrained_reward(reward: f64, ctx_lens: &[TokenCount], b_max: TokenCount) -> f64 {
    if ctx_lens.iter().all(|&l| l <= b_max) {
        reward
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub epsilon: f64,
}

impl AdvantageVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `(R̃_i - mean) / (std + ε)` with the population standard deviation.
pub fn group_advantages(constrained_rewards: &[f64], epsilon: f64) -> Result<AdvantageVector, RlError> {
    let n = constrained_rewards.len();
    if n < 2 {
        return Err(RlError::GroupTooSmall(n));
    }
    if constrained_rewards.iter().any(|r| !r.is_finite()) {
        return Err(RlError::NonFinite("rewards"));
    }
    if constrained_rewards.iter().all(|r| *r == constrained_rewards[0]) {
        return Ok(AdvantageVector { values: alloc::vec![0.0; n], epsilon });
    }
    let mean = constrained_rewards.iter().sum::<f64>() / n as f64;
    let var = constrained_rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    let std = libm::sqrt(var);
    let values = constrained_rewards
        .iter()
        .map(|r| (r - mean) / (std + epsilon))
        .collect();
    Ok(AdvantageVector { values, epsilon })
}

/// `min(r·A, clip(r, 1-ε, 1+ε)·A)`.
pub fn clipped_pg_term(ratio: f64, advantage: f64, clip_epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Per-token `log π_θ - log π_old` for one rollout, grouped by turn.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenLogRatios {
    pub turns: Vec<Vec<f64>>,
}

impl TokenLogRatios {
    pub fn new(turns: Vec<Vec<f64>>) -> Self {
        TokenLogRatios { turns }
    }

    pub fn total_tokens(&self) -> usize {
        self.turns.iter().map(Vec::len).sum()
    }
}

/// Group mean of per-rollout, token-normalized clipped terms, with each
/// rollout's advantage broadcast to all of its tokens.
pub fn pg_objective(group: &[TokenLogRatios], advantages: &AdvantageVector, cfg: &LossConfig) -> Result<f64, RlError> {
    if group.len() != advantages.values.len() {
        return Err(RlError::SizeMismatch { what: "advantages", expected: group.len(), found: advantages.values.len() });
    }
    if group.is_empty() {
        return Err(RlError::GroupTooSmall(0));
    }
    let mut total = 0.0;
    for (i, (rollout, &adv)) in group.iter().zip(&advantages.values).enumerate() {
        let tokens = rollout.total_tokens();
        if tokens == 0 {
            return Err(RlError::DegenerateRollout(i));
        }
        let sum: f64 = rollout
            .turns
            .iter()
            .flatten()
            .map(|&lr| clipped_pg_term(libm::exp(lr), adv, cfg.clip_epsilon))
            .sum();
        total += sum / tokens as f64;
    }
    let value = total / group.len() as f64;
    if !value.is_finite() {
        return Err(RlError::NonFinite("objective"));
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    /// `exp(Δ) - Δ - 1`, non-negative.
    #[default]
    NonNegative,
    /// `-Δ`, unbiased but can be negative.
    Linear,
}

/// Mean per-token KL estimate with `Δ = log π_ref - log π_θ`.
pub fn kl_penalty(logp_theta: &[f64], logp_ref: &[f64], estimator: KlEstimator) -> Result<f64, RlError> {
    if logp_theta.len() != logp_ref.len() {
        return Err(RlError::SizeMismatch { what: "log-prob sequences", expected: logp_theta.len(), found: logp_ref.len() });
    }
    if logp_theta.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = logp_theta
        .iter()
        .zip(logp_ref)
        .map(|(t, r)| {
            let delta = r - t;
            match estimator {
                KlEstimator::NonNegative => libm::expm1(delta) - delta,
                KlEstimator::Linear => -delta,
            }
        })
        .sum();
    Ok(sum / logp_theta.len() as f64)
}

/// `L_PG - β · KL`.
pub fn regularized_objective(pg: f64, kl: f64, beta: f64) -> f64 {
    pg - beta * kl
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{ComposedTask, QAItem};
    use alloc::string::String;
    use alloc::vec;
    use proptest::prelude::*;

    fn t(v: u64) -> TokenCount {
        TokenCount(v)
    }

    #[test]
    fn rewards() {
        let task = ComposedTask::new(vec![QAItem::new("q1", "Paris"), QAItem::new("q2", "the big red dog")], 0).unwrap();
        assert_eq!(episode_reward(&["Paris".into(), "big red dog".into()], &task), 1.0);
        assert_eq!(episode_reward(&[], &task), 0.0);
        // F1("big red", "big red dog") = 2·1·(2/3)/(1+2/3) = 0.8
        let r = episode_reward(&["Paris".into(), "big red".into()], &task);
        assert!((r - 0.9).abs() < 1e-12);
        let task2 = ComposedTask::new(vec![QAItem::new("a", "x"), QAItem::new("b", "one two three four five six seven eight nine ten")], 0).unwrap();
        // 6 of 10 gold tokens predicted: P=1, R=0.6, F1=0.75
        let half: String = "one two three four five six".into();
        assert!((episode_reward(&["x".into(), half], &task2) - 0.875).abs() < 1e-12);
    }

    #[test]
    fn reward_gate() {
        assert_eq!(budget_constrained_reward(0.9, &[t(10), t(100)], t(100)), 0.9);
        assert_eq!(budget_constrained_reward(0.9, &[t(10), t(101)], t(100)), 0.0);
        assert_eq!(budget_constrained_reward(0.9, &[], t(100)), 0.9);
    }

    #[test]
    fn advantages() {
        assert_eq!(group_advantages(&[0.5, 0.5, 0.5], 1e-6).unwrap().values, vec![0.0; 3]);
        let a = group_advantages(&[1.0, 0.0, 0.5], 1e-6).unwrap();
        // mean 0.5, population std sqrt(1/6)
        let expected = 0.5 / (libm::sqrt(1.0 / 6.0) + 1e-6);
        assert!((a.values[0] - expected).abs() < 1e-12);
        assert!((a.values[1] + expected).abs() < 1e-12);
        assert_eq!(a.values[2], 0.0);
        assert!((a.values[0] - 1.2247).abs() < 1e-4);
        assert_eq!(group_advantages(&[1.0], 1e-6), Err(RlError::GroupTooSmall(1)));
        assert!(group_advantages(&[1.0, f64::NAN], 1e-6).is_err());
    }

    #[test]
    fn clip_terms() {
        assert!((clipped_pg_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_pg_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clipped_pg_term(1.0, 0.37, 0.1), 0.37);
        assert_eq!(clipped_pg_term(0.5, 1.0, 0.2), 0.5);
        assert!((clipped_pg_term(1.5, -1.0, 0.2) + 1.5).abs() < 1e-15);
    }

    #[test]
    fn objective_examples() {
        let cfg = LossConfig::default();
        let single = [TokenLogRatios::new(vec![vec![0.0]])];
        let adv = AdvantageVector { values: vec![0.5], epsilon: 1e-6 };
        assert_eq!(pg_objective(&single, &adv, &cfg), Ok(0.5));
        let group = [TokenLogRatios::new(vec![vec![0.1, -0.2]]), TokenLogRatios::new(vec![vec![0.3], vec![0.0]])];
        let zero = group_advantages(&[0.7, 0.7], 1e-6).unwrap();
        assert_eq!(pg_objective(&group, &zero, &cfg), Ok(0.0));
        let empty = [TokenLogRatios::new(vec![vec![]]), TokenLogRatios::new(vec![vec![0.0]])];
        assert_eq!(pg_objective(&empty, &zero, &cfg), Err(RlError::DegenerateRollout(0)));
        assert!(matches!(pg_objective(&group[..1], &zero, &cfg), Err(RlError::SizeMismatch { .. })));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_penalty(&[-1.0, -2.0], &[-1.0, -2.0], KlEstimator::NonNegative), Ok(0.0));
        let ln2 = core::f64::consts::LN_2;
        let k = kl_penalty(&[0.0], &[ln2], KlEstimator::NonNegative).unwrap();
        assert!((k - (2.0 - ln2 - 1.0)).abs() < 1e-15);
        assert!((k - 0.3069).abs() < 1e-4);
        assert!((kl_penalty(&[0.0], &[ln2], KlEstimator::Linear).unwrap() + ln2).abs() < 1e-15);
        assert!(kl_penalty(&[0.0], &[], KlEstimator::NonNegative).is_err());
        assert!((regularized_objective(0.5, 0.3, 0.001) - 0.4997).abs() < 1e-15);
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig { clip_epsilon: 1.0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { kl_beta: -0.1, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn advantage_invariants(r in proptest::collection::vec(0.0f64..1.0, 2..9), c in 0.1f64..10.0) {
            let a = group_advantages(&r, 0.0).unwrap();
            let mean_a = a.values.iter().sum::<f64>() / a.len() as f64;
            prop_assert!(mean_a.abs() < 1e-9);
            let scaled: Vec<f64> = r.iter().map(|x| x * c).collect();
            let b = group_advantages(&scaled, 0.0).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn reward_gate_is_idempotent_and_monotone(
            r in 0.0f64..1.0,
            lens in proptest::collection::vec(0u64..10_000, 0..10),
            b1 in 0u64..10_000,
            extra in 0u64..5_000,
        ) {
            let lens: Vec<TokenCount> = lens.into_iter().map(TokenCount).collect();
            let once = budget_constrained_reward(r, &lens, TokenCount(b1));
            prop_assert_eq!(budget_constrained_reward(once, &lens, TokenCount(b1)), once);
            prop_assert!(budget_constrained_reward(r, &lens, TokenCount(b1 + extra)) >= once);
        }

        #[test]
        fn kl_non_negative(t in proptest::collection::vec(-10.0f64..0.0, 1..20), d in proptest::collection::vec(-3.0f64..3.0, 20)) {
            let r: Vec<f64> = t.iter().zip(&d).map(|(a, b)| a + b).collect();
            prop_assert!(kl_penalty(&t, &r, KlEstimator::NonNegative).unwrap() >= 0.0);
        }
    }
}

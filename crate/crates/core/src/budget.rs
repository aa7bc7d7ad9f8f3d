//! Budget snapshots taken before a pending observation is loaded, the
//! deferred-observation handle, and the fold prompts that expose them.

use alloc::format;
use alloc::string::{String, ToString};
use core::cell::Cell;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::context::{ContextBuffer, FoldReceipt};
use crate::text::fill_template;
use crate::tokens::{TokenCount, Tokenizer};

pub const DEFAULT_SAFETY_MARGIN: TokenCount = TokenCount(1000);

const BUDGET_TEMPLATE: &str = include_str!("../templates/budget_prompt.txt");
const NO_BUDGET_TEMPLATE: &str = include_str!("../templates/no_budget_prompt.txt");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BudgetError {
    #[error("max_model_len ({max_model_len}) must exceed the safety margin ({safety_margin})")]
    MarginTooLarge { max_model_len: TokenCount, safety_margin: TokenCount },
    #[error("pending observation content read before the fold was applied")]
    SealedContent,
}

/// `remaining_budget / usable_limit` as an exact fraction, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Percent {
    remaining: i64,
    usable: i64,
}

impl Percent {
    pub fn as_f64(self) -> f64 {
        100.0 * self.remaining as f64 / self.usable as f64
    }

    /// The value in tenths of a percent, rounded half away from zero.
    pub fn tenths(self) -> i64 {
        let num = (self.remaining as i128) * 1000;
        let den = self.usable as i128;
        let mag = (2 * num.abs() + den) / (2 * den);
        (if num < 0 { -mag } else { mag }) as i64
    }

    /// `floor(pct / 10)`, evaluated exactly.
    pub fn decile(self) -> i64 {
        ((self.remaining as i128) * 10).div_euclid(self.usable as i128) as i64
    }

    /// `true` when `pct >= threshold` for an integer percent threshold,
    /// evaluated exactly.
    pub fn at_least(self, threshold: i64) -> bool {
        (self.remaining as i128) * 100 >= (threshold as i128) * (self.usable as i128)
    }
}

impl fmt::Display for Percent {
    /// One decimal, e.g. `51.3`; negative values that round to zero print
    /// as `-0.0`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.tenths();
        let sign = if t < 0 || (t == 0 && self.remaining < 0) { "-" } else { "" };
        let a = t.unsigned_abs();
        write!(f, "{sign}{}.{}", a / 10, a % 10)
    }
}

/// Budget arithmetic for one turn, computed before the pending observation
/// is appended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetState {
    pub max_model_len: TokenCount,
    pub safety_margin: TokenCount,
    pub usable_limit: TokenCount,
    pub current_ctx_len: TokenCount,
    pub pending_obs_len: TokenCount,
    pub remaining_budget: i64,
    pub remaining_pct: Percent,
}

impl BudgetState {
    pub fn from_lengths(
        current_ctx_len: TokenCount,
        pending_obs_len: TokenCount,
        max_model_len: TokenCount,
        safety_margin: TokenCount,
    ) -> Result<Self, BudgetError> {
        if max_model_len <= safety_margin {
            return Err(BudgetError::MarginTooLarge { max_model_len, safety_margin });
        }
        let usable_limit = TokenCount(max_model_len.0 - safety_margin.0);
        let remaining_budget = usable_limit.as_i64() - (current_ctx_len.as_i64() + pending_obs_len.as_i64());
        Ok(BudgetState {
            max_model_len,
            safety_margin,
            usable_limit,
            current_ctx_len,
            pending_obs_len,
            remaining_budget,
            remaining_pct: Percent { remaining: remaining_budget, usable: usable_limit.as_i64() },
        })
    }

    pub fn compute(
        buffer: &ContextBuffer,
        pending: &PendingObservation,
        max_model_len: TokenCount,
        safety_margin: TokenCount,
    ) -> Result<Self, BudgetError> {
        Self::from_lengths(buffer.token_len(), pending.len(), max_model_len, safety_margin)
    }

    /// Headroom against the raw budget, `B - |C_t|`, ignoring the margin
    /// and the pending observation.
    pub fn raw_headroom(&self) -> i64 {
        self.max_model_len.as_i64() - self.current_ctx_len.as_i64()
    }

    pub fn render_prompt(&self) -> String {
        render_budget_prompt(self)
    }
}

/// Which fold prompt a budget-aware strategy shows the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Budget,
    NoBudget,
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptVariant::Budget => "budget",
            PromptVariant::NoBudget => "no_budget",
        })
    }
}

impl core::str::FromStr for PromptVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "budget" => Ok(PromptVariant::Budget),
            "no_budget" | "no-budget" => Ok(PromptVariant::NoBudget),
            _ => Err(format!("unknown prompt variant `{s}`")),
        }
    }
}

pub fn render_budget_prompt(state: &BudgetState) -> String {
    fill_template(
        BUDGET_TEMPLATE,
        &[
            ("current_ctx_len", &state.current_ctx_len.to_string()),
            ("tool_response_len", &state.pending_obs_len.to_string()),
            ("remaining_budget", &state.remaining_budget.to_string()),
            ("remaining_pct:.1f", &state.remaining_pct.to_string()),
            ("usable_limit", &state.usable_limit.to_string()),
        ],
    )
}

pub fn render_unbudgeted_prompt() -> String {
    String::from(NO_BUDGET_TEMPLATE)
}

/// A tool result whose size is known but whose text stays sealed until the
/// turn's fold has been applied.
///
/// Every attempt to read the content through [`peek`](Self::peek) before
/// [`release`](Self::release) is refused and counted.
#[derive(Debug)]
pub struct PendingObservation {
    length: TokenCount,
    content: String,
    early_reads: Cell<u32>,
}

impl PendingObservation {
    pub fn new(content: String, tokenizer: &Tokenizer) -> Self {
        let length = tokenizer.count(&content);
        PendingObservation { length, content, early_reads: Cell::new(0) }
    }

    pub fn len(&self) -> TokenCount {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == TokenCount::ZERO
    }

    pub fn peek(&self) -> Result<&str, BudgetError> {
        self.early_reads.set(self.early_reads.get() + 1);
        Err(BudgetError::SealedContent)
    }

    pub fn early_reads(&self) -> u32 {
        self.early_reads.get()
    }

    /// Unseals the content. Returns the text and the number of refused
    /// early reads.
    pub fn release(self, _receipt: FoldReceipt) -> (String, u32) {
        (self.content, self.early_reads.get())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::FoldDirective;
    use proptest::prelude::*;

    fn state(current: u64, pending: u64, b: u64) -> BudgetState {
        BudgetState::from_lengths(TokenCount(current), TokenCount(pending), TokenCount(b), DEFAULT_SAFETY_MARGIN)
            .unwrap()
    }

    #[test]
    fn usable_limit_subtracts_margin() {
        assert_eq!(state(0, 0, 8192).usable_limit, TokenCount(7192));
    }

    #[test]
    fn remaining_and_pct() {
        let s = state(3000, 500, 8192);
        assert_eq!(s.remaining_budget, 3692);
        assert_eq!(s.remaining_pct.to_string(), "51.3");
        assert!((s.remaining_pct.as_f64() - 51.334816).abs() < 1e-5);

        let s = state(7000, 400, 8192);
        assert_eq!(s.remaining_budget, -208);
        assert_eq!(s.remaining_pct.to_string(), "-2.9");
        assert_eq!(s.raw_headroom(), 1192);
    }

    #[test]
    fn pct_rounds_half_away_from_zero() {
        let p = |r, u| Percent { remaining: r, usable: u };
        assert_eq!(p(154, 300).to_string(), "51.3");
        assert_eq!(p(1, 2000).to_string(), "0.1"); // 0.05
        assert_eq!(p(-1, 2000).to_string(), "-0.1");
        assert_eq!(p(-1, 100000).to_string(), "-0.0");
        assert_eq!(p(0, 7).to_string(), "0.0");
        assert_eq!(p(7, 7).to_string(), "100.0");
    }

    #[test]
    fn margin_must_be_smaller_than_budget() {
        let err = BudgetState::from_lengths(TokenCount(0), TokenCount(0), TokenCount(1000), TokenCount(1000));
        assert!(matches!(err, Err(BudgetError::MarginTooLarge { .. })));
    }

    #[test]
    fn budget_prompt_substitutes_fields() {
        let p = state(3000, 500, 8192).render_prompt();
        assert!(p.contains("Current prompt length: 3000 tokens"));
        assert!(p.contains("Estimated tool response length: 500 tokens"));
        assert!(p.contains("Remaining tokens for next turn: 3692 tokens (51.3% of usable context)"));
        assert!(p.contains("): 7192 tokens"));
        assert!(p.contains("RULE: Don't fold unless necessary. Preserve user requirements and errors."));
        assert!(!p.contains('{') || p.contains("{\"name\""));
    }

    #[test]
    fn unbudgeted_prompt_has_no_numbers_and_same_output_format() {
        let p = render_unbudgeted_prompt();
        assert!(p.contains("Please choose the most appropriate folding strategy"));
        let digits_outside_ids = p.replace("c0001", "").replace("c0002", "");
        assert!(!digits_outside_ids.chars().any(|c| c.is_ascii_digit()));
        let tail = "<tool_call>\n{\"name\": \"summarize\", \"arguments\": {\"fold_commit_ids\": \"NONE\", \"merged_commit\": \"\"}}\n</tool_call>";
        assert!(p.ends_with(tail));
        assert!(state(1, 1, 4096).render_prompt().contains(tail));
    }

    #[test]
    fn pending_content_is_sealed_until_fold() {
        let tk = Tokenizer::whitespace();
        let mut buf = ContextBuffer::new("p", tk.clone());
        let pending = PendingObservation::new("hidden words here".into(), &tk);
        assert_eq!(pending.len(), TokenCount(3));
        assert_eq!(pending.peek(), Err(BudgetError::SealedContent));
        let receipt = buf.apply_fold(&FoldDirective::none()).unwrap();
        let (text, early) = pending.release(receipt);
        assert_eq!(text, "hidden words here");
        assert_eq!(early, 1);
    }

    proptest! {
        #[test]
        fn arithmetic_is_exact(b in 1001u64..200_000, cur in 0u64..300_000, pend in 0u64..100_000) {
            let s = state(cur, pend, b);
            prop_assert_eq!(s.usable_limit.0, b - 1000);
            prop_assert_eq!(s.remaining_budget, (b as i64 - 1000) - (cur as i64 + pend as i64));
            let tenths = s.remaining_pct.tenths() as f64 / 10.0;
            prop_assert!((tenths - s.remaining_pct.as_f64()).abs() <= 0.05 + 1e-9);
        }
    }
}

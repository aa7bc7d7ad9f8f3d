//! Scoring and aggregate reporting.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::environment::ComposedTask;
use crate::rollout::{Trajectory, TrajectoryStatus};
use crate::text::fill_template;
use crate::tokens::TokenCount;

const JUDGE_TEMPLATE: &str = include_str!("../templates/judge_prompt.txt");

/// Answer normalization, applied in this order before bag-of-token F1.
pub mod normalization {
    pub const LOWERCASE: bool = true;
    /// Every ASCII punctuation character is deleted.
    pub const STRIP_ASCII_PUNCTUATION: bool = true;
    /// Dropped as whole tokens after punctuation removal.
    pub const ARTICLES: [&str; 3] = ["a", "an", "the"];
    /// Tokens are maximal whitespace-free runs.
    pub const COLLAPSE_WHITESPACE: bool = true;
}

pub fn normalize_answer(text: &str) -> Vec<String> {
    crate::text::normalize_terms(text)
        .into_iter()
        .filter(|t| !normalization::ARTICLES.contains(&t.as_str()))
        .collect()
}

/// F1 between two token bags; 0 when either is empty.
pub fn bag_f1<S: AsRef<str>>(prediction: &[S], gold: &[S]) -> f64 {
    if prediction.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for t in gold {
        *counts.entry(t.as_ref()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in prediction {
        if let Some(c) = counts.get_mut(t.as_ref()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / prediction.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Normalized token F1 against the best-matching gold alias.
pub fn token_f1(prediction: &str, golds: &[String]) -> f64 {
    let pred = normalize_answer(prediction);
    golds
        .iter()
        .map(|g| bag_f1(&pred, &normalize_answer(g)))
        .fold(0.0, f64::max)
}

/// Token F1 on raw whitespace tokens, no normalization.
pub fn token_f1_raw(prediction: &str, gold: &str) -> f64 {
    let p: Vec<&str> = prediction.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    bag_f1(&p, &g)
}

/// Per-objective F1 by position; missing answers score 0.
pub fn objective_f1s(answers: &[String], task: &ComposedTask) -> Vec<f64> {
    task.objectives
        .iter()
        .enumerate()
        .map(|(i, obj)| answers.get(i).map_or(0.0, |a| token_f1(a, &obj.gold_answers)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub objectives: usize,
    pub per_objective_f1: Vec<f64>,
    pub summed_f1: f64,
    pub mean_f1: f64,
    pub answered: bool,
    pub compressions: u32,
    pub peak_tokens: TokenCount,
    pub dependent_cost: TokenCount,
    pub budget_violated: bool,
}

pub fn score_trajectory(trajectory: &Trajectory, task: &ComposedTask) -> EpisodeMetrics {
    let per_objective_f1 = objective_f1s(&trajectory.final_answers, task);
    let summed_f1: f64 = per_objective_f1.iter().sum();
    let n = task.objectives.len();
    EpisodeMetrics {
        objectives: n,
        summed_f1,
        mean_f1: summed_f1 / n as f64,
        per_objective_f1,
        answered: trajectory.status == TrajectoryStatus::Answered,
        compressions: trajectory.compressions_used,
        peak_tokens: trajectory.peak_tokens,
        dependent_cost: trajectory.generated_tokens,
        budget_violated: trajectory.budget_violated,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub strategy: String,
    pub max_model_len: TokenCount,
    pub objectives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub strategy: String,
    pub max_model_len: TokenCount,
    pub objectives: usize,
    pub episodes: usize,
    pub mean_summed_f1: f64,
    pub mean_f1: f64,
    pub answer_rate: f64,
    pub mean_compressions: f64,
    pub mean_peak_tokens: f64,
    pub mean_dependent_cost: f64,
    pub violation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("cannot aggregate an empty set of episodes")]
    Empty,
}

/// Mean that does not depend on input order: values are summed in sorted
/// order.
pub fn order_free_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Groups by key and averages every metric. Rows are ordered by strategy,
/// then budget descending, then objective count ascending.
pub fn aggregate(records: &[(GroupKey, EpisodeMetrics)]) -> Result<Vec<AggregateReport>, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut groups: BTreeMap<(String, core::cmp::Reverse<TokenCount>, usize), Vec<&EpisodeMetrics>> = BTreeMap::new();
    for (key, m) in records {
        groups
            .entry((key.strategy.clone(), core::cmp::Reverse(key.max_model_len), key.objectives))
            .or_default()
            .push(m);
    }
    Ok(groups
        .into_iter()
        .map(|((strategy, core::cmp::Reverse(max_model_len), objectives), ms)| {
            let flag = |f: fn(&EpisodeMetrics) -> bool| order_free_mean(ms.iter().map(|m| if f(m) { 1.0 } else { 0.0 }));
            AggregateReport {
                strategy,
                max_model_len,
                objectives,
                episodes: ms.len(),
                mean_summed_f1: order_free_mean(ms.iter().map(|m| m.summed_f1)),
                mean_f1: order_free_mean(ms.iter().map(|m| m.mean_f1)),
                answer_rate: flag(|m| m.answered),
                mean_compressions: order_free_mean(ms.iter().map(|m| m.compressions as f64)),
                mean_peak_tokens: order_free_mean(ms.iter().map(|m| m.peak_tokens.0 as f64)),
                mean_dependent_cost: order_free_mean(ms.iter().map(|m| m.dependent_cost.0 as f64)),
                violation_rate: flag(|m| m.budget_violated),
            }
        })
        .collect())
}

/// Fixed-width plain-text table of aggregate rows.
pub fn render_table(rows: &[AggregateReport]) -> String {
    let header = [
        "strategy", "B", "N", "episodes", "sum_f1", "mean_f1", "answer_rate", "compress", "peak_P", "cost_D",
        "violations",
    ];
    let body: Vec<[String; 11]> = rows
        .iter()
        .map(|r| {
            [
                r.strategy.clone(),
                format!("{}", r.max_model_len),
                format!("{}", r.objectives),
                format!("{}", r.episodes),
                format!("{:.3}", r.mean_summed_f1),
                format!("{:.3}", r.mean_f1),
                format!("{:.3}", r.answer_rate),
                format!("{:.2}", r.mean_compressions),
                format!("{:.1}", r.mean_peak_tokens),
                format!("{:.1}", r.mean_dependent_cost),
                format!("{:.3}", r.violation_rate),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ")
    };
    let mut out = line(&mut header.iter().copied());
    out.push('\n');
    for row in &body {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
        out.push('\n');
    }
    out
}

pub fn render_judge_prompt(question: &str, response: &str, correct_answer: &str) -> String {
    fill_template(
        JUDGE_TEMPLATE,
        &[("question", question), ("response", response), ("correct_answer", correct_answer)],
    )
}

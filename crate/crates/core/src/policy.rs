//! Policies: what turns context into actions and fold decisions.
//!
//! Model output uses a `<tool_call>{json}</tool_call>` envelope for both the
//! `summarize` (fold) call and the `search` call; final answers use
//! `<answer>...</answer>`.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::budget::{BudgetState, Percent};
use crate::context::{BlockKind, CommitBlock, CommitId, ContextView, FoldDirective, FoldMode};
use crate::environment::ComposedTask;
use crate::text::first_sentences;

const SUMMARY_TEMPLATE: &str = include_str!("../templates/summary_prompt.txt");

pub const DEFAULT_ANSWER_DELIMITER: &str = "\n";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no <tool_call> span found")]
    MissingToolCall,
    #[error("malformed tool call: {0}")]
    MalformedJson(String),
    #[error("expected tool `{expected}`, got `{found}`")]
    WrongTool { expected: &'static str, found: String },
    #[error("unknown commit id {0}")]
    UnknownCommit(String),
    #[error("fold requires non-empty merged_commit")]
    MissingMergeText,
    #[error("fold_commit_ids is empty")]
    EmptySelection,
    #[error("output contains both a search call and an answer")]
    Ambiguous,
    #[error("answer span is empty")]
    EmptyAnswer,
}

fn span<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(&text[start..end])
}

fn parse_tool_call(body: &str) -> Result<(String, Value), ParseError> {
    let value: Value = serde_json::from_str(body.trim()).map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    let name = value
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| ParseError::MalformedJson("missing `name`".into()))?
        .to_string();
    let args = value.get("arguments").cloned().unwrap_or(Value::Null);
    // Some models emit arguments as a JSON-encoded string.
    let args = match args {
        Value::String(s) => serde_json::from_str(&s).map_err(|e| ParseError::MalformedJson(e.to_string()))?,
        other => other,
    };
    Ok((name, args))
}

/// Parses the first `summarize` tool call in `model_text`.
///
/// `valid_ids` are the ids currently in the buffer. A selection naming every
/// one of them is returned as `All`.
pub fn parse_fold_directive(model_text: &str, valid_ids: &[CommitId]) -> Result<FoldDirective, ParseError> {
    let body = span(model_text, "<tool_call>", "</tool_call>").ok_or(ParseError::MissingToolCall)?;
    let (name, args) = parse_tool_call(body)?;
    if name != "summarize" {
        return Err(ParseError::WrongTool { expected: "summarize", found: name });
    }
    let ids_field = args
        .get("fold_commit_ids")
        .and_then(Value::as_str)
        .ok_or_else(|| ParseError::MalformedJson("missing `fold_commit_ids`".into()))?
        .trim();
    // `merged_summary` is an older name for the same field
    let merged = ["merged_commit", "merged_summary"]
        .iter()
        .find_map(|k| args.get(*k).and_then(Value::as_str))
        .unwrap_or("")
        .to_string();

    if ids_field.eq_ignore_ascii_case("none") {
        return Ok(FoldDirective::none());
    }
    if merged.trim().is_empty() {
        return Err(ParseError::MissingMergeText);
    }
    if ids_field.eq_ignore_ascii_case("all") {
        return Ok(FoldDirective::all(merged));
    }
    let valid: BTreeSet<CommitId> = valid_ids.iter().copied().collect();
    let mut selected = BTreeSet::new();
    for raw in ids_field.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let id: CommitId = raw.parse().map_err(|_| ParseError::UnknownCommit(raw.into()))?;
        if !valid.contains(&id) {
            return Err(ParseError::UnknownCommit(raw.into()));
        }
        selected.insert(id);
    }
    if selected.is_empty() {
        return Err(ParseError::EmptySelection);
    }
    if selected == valid {
        return Ok(FoldDirective::all(merged));
    }
    Ok(FoldDirective::partial(selected, merged))
}

/// Inverse of [`parse_fold_directive`].
pub fn render_as_tool_call(directive: &FoldDirective) -> String {
    let ids = match &directive.mode {
        FoldMode::None => "NONE".to_string(),
        FoldMode::All => "ALL".to_string(),
        FoldMode::Partial(ids) => ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
    };
    let call = serde_json::json!({
        "name": "summarize",
        "arguments": {"fold_commit_ids": ids, "merged_commit": directive.merged_text},
    });
    format!("<tool_call>\n{call}\n</tool_call>")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentAction {
    Search { query: String },
    Answer { answers: Vec<String> },
    Continue { raw: String },
}

/// Parses an agent turn. Answers are split on `delimiter` and trimmed;
/// positions are kept, so an empty line is an empty answer.
pub fn parse_agent_action(model_text: &str, delimiter: &str) -> Result<AgentAction, ParseError> {
    let search = match span(model_text, "<tool_call>", "</tool_call>") {
        Some(body) => {
            let (name, args) = parse_tool_call(body)?;
            if name != "search" {
                return Err(ParseError::WrongTool { expected: "search", found: name });
            }
            let query = args
                .get("query")
                .and_then(Value::as_str)
                .ok_or_else(|| ParseError::MalformedJson("missing `query`".into()))?;
            Some(query.to_string())
        }
        None => None,
    };
    let answer = span(model_text, "<answer>", "</answer>");
    match (search, answer) {
        (Some(_), Some(_)) => Err(ParseError::Ambiguous),
        (Some(query), None) => Ok(AgentAction::Search { query }),
        (None, Some(body)) => {
            let delim = if delimiter.is_empty() { DEFAULT_ANSWER_DELIMITER } else { delimiter };
            let body = body.trim_matches(|c| c == '\n' || c == '\r');
            if body.trim().is_empty() {
                return Err(ParseError::EmptyAnswer);
            }
            Ok(AgentAction::Answer { answers: body.split(delim).map(|a| a.trim().to_string()).collect() })
        }
        (None, None) => Ok(AgentAction::Continue { raw: model_text.to_string() }),
    }
}

pub fn render_search_call(query: &str) -> String {
    let call = serde_json::json!({"name": "search", "arguments": {"query": query}});
    format!("<tool_call>{call}</tool_call>")
}

pub fn render_answer(answers: &[String], delimiter: &str) -> String {
    format!("<answer>{}</answer>", answers.join(delimiter))
}

/// One line per non-empty input line: its first sentence. Only task,
/// observation and merged blocks contribute.
pub fn extract_first_sentences<'a>(blocks: impl IntoIterator<Item = &'a CommitBlock>) -> String {
    let mut lines: Vec<String> = Vec::new();
    for b in blocks {
        if b.kind() == BlockKind::AssistantTurn {
            continue;
        }
        for line in b.text().lines().map(str::trim).filter(|l| !l.is_empty()) {
            lines.push(first_sentences(line, 1));
        }
    }
    lines.join("\n")
}

/// Remaining-budget thresholds, in integer percent of the usable limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldThresholds {
    /// `pct >= keep_at` → no fold.
    pub keep_at: i64,
    /// `pct < fold_all_below` → fold everything; in between → fold the
    /// oldest half.
    pub fold_all_below: i64,
}

impl Default for FoldThresholds {
    fn default() -> Self {
        FoldThresholds { keep_at: 40, fold_all_below: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldRegime {
    Keep,
    OldestHalf,
    All,
}

impl FoldThresholds {
    pub fn regime(&self, pct: Percent) -> FoldRegime {
        if pct.at_least(self.keep_at) {
            FoldRegime::Keep
        } else if pct.at_least(self.fold_all_below) {
            FoldRegime::OldestHalf
        } else {
            FoldRegime::All
        }
    }
}

fn fallback_merge_text(count: usize) -> String {
    format!("[folded {count} earlier commits]")
}

fn merge_text_for(view: &ContextView<'_>, ids: &[CommitId]) -> String {
    let wanted: BTreeSet<CommitId> = ids.iter().copied().collect();
    let text = extract_first_sentences(view.blocks().iter().filter(|b| wanted.contains(&b.id())));
    if text.trim().is_empty() {
        fallback_merge_text(ids.len())
    } else {
        text
    }
}

/// The oldest `ceil(K/2)` ids.
pub fn oldest_half(ids: &[CommitId]) -> Vec<CommitId> {
    ids[..ids.len().div_ceil(2)].to_vec()
}

/// Threshold policy over the remaining-budget percentage. `ids` are the
/// buffer's current ids in order; merged text is a first-sentence extract of
/// the folded blocks visible in `view`.
pub fn heuristic_fold_policy(
    state: &BudgetState,
    ids: &[CommitId],
    view: &ContextView<'_>,
    thresholds: FoldThresholds,
) -> FoldDirective {
    if ids.is_empty() {
        return FoldDirective::none();
    }
    match thresholds.regime(state.remaining_pct) {
        FoldRegime::Keep => FoldDirective::none(),
        FoldRegime::OldestHalf => {
            let chosen = oldest_half(ids);
            let text = merge_text_for(view, &chosen);
            if chosen.len() == ids.len() {
                FoldDirective::all(text)
            } else {
                FoldDirective::partial(chosen, text)
            }
        }
        FoldRegime::All => FoldDirective::all(merge_text_for(view, ids)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
    #[error("scripted policy has no more `{0}` outputs")]
    ScriptExhausted(&'static str),
    #[error("backend error: {0}")]
    Backend(String),
}

impl PolicyError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, PolicyError::Transport(_) | PolicyError::Status { .. })
    }
}

/// What the rollout asks of a policy.
#[derive(Debug, Clone, Copy)]
pub enum PolicyRequest<'a> {
    /// Produce the next agent action given the visible context.
    Act { context: ContextView<'a> },
    /// Produce a `summarize` tool call. `budget` is present only when the
    /// prompt carries budget fields.
    Fold {
        context: ContextView<'a>,
        prompt: &'a str,
        budget: Option<&'a BudgetState>,
        ids: &'a [CommitId],
    },
    /// Produce free-text state that replaces the whole history.
    Summarize { context: ContextView<'a> },
}

impl PolicyRequest<'_> {
    pub fn kind(&self) -> &'static str {
        match self {
            PolicyRequest::Act { .. } => "act",
            PolicyRequest::Fold { .. } => "fold",
            PolicyRequest::Summarize { .. } => "summarize",
        }
    }

    /// Flattens the request into a single user message for text backends.
    pub fn to_prompt(&self) -> String {
        match self {
            PolicyRequest::Act { context } => context.render(),
            PolicyRequest::Fold { context, prompt, .. } => format!("{}\n\n{}", context.render(), prompt),
            PolicyRequest::Summarize { context } => format!("{}\n\n{}", context.render(), SUMMARY_TEMPLATE),
        }
    }
}

pub trait Policy {
    fn respond(&mut self, request: &PolicyRequest<'_>) -> Result<String, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for &mut P {
    fn respond(&mut self, request: &PolicyRequest<'_>) -> Result<String, PolicyError> {
        (**self).respond(request)
    }
}

impl<P: Policy + ?Sized> Policy for alloc::boxed::Box<P> {
    fn respond(&mut self, request: &PolicyRequest<'_>) -> Result<String, PolicyError> {
        (**self).respond(request)
    }
}

/// Pre-recorded outputs, one queue per request kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedOutputs {
    #[serde(default)]
    pub act: Vec<String>,
    #[serde(default)]
    pub fold: Vec<String>,
    #[serde(default)]
    pub summarize: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    act: VecDeque<String>,
    fold: VecDeque<String>,
    summarize: VecDeque<String>,
}

impl ScriptedPolicy {
    pub fn new(outputs: ScriptedOutputs) -> Self {
        ScriptedPolicy {
            act: outputs.act.into(),
            fold: outputs.fold.into(),
            summarize: outputs.summarize.into(),
        }
    }

    /// Searches every question verbatim, then answers with the first gold
    /// alias of each. Fold requests get `NONE`.
    pub fn oracle(task: &ComposedTask, delimiter: &str) -> Self {
        let n = task.objectives.len();
        let mut act: Vec<String> = task.objectives.iter().map(|q| render_search_call(&q.question)).collect();
        let golds: Vec<String> = task.objectives.iter().map(|q| q.gold_answers[0].clone()).collect();
        act.push(render_answer(&golds, delimiter));
        let fold = (0..n).map(|_| render_as_tool_call(&FoldDirective::none())).collect();
        let summarize = (0..n).map(|_| golds.join("; ")).collect();
        ScriptedPolicy::new(ScriptedOutputs { act, fold, summarize })
    }
}

impl Policy for ScriptedPolicy {
    fn respond(&mut self, request: &PolicyRequest<'_>) -> Result<String, PolicyError> {
        let queue = match request {
            PolicyRequest::Act { .. } => &mut self.act,
            PolicyRequest::Fold { .. } => &mut self.fold,
            PolicyRequest::Summarize { .. } => &mut self.summarize,
        };
        queue.pop_front().ok_or(PolicyError::ScriptExhausted(request.kind()))
    }
}

/// Reads `Qn: ...` lines from a task prelude.
pub fn questions_in(prelude: &str) -> Vec<String> {
    prelude
        .lines()
        .filter_map(|line| {
            let rest = line.trim().strip_prefix('Q')?;
            let (num, q) = rest.split_once(':')?;
            (!num.is_empty() && num.bytes().all(|b| b.is_ascii_digit())).then(|| q.trim().to_string())
        })
        .collect()
}

/// Finds the answer to a `What is the <subject>?` question in `text` by
/// locating the sentence `The <subject> is <value>.`
pub fn lookup_answer(question: &str, text: &str) -> Option<String> {
    let q = question.trim();
    let subject = q.strip_prefix("What is the ")?.trim_end_matches('?').trim();
    let needle = format!("the {} is ", subject).to_ascii_lowercase();
    let hay = text.to_ascii_lowercase();
    let start = hay.find(&needle)? + needle.len();
    let rest = &text[start..];
    let end = rest.find(['.', '\n']).unwrap_or(rest.len());
    let value = rest[..end].trim();
    (!value.is_empty()).then(|| value.to_string())
}

/// Deterministic stand-in for a trained model.
///
/// As an agent it searches each question from the prelude once, in order,
/// then answers every question from whatever context is still visible. As a
/// fold policy it applies [`heuristic_fold_policy`]; without budget fields it
/// folds the oldest half once four or more commits have accumulated.
#[derive(Debug, Clone)]
pub struct HeuristicPolicy {
    pub thresholds: FoldThresholds,
    pub delimiter: String,
    searched: usize,
}

impl Default for HeuristicPolicy {
    fn default() -> Self {
        HeuristicPolicy::new(FoldThresholds::default())
    }
}

impl HeuristicPolicy {
    pub fn new(thresholds: FoldThresholds) -> Self {
        HeuristicPolicy { thresholds, delimiter: DEFAULT_ANSWER_DELIMITER.into(), searched: 0 }
    }

    pub fn act(&mut self, context: &ContextView<'_>) -> String {
        let questions = questions_in(context.prelude());
        if self.searched < questions.len() {
            let q = &questions[self.searched];
            self.searched += 1;
            return render_search_call(q);
        }
        let visible = context.render();
        let answers: Vec<String> =
            questions.iter().map(|q| lookup_answer(q, &visible).unwrap_or_else(|| String::from("unknown"))).collect();
        if answers.is_empty() {
            return render_answer(&[String::from("unknown")], &self.delimiter);
        }
        render_answer(&answers, &self.delimiter)
    }

    pub fn fold(&self, context: &ContextView<'_>, budget: Option<&BudgetState>, ids: &[CommitId]) -> FoldDirective {
        match budget {
            Some(state) => heuristic_fold_policy(state, ids, context, self.thresholds),
            None if ids.len() >= 4 => {
                let chosen = oldest_half(ids);
                let text = merge_text_for(context, &chosen);
                FoldDirective::partial(chosen, text)
            }
            None => FoldDirective::none(),
        }
    }

    pub fn summarize(&self, context: &ContextView<'_>) -> String {
        let text = extract_first_sentences(context.blocks());
        if text.trim().is_empty() {
            fallback_merge_text(context.blocks().len())
        } else {
            text
        }
    }
}

impl Policy for HeuristicPolicy {
    fn respond(&mut self, request: &PolicyRequest<'_>) -> Result<String, PolicyError> {
        Ok(match request {
            PolicyRequest::Act { context } => self.act(context),
            PolicyRequest::Fold { context, budget, ids, .. } => render_as_tool_call(&self.fold(context, *budget, ids)),
            PolicyRequest::Summarize { context } => self.summarize(context),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::DEFAULT_SAFETY_MARGIN;
    use crate::context::ContextBuffer;
    use crate::tokens::{TokenCount, Tokenizer};
    use alloc::vec;
    use proptest::prelude::*;

    fn ids(n: u32) -> Vec<CommitId> {
        (1..=n).map(|i| CommitId::new(i).unwrap()).collect()
    }

    fn state_with_pct(pct_tenths: i64) -> BudgetState {
        // usable 1000 → remaining = pct_tenths tokens
        let usable = 1000u64;
        let remaining = pct_tenths;
        let current = (usable as i64 - remaining) as u64;
        BudgetState::from_lengths(TokenCount(current), TokenCount(0), TokenCount(usable + 1000), DEFAULT_SAFETY_MARGIN)
            .unwrap()
    }

    #[test]
    fn parses_none() {
        let t = r#"<tool_call>{"name":"summarize","arguments":{"fold_commit_ids":"NONE","merged_commit":""}}</tool_call>"#;
        assert_eq!(parse_fold_directive(t, &ids(3)), Ok(FoldDirective::none()));
    }

    #[test]
    fn parses_all_and_partial() {
        let t = r#"<tool_call>{"name": "summarize", "arguments": {"fold_commit_ids": "ALL", "merged_commit": "[key points from session]"}}</tool_call>"#;
        assert_eq!(parse_fold_directive(t, &ids(3)), Ok(FoldDirective::all("[key points from session]")));
        let t = r#"thinking...<tool_call>{"name": "summarize", "arguments": {"fold_commit_ids": " c0002, c0001 ,c0001", "merged_commit": "[merged content]"}}</tool_call>"#;
        assert_eq!(parse_fold_directive(t, &ids(3)), Ok(FoldDirective::partial(ids(2), "[merged content]")));
    }

    #[test]
    fn partial_covering_everything_is_all() {
        let t = r#"<tool_call>{"name":"summarize","arguments":{"fold_commit_ids":"c1,c2","merged_commit":"m"}}</tool_call>"#;
        assert_eq!(parse_fold_directive(t, &ids(2)), Ok(FoldDirective::all("m")));
    }

    #[test]
    fn merged_summary_key_is_accepted() {
        let t = r#"<tool_call>{"name":"summarize","arguments":{"fold_commit_ids":"ALL","merged_summary":"s"}}</tool_call>"#;
        assert_eq!(parse_fold_directive(t, &ids(2)), Ok(FoldDirective::all("s")));
    }

    #[test]
    fn fold_parse_errors() {
        assert_eq!(parse_fold_directive("no call", &ids(2)), Err(ParseError::MissingToolCall));
        assert!(matches!(parse_fold_directive("<tool_call>{oops</tool_call>", &ids(2)), Err(ParseError::MalformedJson(_))));
        let unknown = r#"<tool_call>{"name":"summarize","arguments":{"fold_commit_ids":"c0009","merged_commit":"m"}}</tool_call>"#;
        assert_eq!(parse_fold_directive(unknown, &ids(2)), Err(ParseError::UnknownCommit("c0009".into())));
        let empty = r#"<tool_call>{"name":"summarize","arguments":{"fold_commit_ids":"ALL","merged_commit":"  "}}</tool_call>"#;
        assert_eq!(parse_fold_directive(empty, &ids(2)), Err(ParseError::MissingMergeText));
        let wrong = r#"<tool_call>{"name":"search","arguments":{"query":"x"}}</tool_call>"#;
        assert!(matches!(parse_fold_directive(wrong, &ids(2)), Err(ParseError::WrongTool { .. })));
    }

    #[test]
    fn string_encoded_arguments_are_accepted() {
        let t = r#"<tool_call>{"name":"summarize","arguments":"{\"fold_commit_ids\":\"NONE\",\"merged_commit\":\"\"}"}</tool_call>"#;
        assert_eq!(parse_fold_directive(t, &ids(1)), Ok(FoldDirective::none()));
    }

    #[test]
    fn agent_actions() {
        let s = r#"<tool_call>{"name":"search","arguments":{"query":"capital of France"}}</tool_call>"#;
        assert_eq!(parse_agent_action(s, "\n"), Ok(AgentAction::Search { query: "capital of France".into() }));
        assert_eq!(
            parse_agent_action("<answer>Paris</answer>", "\n"),
            Ok(AgentAction::Answer { answers: vec!["Paris".into()] })
        );
        assert_eq!(
            parse_agent_action("<answer>\nParis\n\nRome\n</answer>", "\n"),
            Ok(AgentAction::Answer { answers: vec!["Paris".into(), "".into(), "Rome".into()] })
        );
        assert_eq!(
            parse_agent_action("<answer>a|b</answer>", "|"),
            Ok(AgentAction::Answer { answers: vec!["a".into(), "b".into()] })
        );
        assert_eq!(parse_agent_action("just prose", "\n"), Ok(AgentAction::Continue { raw: "just prose".into() }));
        assert_eq!(parse_agent_action(&format!("{s}<answer>x</answer>"), "\n"), Err(ParseError::Ambiguous));
        assert_eq!(parse_agent_action("<answer> </answer>", "\n"), Err(ParseError::EmptyAnswer));
    }

    #[test]
    fn heuristic_regimes_follow_case_study_budgets() {
        let mut buf = ContextBuffer::new("Q1: What is the x?", Tokenizer::whitespace());
        for t in ["First fact. filler", "Second fact. more", "Third fact.", "Fourth."] {
            buf.append_observation(t).unwrap();
        }
        let view = buf.view();
        let all_ids = buf.ids();
        let t = FoldThresholds::default();
        assert_eq!(heuristic_fold_policy(&state_with_pct(457), &all_ids, &view, t), FoldDirective::none());
        assert_eq!(
            heuristic_fold_policy(&state_with_pct(306), &all_ids, &view, t),
            FoldDirective::partial(ids(2), "First fact.\nSecond fact.")
        );
        assert_eq!(
            heuristic_fold_policy(&state_with_pct(287), &all_ids, &view, t),
            FoldDirective::all("First fact.\nSecond fact.\nThird fact.\nFourth.")
        );
        // exact boundaries
        assert_eq!(heuristic_fold_policy(&state_with_pct(400), &all_ids, &view, t), FoldDirective::none());
        assert!(matches!(heuristic_fold_policy(&state_with_pct(300), &all_ids, &view, t).mode, FoldMode::Partial(_)));
        assert_eq!(heuristic_fold_policy(&state_with_pct(299), &all_ids, &view, t).mode, FoldMode::All);
    }

    #[test]
    fn heuristic_agent_searches_then_answers() {
        let prelude = "Answer.\nQ1: What is the Zor's colour?\nQ2: What is the Mip's motto?";
        let mut buf = ContextBuffer::new(prelude, Tokenizer::whitespace());
        let mut h = HeuristicPolicy::default();
        let a1 = h.act(&buf.view());
        assert_eq!(parse_agent_action(&a1, "\n"), Ok(AgentAction::Search { query: "What is the Zor's colour?".into() }));
        buf.append_observation("[1] Zor (d1): The Zor's colour is Blen. Filler words.").unwrap();
        let _ = h.act(&buf.view());
        let ans = h.act(&buf.view());
        assert_eq!(
            parse_agent_action(&ans, "\n"),
            Ok(AgentAction::Answer { answers: vec!["Blen".into(), "unknown".into()] })
        );
    }

    #[test]
    fn questions_and_lookup() {
        assert_eq!(questions_in("intro\nQ1: a?\nQ12: b?\nQx: no"), vec!["a?", "b?"]);
        assert_eq!(lookup_answer("What is the Ka's river?", "... the Ka's river is Omo. x"), Some("Omo".into()));
        assert_eq!(lookup_answer("Who?", "x"), None);
    }

    #[test]
    fn scripted_queues_exhaust() {
        let mut p = ScriptedPolicy::new(ScriptedOutputs { act: vec!["a".into()], ..Default::default() });
        let buf = ContextBuffer::new("", Tokenizer::whitespace());
        let req = PolicyRequest::Act { context: buf.view() };
        assert_eq!(p.respond(&req), Ok("a".into()));
        assert_eq!(p.respond(&req), Err(PolicyError::ScriptExhausted("act")));
    }

    fn arb_directive() -> impl Strategy<Value = (FoldDirective, u32)> {
        (2u32..12).prop_flat_map(|k| {
            let none = Just(FoldDirective::none()).boxed();
            let all = "[a-zA-Z0-9 ,.\"'{}\\\\]{1,30}".prop_filter("non-blank", |s| !s.trim().is_empty()).prop_map(FoldDirective::all).boxed();
            let partial = (
                proptest::collection::btree_set(1..=k, 1..k as usize),
                "[a-z ]{0,10}[a-z]",
            )
                .prop_filter("proper subset", move |(s, _)| s.len() < k as usize)
                .prop_map(|(s, m)| FoldDirective::partial(s.into_iter().map(|i| CommitId::new(i).unwrap()), m))
                .boxed();
            (prop_oneof![none, all, partial], Just(k))
        })
    }

    proptest! {
        #[test]
        fn tool_call_round_trip((d, k) in arb_directive()) {
            let text = render_as_tool_call(&d);
            prop_assert_eq!(parse_fold_directive(&text, &ids(k)), Ok(d));
        }

        #[test]
        fn heuristic_is_pure(cur in 0u64..8000, pend in 0u64..4000, k in 1u32..9) {
            let mut buf = ContextBuffer::new("p", Tokenizer::whitespace());
            for i in 0..k {
                buf.append_observation(format!("Block {i}. tail")).unwrap();
            }
            let s = BudgetState::from_lengths(TokenCount(cur), TokenCount(pend), TokenCount(8192), DEFAULT_SAFETY_MARGIN).unwrap();
            let a = heuristic_fold_policy(&s, &buf.ids(), &buf.view(), FoldThresholds::default());
            let b = heuristic_fold_policy(&s, &buf.ids(), &buf.view(), FoldThresholds::default());
            prop_assert!(a.normalized(buf.len()).is_ok());
            prop_assert_eq!(a, b);
        }
    }
}

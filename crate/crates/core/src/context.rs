//! The commit-block context buffer.
//!
//! A [`ContextBuffer`] is a non-foldable prelude (system and task statement)
//! followed by an ordered list of [`CommitBlock`]s. Blocks are addressed by
//! short sequential ids (`c0001`, `c0002`, ...) that are reassigned after
//! every mutation, so the ids a policy sees always run `c0001..c000K`.
//!
//! A [`FoldDirective`] replaces some or all blocks with a single merged
//! block written by the policy:
//!
//! - `None` leaves the buffer untouched,
//! - `Partial(S)` merges a non-empty proper subset `S` into one block placed
//!   where the earliest member of `S` was,
//! - `All` merges every block.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::tokens::{TokenCount, TokenScheme, Tokenizer};

/// One-based position id, rendered as `c%04d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CommitId(u32);

impl CommitId {
    /// `index` is zero-based.
    pub fn from_index(index: usize) -> Self {
        CommitId(index as u32 + 1)
    }

    pub fn new(one_based: u32) -> Option<Self> {
        (one_based > 0).then_some(CommitId(one_based))
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn number(self) -> u32 {
        self.0
    }
}

impl fmt::Display for CommitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{:04}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed commit id `{0}`")]
pub struct BadCommitId(pub String);

impl FromStr for CommitId {
    type Err = BadCommitId;

    /// Accepts `c0001` as well as the short form `c1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix('c')
            .or_else(|| s.strip_prefix('C'))
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| BadCommitId(s.into()))?;
        let n: u32 = digits.parse().map_err(|_| BadCommitId(s.into()))?;
        CommitId::new(n).ok_or_else(|| BadCommitId(s.into()))
    }
}

impl Serialize for CommitId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CommitId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    UserTask,
    AssistantTurn,
    ToolObservation,
    Merged,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::UserTask => "UserTask",
            BlockKind::AssistantTurn => "AssistantTurn",
            BlockKind::ToolObservation => "ToolObservation",
            BlockKind::Merged => "Merged",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommitBlock {
    id: CommitId,
    kind: BlockKind,
    text: String,
    token_len: TokenCount,
}

impl CommitBlock {
    pub fn id(&self) -> CommitId {
        self.id
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn token_len(&self) -> TokenCount {
        self.token_len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "ids", rename_all = "snake_case")]
pub enum FoldMode {
    None,
    /// Sorted, deduplicated.
    Partial(Vec<CommitId>),
    All,
}

/// The structured refine action applied before an observation is loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldDirective {
    pub mode: FoldMode,
    pub merged_text: String,
}

impl FoldDirective {
    pub fn none() -> Self {
        FoldDirective { mode: FoldMode::None, merged_text: String::new() }
    }

    pub fn all(merged_text: impl Into<String>) -> Self {
        FoldDirective { mode: FoldMode::All, merged_text: merged_text.into() }
    }

    pub fn partial(ids: impl IntoIterator<Item = CommitId>, merged_text: impl Into<String>) -> Self {
        let set: BTreeSet<CommitId> = ids.into_iter().collect();
        FoldDirective { mode: FoldMode::Partial(set.into_iter().collect()), merged_text: merged_text.into() }
    }

    pub fn is_none(&self) -> bool {
        matches!(self.mode, FoldMode::None)
    }

    /// Checks the directive against a buffer of `block_count` blocks and
    /// rewrites a partial fold that names every block into `All`.
    pub fn normalized(&self, block_count: usize) -> Result<FoldDirective, ContextError> {
        match &self.mode {
            FoldMode::None => {
                if !self.merged_text.is_empty() {
                    return Err(ContextError::UnexpectedMergeText);
                }
                Ok(self.clone())
            }
            FoldMode::All => {
                if self.merged_text.trim().is_empty() {
                    return Err(ContextError::MissingMergeText);
                }
                Ok(self.clone())
            }
            FoldMode::Partial(ids) => {
                if ids.is_empty() {
                    return Err(ContextError::EmptySelection);
                }
                if let Some(bad) = ids.iter().find(|id| id.index() >= block_count) {
                    return Err(ContextError::UnknownCommit(*bad));
                }
                if self.merged_text.trim().is_empty() {
                    return Err(ContextError::MissingMergeText);
                }
                let distinct: BTreeSet<_> = ids.iter().collect();
                if distinct.len() == block_count {
                    return Ok(FoldDirective::all(self.merged_text.clone()));
                }
                Ok(FoldDirective::partial(ids.iter().copied(), self.merged_text.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContextError {
    #[error("observation text is empty")]
    EmptyObservation,
    #[error("unknown commit id {0}")]
    UnknownCommit(CommitId),
    #[error("fold requires non-empty merged text")]
    MissingMergeText,
    #[error("a NONE fold must not carry merged text")]
    UnexpectedMergeText,
    #[error("partial fold selects no commits")]
    EmptySelection,
}

/// Proof that a fold (possibly the identity) has been applied to a buffer.
/// Only [`ContextBuffer::apply_fold`] can produce one.
#[derive(Debug)]
pub struct FoldReceipt {
    _private: (),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextBuffer {
    prelude: String,
    prelude_len: TokenCount,
    blocks: Vec<CommitBlock>,
    #[serde(serialize_with = "serialize_scheme")]
    tokenizer: Tokenizer,
}

fn serialize_scheme<S: Serializer>(tk: &Tokenizer, s: S) -> Result<S::Ok, S::Error> {
    tk.scheme().serialize(s)
}

impl ContextBuffer {
    pub fn new(prelude: impl Into<String>, tokenizer: Tokenizer) -> Self {
        let prelude = prelude.into();
        let prelude_len = tokenizer.count(&prelude);
        ContextBuffer { prelude, prelude_len, blocks: Vec::new(), tokenizer }
    }

    pub fn prelude(&self) -> &str {
        &self.prelude
    }

    pub fn blocks(&self) -> &[CommitBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn ids(&self) -> Vec<CommitId> {
        self.blocks.iter().map(|b| b.id).collect()
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn scheme(&self) -> &TokenScheme {
        self.tokenizer.scheme()
    }

    /// `count(prelude) + Σ block lengths`.
    pub fn token_len(&self) -> TokenCount {
        self.prelude_len + self.blocks.iter().map(|b| b.token_len).sum()
    }

    /// Appends a block of the given kind with the next sequential id.
    pub fn append(&mut self, kind: BlockKind, text: impl Into<String>) -> Result<CommitId, ContextError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ContextError::EmptyObservation);
        }
        let id = CommitId::from_index(self.blocks.len());
        let token_len = self.tokenizer.count(&text);
        self.blocks.push(CommitBlock { id, kind, text, token_len });
        Ok(id)
    }

    pub fn append_observation(&mut self, text: impl Into<String>) -> Result<CommitId, ContextError> {
        self.append(BlockKind::ToolObservation, text)
    }

    /// Applies `directive` atomically: on error the buffer is unchanged.
    pub fn apply_fold(&mut self, directive: &FoldDirective) -> Result<FoldReceipt, ContextError> {
        let directive = directive.normalized(self.blocks.len())?;
        match directive.mode {
            FoldMode::None => {}
            FoldMode::All => {
                self.blocks.clear();
                self.push_merged(directive.merged_text);
            }
            FoldMode::Partial(ids) => {
                let selected: BTreeSet<usize> = ids.iter().map(|id| id.index()).collect();
                let first = *selected.iter().next().expect("non-empty selection");
                let old = core::mem::take(&mut self.blocks);
                let merged_len = self.tokenizer.count(&directive.merged_text);
                let mut merged = Some(CommitBlock {
                    id: CommitId(0),
                    kind: BlockKind::Merged,
                    text: directive.merged_text,
                    token_len: merged_len,
                });
                for (i, block) in old.into_iter().enumerate() {
                    if i == first {
                        self.blocks.push(merged.take().expect("placed once"));
                    } else if !selected.contains(&i) {
                        self.blocks.push(block);
                    }
                }
                self.renumber();
            }
        }
        Ok(FoldReceipt { _private: () })
    }

    fn push_merged(&mut self, text: String) {
        let token_len = self.tokenizer.count(&text);
        self.blocks.push(CommitBlock {
            id: CommitId::from_index(self.blocks.len()),
            kind: BlockKind::Merged,
            text,
            token_len,
        });
    }

    fn renumber(&mut self) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.id = CommitId::from_index(i);
        }
    }

    pub fn view(&self) -> ContextView<'_> {
        ContextView { prelude: &self.prelude, prelude_len: self.prelude_len, blocks: &self.blocks }
    }

    /// The part of the buffer a model with a `limit`-token window can see:
    /// the prelude plus the longest suffix of blocks that fits. Older blocks
    /// fall out of the window first.
    pub fn window(&self, limit: TokenCount) -> ContextView<'_> {
        let mut used = self.prelude_len;
        let mut start = self.blocks.len();
        while start > 0 {
            let next = used + self.blocks[start - 1].token_len;
            if next > limit {
                break;
            }
            used = next;
            start -= 1;
        }
        ContextView { prelude: &self.prelude, prelude_len: self.prelude_len, blocks: &self.blocks[start..] }
    }

    pub fn render(&self) -> String {
        self.view().render()
    }
}

/// A read-only prefix-preserving view of a buffer.
#[derive(Debug, Clone, Copy)]
pub struct ContextView<'a> {
    prelude: &'a str,
    prelude_len: TokenCount,
    blocks: &'a [CommitBlock],
}

impl<'a> ContextView<'a> {
    pub fn prelude(&self) -> &'a str {
        self.prelude
    }

    pub fn blocks(&self) -> &'a [CommitBlock] {
        self.blocks
    }

    pub fn ids(&self) -> Vec<CommitId> {
        self.blocks.iter().map(|b| b.id).collect()
    }

    pub fn token_len(&self) -> TokenCount {
        self.prelude_len + self.blocks.iter().map(|b| b.token_len).sum()
    }

    /// Prelude, then `\n[<id>|<kind>]\n<text>` per block.
    pub fn render(&self) -> String {
        let mut out = String::from(self.prelude);
        for b in self.blocks {
            out.push_str(&format!("\n[{}|{}]\n", b.id, b.kind));
            out.push_str(&b.text);
        }
        out
    }
}

//! Token counting.
//!
//! All budget arithmetic in this crate is expressed in tokens produced by a
//! [`Tokenizer`]. Two built-in schemes are deterministic and model-free; a third
//! is a named slot for a caller-registered counter (e.g. a real subword
//! tokenizer living in another crate).

use alloc::string::String;
use alloc::sync::Arc;
use core::fmt;
use core::iter::Sum;
use core::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// A non-negative number of tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenCount(pub u64);

impl TokenCount {
    pub const ZERO: TokenCount = TokenCount(0);

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn as_i64(self) -> i64 {
        self.0 as i64
    }

    pub fn saturating_sub(self, other: TokenCount) -> TokenCount {
        TokenCount(self.0.saturating_sub(other.0))
    }
}

impl From<u64> for TokenCount {
    fn from(v: u64) -> Self {
        TokenCount(v)
    }
}

impl Add for TokenCount {
    type Output = TokenCount;
    fn add(self, rhs: TokenCount) -> TokenCount {
        TokenCount(self.0 + rhs.0)
    }
}

impl AddAssign for TokenCount {
    fn add_assign(&mut self, rhs: TokenCount) {
        self.0 += rhs.0;
    }
}

impl Sum for TokenCount {
    fn sum<I: Iterator<Item = TokenCount>>(iter: I) -> TokenCount {
        iter.fold(TokenCount::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a TokenCount> for TokenCount {
    fn sum<I: Iterator<Item = &'a TokenCount>>(iter: I) -> TokenCount {
        iter.copied().sum()
    }
}

impl fmt::Display for TokenCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Which counting rule to apply.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScheme {
    /// Maximal runs of non-whitespace characters.
    #[default]
    Whitespace,
    /// `ceil(utf8_bytes / 4)`, a cheap proxy for subword tokenizers.
    BytesDiv4,
    /// A counter registered under this name at runtime.
    External(String),
}

impl fmt::Display for TokenScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenScheme::Whitespace => f.write_str("whitespace"),
            TokenScheme::BytesDiv4 => f.write_str("bytes_div4"),
            TokenScheme::External(name) => write!(f, "external:{name}"),
        }
    }
}

impl core::str::FromStr for TokenScheme {
    type Err = TokenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace" => Ok(TokenScheme::Whitespace),
            "bytes_div4" | "bytes/4" => Ok(TokenScheme::BytesDiv4),
            other => match other.strip_prefix("external:") {
                Some(name) if !name.is_empty() => Ok(TokenScheme::External(name.into())),
                _ => Err(TokenError::UnknownScheme(other.into())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenError {
    #[error("no counter registered for external token scheme `{0}`")]
    UnsupportedScheme(String),
    #[error("unknown token scheme `{0}`")]
    UnknownScheme(String),
}

/// Counts whitespace-delimited runs.
pub fn count_whitespace(text: &str) -> TokenCount {
    TokenCount(text.split_whitespace().count() as u64)
}

/// Counts `ceil(bytes / 4)`.
pub fn count_bytes_div4(text: &str) -> TokenCount {
    TokenCount(text.len().div_ceil(4) as u64)
}

/// Counts `text` under a built-in scheme. External schemes need a
/// [`Tokenizer`] carrying a registered counter.
pub fn count_tokens(text: &str, scheme: &TokenScheme) -> Result<TokenCount, TokenError> {
    match scheme {
        TokenScheme::Whitespace => Ok(count_whitespace(text)),
        TokenScheme::BytesDiv4 => Ok(count_bytes_div4(text)),
        TokenScheme::External(name) => Err(TokenError::UnsupportedScheme(name.clone())),
    }
}

pub type ExternalCounter = Arc<dyn Fn(&str) -> u64 + Send + Sync>;

/// A scheme bound to its counting function. Cloning is cheap.
#[derive(Clone)]
pub struct Tokenizer {
    scheme: TokenScheme,
    external: Option<ExternalCounter>,
}

impl Tokenizer {
    /// Binds a built-in scheme. Fails for `External` schemes.
    pub fn new(scheme: TokenScheme) -> Result<Self, TokenError> {
        if let TokenScheme::External(name) = &scheme {
            return Err(TokenError::UnsupportedScheme(name.clone()));
        }
        Ok(Tokenizer { scheme, external: None })
    }

    pub fn whitespace() -> Self {
        Tokenizer { scheme: TokenScheme::Whitespace, external: None }
    }

    pub fn bytes_div4() -> Self {
        Tokenizer { scheme: TokenScheme::BytesDiv4, external: None }
    }

    /// Registers an external counter under `name`.
    pub fn external(name: impl Into<String>, counter: ExternalCounter) -> Self {
        Tokenizer { scheme: TokenScheme::External(name.into()), external: Some(counter) }
    }

    pub fn scheme(&self) -> &TokenScheme {
        &self.scheme
    }

    pub fn count(&self, text: &str) -> TokenCount {
        match (&self.scheme, &self.external) {
            (TokenScheme::Whitespace, _) => count_whitespace(text),
            (TokenScheme::BytesDiv4, _) => count_bytes_div4(text),
            (TokenScheme::External(_), Some(f)) => TokenCount(f(text)),
            // unreachable by construction
            (TokenScheme::External(_), None) => TokenCount::ZERO,
        }
    }
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer::whitespace()
    }
}

impl fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tokenizer").field("scheme", &self.scheme).finish()
    }
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.scheme == other.scheme
    }
}

//! Small text helpers shared by retrieval, heuristics and scoring.

use alloc::string::String;
use alloc::vec::Vec;

/// Lowercases, deletes ASCII punctuation, and splits on whitespace.
pub fn normalize_terms(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(String::from).collect()
}

/// Splits `text` into sentences. A sentence ends at `.`, `!` or `?` followed
/// by whitespace or end of input; the terminator stays with its sentence.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'!' | b'?') {
            let at_end = i + 1 == bytes.len();
            if at_end || bytes[i + 1].is_ascii_whitespace() {
                let s = text[start..=i].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = i + 1;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// The first `n` sentences of `text`, joined by single spaces.
pub fn first_sentences(text: &str, n: usize) -> String {
    let parts = sentences(text);
    let mut out = String::new();
    for s in parts.into_iter().take(n) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(s);
    }
    out
}

/// Substitutes `{name}` placeholders in a single left-to-right pass, so
/// substituted values are never re-scanned. Unknown placeholders are kept.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (name, value) in values {
            let key_len = name.len() + 2;
            if tail.as_bytes().get(key_len - 1) == Some(&b'}') && tail.get(1..key_len - 1) == Some(*name) {
                out.push_str(value);
                rest = &tail[key_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

//! Multi-objective tasks over a local corpus.
//!
//! Independent single questions are bundled into one composite task; the
//! agent's search tool is a deterministic BM25 ranker over a document
//! collection. A synthetic generator produces corpora whose every question is
//! answerable by exactly one document.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text::{first_sentences, normalize_terms};
use crate::tokens::{TokenCount, Tokenizer};

pub const DEFAULT_TOP_K: usize = 3;
pub const SNIPPET_SENTENCES: usize = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("pool has {available} items, cannot compose {requested}")]
    InsufficientPool { available: usize, requested: usize },
    #[error("a task needs at least one objective")]
    NoObjectives,
    #[error("query is empty after normalization")]
    EmptyQuery,
    #[error("k must be positive")]
    ZeroK,
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("QA item `{0}` has no non-empty gold answer")]
    NoGoldAnswer(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub question: String,
    pub gold_answers: Vec<String>,
}

impl QAItem {
    pub fn new(question: impl Into<String>, gold: impl Into<String>) -> Self {
        QAItem { question: question.into(), gold_answers: alloc::vec![gold.into()] }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.gold_answers.is_empty() || self.gold_answers.iter().any(|g| g.trim().is_empty()) {
            return Err(EnvError::NoGoldAnswer(self.question.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedTask {
    pub objectives: Vec<QAItem>,
    pub composite_prompt: String,
    pub seed: u64,
}

impl ComposedTask {
    pub fn new(objectives: Vec<QAItem>, seed: u64) -> Result<Self, EnvError> {
        if objectives.is_empty() {
            return Err(EnvError::NoObjectives);
        }
        for o in &objectives {
            o.validate()?;
        }
        let composite_prompt = composite_prompt(&objectives);
        Ok(ComposedTask { objectives, composite_prompt, seed })
    }

    pub fn len(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectives.is_empty()
    }
}

fn composite_prompt(objectives: &[QAItem]) -> String {
    let mut p = format!(
        "Answer each of the following {} questions. To search, emit \
         <tool_call>{{\"name\": \"search\", \"arguments\": {{\"query\": \"...\"}}}}</tool_call>. \
         When done, reply with one answer per question, in order, one per line, inside <answer></answer>.",
        objectives.len()
    );
    for (i, o) in objectives.iter().enumerate() {
        p.push_str(&format!("\nQ{}: {}", i + 1, o.question));
    }
    p
}

/// Samples `n` items without replacement, in seeded order.
pub fn compose_task(pool: &[QAItem], n: usize, seed: u64) -> Result<ComposedTask, EnvError> {
    if n == 0 {
        return Err(EnvError::NoObjectives);
    }
    if n > pool.len() {
        return Err(EnvError::InsufficientPool { available: pool.len(), requested: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample(&mut rng, pool.len(), n);
    ComposedTask::new(picked.iter().map(|i| pool[i].clone()).collect(), seed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub docs: Vec<Document>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// The terms a document is indexed under: its title followed by its text.
pub fn document_terms(doc: &Document) -> Vec<String> {
    let mut terms = normalize_terms(&doc.title);
    terms.extend(normalize_terms(&doc.text));
    terms
}

/// BM25 inverse document frequency, `ln(1 + (N - df + 0.5) / (df + 0.5))`.
pub fn bm25_idf(num_docs: usize, df: usize) -> f64 {
    libm::log(1.0 + (num_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5))
}

#[derive(Debug, Clone)]
pub struct CorpusIndex {
    docs: Vec<Document>,
    /// term → (doc index, term frequency), doc indices ascending
    postings: BTreeMap<String, Vec<(usize, u32)>>,
    doc_lens: Vec<u32>,
    avg_len: f64,
    params: Bm25Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub ranked: Vec<(String, f64)>,
    pub rendered_observation: String,
    pub observation_len: TokenCount,
}

impl CorpusIndex {
    pub fn build(corpus: &Corpus) -> Result<Self, EnvError> {
        Self::with_params(corpus, Bm25Params::default())
    }

    pub fn with_params(corpus: &Corpus, params: Bm25Params) -> Result<Self, EnvError> {
        let mut seen = BTreeSet::new();
        let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
        let mut doc_lens = Vec::with_capacity(corpus.docs.len());
        for (i, doc) in corpus.docs.iter().enumerate() {
            if !seen.insert(doc.id.as_str()) {
                return Err(EnvError::DuplicateDocId(doc.id.clone()));
            }
            let terms = document_terms(doc);
            doc_lens.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i, n));
            }
        }
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        let avg_len = if doc_lens.is_empty() { 0.0 } else { total as f64 / doc_lens.len() as f64 };
        Ok(CorpusIndex { docs: corpus.docs.clone(), postings, doc_lens, avg_len, params })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_len(&self, doc_index: usize) -> u32 {
        self.doc_lens[doc_index]
    }

    pub fn term_frequency(&self, term: &str) -> u64 {
        self.postings.get(term).map_or(0, |p| p.iter().map(|&(_, n)| n as u64).sum())
    }

    /// BM25 score of every document against `query`, in corpus order.
    /// Each distinct query term contributes once.
    pub fn scores(&self, query: &str) -> Result<Vec<f64>, EnvError> {
        let terms: BTreeSet<String> = normalize_terms(query).into_iter().collect();
        if terms.is_empty() {
            return Err(EnvError::EmptyQuery);
        }
        let n = self.docs.len();
        let mut scores = alloc::vec![0.0; n];
        let Bm25Params { k1, b } = self.params;
        for term in &terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = bm25_idf(n, list.len());
            for &(d, tf) in list {
                let tf = tf as f64;
                let norm = 1.0 - b + b * self.doc_lens[d] as f64 / self.avg_len;
                scores[d] += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        Ok(scores)
    }

    /// Top `min(k, corpus size)` documents by score, ties broken by
    /// ascending document id.
    pub fn search(&self, query: &str, k: usize, tokenizer: &Tokenizer) -> Result<RetrievalResult, EnvError> {
        if k == 0 {
            return Err(EnvError::ZeroK);
        }
        let scores = self.scores(query)?;
        let mut order: Vec<usize> = (0..self.docs.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b].total_cmp(&scores[a]).then_with(|| self.docs[a].id.cmp(&self.docs[b].id))
        });
        order.truncate(k);
        let ranked: Vec<(String, f64)> = order.iter().map(|&i| (self.docs[i].id.clone(), scores[i])).collect();
        let rendered_observation = render_observation(order.iter().map(|&i| &self.docs[i]));
        let observation_len = tokenizer.count(&rendered_observation);
        Ok(RetrievalResult { ranked, rendered_observation, observation_len })
    }
}

/// `[rank] title (id): first two sentences`, one line per document.
pub fn render_observation<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    let mut lines = Vec::new();
    for (rank, d) in docs.into_iter().enumerate() {
        lines.push(format!("[{}] {} ({}): {}", rank + 1, d.title, d.id, first_sentences(&d.text, SNIPPET_SENTENCES)));
    }
    lines.join("\n")
}

const ENTITY_SYLLABLES: [&str; 30] = [
    "ka", "lo", "mi", "ra", "te", "vu", "zen", "dor", "fil", "gar", "hos", "jun", "kel", "mar", "nol", "pri",
    "quo", "sar", "tul", "vor", "wen", "yal", "bri", "cas", "dun", "fet", "gol", "hap", "lim", "ros",
];

const VALUE_SYLLABLES: [&str; 16] = [
    "ab", "ek", "ol", "um", "ix", "ar", "en", "ot", "ul", "ya", "ze", "qi", "ob", "ir", "ad", "oz",
];

const ATTRIBUTES: [&str; 12] = [
    "capital", "founder", "motto", "river", "mascot", "anthem", "currency", "emblem", "harbor", "festival",
    "patron", "summit",
];

const FILLER_WORDS: [&str; 48] = [
    "quiet", "morning", "across", "valley", "people", "often", "market", "light", "stone", "old", "walk",
    "bright", "small", "story", "north", "during", "season", "table", "green", "window", "long", "evening",
    "city", "road", "water", "clear", "many", "house", "field", "early", "song", "village", "along", "near",
    "under", "warm", "wind", "path", "garden", "distant", "few", "still", "open", "letter", "bridge", "cloud",
    "slow", "glass",
];

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn word_from(rng: &mut ChaCha8Rng, syllables: &[&str], min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    let mut w = String::new();
    for _ in 0..n {
        w.push_str(syllables[rng.gen_range(0..syllables.len())]);
    }
    capitalize(&w)
}

/// Generates `num_facts` documents, each holding one fact sentence
/// `The <entity>'s <attribute> is <value>.` followed by a single filler
/// sentence of `filler_tokens_per_doc` words (omitted when zero), and the
/// matching question per document.
pub fn generate_synthetic_corpus(seed: u64, num_facts: usize, filler_tokens_per_doc: usize) -> (Corpus, Vec<QAItem>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = BTreeSet::new();
    let mut docs = Vec::with_capacity(num_facts);
    let mut items = Vec::with_capacity(num_facts);
    for i in 0..num_facts {
        let entity = loop {
            let e = word_from(&mut rng, &ENTITY_SYLLABLES, 2, 3);
            if used.insert(e.clone()) {
                break e;
            }
        };
        let attribute = ATTRIBUTES[rng.gen_range(0..ATTRIBUTES.len())];
        let value = word_from(&mut rng, &VALUE_SYLLABLES, 2, 3);
        let mut text = format!("The {entity}'s {attribute} is {value}.");
        if filler_tokens_per_doc > 0 {
            let words: Vec<&str> =
                (0..filler_tokens_per_doc).map(|_| FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())]).collect();
            text.push(' ');
            text.push_str(&capitalize(&words.join(" ")));
            text.push('.');
        }
        docs.push(Document { id: format!("d{:05}", i + 1), title: entity.clone(), text });
        items.push(QAItem::new(format!("What is the {entity}'s {attribute}?"), value));
    }
    (Corpus { docs }, items)
}

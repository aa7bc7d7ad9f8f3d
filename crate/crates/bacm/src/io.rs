//! Line-delimited JSON readers and writers for corpora, QA pools,
//! trajectories and reports.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use bacm_core::environment::{Corpus, Document, QAItem};
use bacm_core::rollout::Trajectory;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Open { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(|source| IoError::Open { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IoError::Open { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| IoError::Parse { path: path.into(), line: i + 1, msg: e.to_string() })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<usize, IoError> {
    let open = |source| IoError::Open { path: path.into(), source };
    let mut w = BufWriter::new(File::create(path).map_err(open)?);
    let mut n = 0;
    for item in items {
        let line = serde_json::to_string(item).expect("serializable record");
        writeln!(w, "{line}").map_err(open)?;
        n += 1;
    }
    w.flush().map_err(open)?;
    Ok(n)
}

pub fn read_corpus(path: &Path) -> Result<Corpus, IoError> {
    Ok(Corpus { docs: read_jsonl::<Document>(path)? })
}

pub fn read_pool(path: &Path) -> Result<Vec<QAItem>, IoError> {
    read_jsonl(path)
}

/// Settings and seeds echoed into every trajectory record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub policy: String,
    pub objectives: usize,
    pub top_k: usize,
    pub tokenizer: String,
    pub max_turns: u32,
    pub strict: bool,
    pub run_seed: u64,
    pub task_seed: u64,
}

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub format_version: u32,
    pub episode: usize,
    pub config: ConfigEcho,
    #[serde(flatten)]
    pub trajectory: Trajectory,
}

/// One entry of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: String,
    pub config: toml::Table,
    pub artifacts: Vec<Artifact>,
}

/// Collects artifacts written under one output directory.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

impl OutDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(OutDir { root: root.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record(&mut self, rel: &str, kind: &str, records: Option<usize>) {
        self.artifacts.push(Artifact { path: rel.to_string(), kind: kind.to_string(), records });
    }

    pub fn write_jsonl<'a, T: Serialize + 'a>(
        &mut self,
        rel: &str,
        kind: &str,
        items: impl IntoIterator<Item = &'a T>,
    ) -> Result<PathBuf, IoError> {
        let path = self.path(rel);
        let n = write_jsonl(&path, items)?;
        self.record(rel, kind, Some(n));
        Ok(path)
    }

    pub fn write_text(&mut self, rel: &str, kind: &str, text: &str) -> Result<PathBuf, IoError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| IoError::Open { path: parent.into(), source })?;
        }
        std::fs::write(&path, text).map_err(|source| IoError::Open { path: path.clone(), source })?;
        self.record(rel, kind, None);
        Ok(path)
    }

    /// Writes `manifest.json` listing everything recorded so far.
    pub fn finish(self, command: &str, config: toml::Table) -> Result<PathBuf, IoError> {
        let manifest = Manifest { format_version: FORMAT_VERSION, command: command.into(), config, artifacts: self.artifacts };
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        std::fs::write(&path, text + "\n").map_err(|source| IoError::Open { path: path.clone(), source })?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pool.jsonl");
        let items = vec![QAItem::new("q1?", "a1"), QAItem::new("q2?", "a2")];
        assert_eq!(write_jsonl(&p, &items).unwrap(), 2);
        assert_eq!(read_pool(&p).unwrap(), items);

        std::fs::write(&p, "{\"question\":\"q\",\"gold_answers\":[\"a\"]}\n\nnot json\n").unwrap();
        match read_pool(&p) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read_corpus(&dir.path().join("missing.jsonl")), Err(IoError::Open { .. })));
    }
}

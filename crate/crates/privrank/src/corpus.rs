//! Labeled document corpora: loading, validation, and summary statistics.
//!
//! A corpus is a JSONL file, one record per line:
//! `{"id": "...", "text": "...", "label": "privileged"|"not_privileged"}`
//! where `label` is optional. Unknown fields are ignored. Order is the file
//! order and is preserved through a save/load round trip.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gold truth for a document. Exactly two categories exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldLabel {
    Privileged,
    NotPrivileged,
}

impl fmt::Display for GoldLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GoldLabel::Privileged => write!(f, "privileged"),
            GoldLabel::NotPrivileged => write!(f, "not_privileged"),
        }
    }
}

impl GoldLabel {
    /// Case-insensitive parse from the wire form.
    pub fn parse(s: &str) -> Option<GoldLabel> {
        match s.to_ascii_lowercase().as_str() {
            "privileged" => Some(GoldLabel::Privileged),
            "not_privileged" => Some(GoldLabel::NotPrivileged),
            _ => None,
        }
    }
}

/// One corpus item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub gold: Option<GoldLabel>,
    /// Whitespace-delimited token estimate, computed at load time.
    pub approx_tokens: usize,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, gold: Option<GoldLabel>) -> Self {
        let id = id.into();
        let text = text.into();
        let approx_tokens = text.split_whitespace().count();
        Document {
            id,
            text,
            gold,
            approx_tokens,
        }
    }
}

/// An ordered, duplicate-free list of documents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub source_path: String,
}

/// Summary counts over a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub total: usize,
    pub labeled: usize,
    pub privileged: usize,
    /// `privileged / labeled`; absent when no document carries a gold label.
    pub prevalence: Option<f64>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open corpus file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// Wire form of one corpus line.
#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// Load a JSONL corpus, preserving line order.
///
/// Each line must be a JSON object with at least `id` and `text`; `label`
/// is parsed case-insensitively from `privileged` / `not_privileged`.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut documents = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        if raw.id.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: line_no,
                reason: "empty id".into(),
            });
        }
        if raw.text.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: line_no,
                reason: "empty text".into(),
            });
        }
        let gold = match &raw.label {
            Some(l) => Some(
                GoldLabel::parse(l).ok_or_else(|| CorpusError::MalformedRecord {
                    line: line_no,
                    reason: format!("unknown label {l:?}"),
                })?,
            ),
            None => None,
        };
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId(raw.id));
        }
        documents.push(Document::new(raw.id, raw.text, gold));
    }
    if documents.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(Corpus {
        documents,
        source_path: path.display().to_string(),
    })
}

/// Serialize a corpus back to JSONL, preserving document order.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    for doc in &corpus.documents {
        let raw = RawRecord {
            id: doc.id.clone(),
            text: doc.text.clone(),
            label: doc.gold.map(|g| g.to_string()),
        };
        let line = serde_json::to_string(&raw).expect("corpus record serializes");
        writeln!(out, "{line}").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    out.flush().map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Count totals over the documents that carry a gold label.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let total = corpus.documents.len();
    let labeled = corpus.documents.iter().filter(|d| d.gold.is_some()).count();
    let privileged = corpus
        .documents
        .iter()
        .filter(|d| d.gold == Some(GoldLabel::Privileged))
        .count();
    let prevalence = if labeled > 0 {
        Some(privileged as f64 / labeled as f64)
    } else {
        None
    };
    CorpusStats {
        total,
        labeled,
        privileged,
        prevalence,
    }
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }
}

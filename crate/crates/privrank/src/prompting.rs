//! Prompt rendering and free-text verdict parsing.
//!
//! The classifier is asked for a label, supporting quotes, and a short
//! rationale, but real responses follow no strict grammar. [`parse_response`]
//! is therefore total: any string maps to a [`ParsedClassification`], with
//! unparseable input degrading to [`Verdict::Abstain`] rather than an error.
//!
//! Verdict extraction precedence:
//!
//! 1. a line of the form `Classification: <label>` (case and punctuation
//!    tolerant, markdown decoration stripped);
//! 2. the first standalone label: a heading line or a `**bolded**` token;
//! 3. `Abstain`.
//!
//! "Not Privileged" is always checked before "Privileged" at any candidate
//! position, since the former contains the latter as a substring.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Placeholder token substituted with the document text at render time.
pub const DOCUMENT_PLACEHOLDER: &str = "{{DOCUMENT}}";

/// The default zero-shot privilege-review prompt.
pub const DEFAULT_TEMPLATE_BODY: &str = r#"You are an expert legal analyst. Your task is to evaluate whether the following document is protected by legal privilege. Privileged documents include:

- Attorney-Client Communications: Confidential exchanges between a lawyer and their client for the purpose of seeking or giving legal advice.
- Work Product: Materials prepared by or for attorneys in anticipation of litigation.

Steps:

1. Read the document below.
2. Classify it as either "Privileged" or "Not Privileged."
3. If "Privileged," highlight (quote) one or more passages that demonstrate privilege, noting their locations (e.g., paragraph or line numbers).
4. Provide a brief rationale (2-3 sentences) explaining your decision.

Document:

{{DOCUMENT}}
"#;

/// One classification outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Privileged,
    NotPrivileged,
    /// No label could be parsed. Also the representation of trials that
    /// produced no usable response at all.
    Abstain,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Privileged => write!(f, "privileged"),
            Verdict::NotPrivileged => write!(f, "not_privileged"),
            Verdict::Abstain => write!(f, "abstain"),
        }
    }
}

/// Structured form of a raw model response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedClassification {
    pub verdict: Verdict,
    /// Quote-delimited passages following the classification. Every entry is
    /// a verbatim substring of the raw response.
    pub evidence: Vec<String>,
    pub rationale: String,
}

impl ParsedClassification {
    fn abstain() -> Self {
        ParsedClassification {
            verdict: Verdict::Abstain,
            evidence: Vec::new(),
            rationale: String::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template body is empty")]
    EmptyBody,
    #[error("template body must contain the {DOCUMENT_PLACEHOLDER} placeholder exactly once, found {0}")]
    PlaceholderCount(usize),
    #[error("cannot read template {path}: {reason}")]
    Io { path: String, reason: String },
}

/// A prompt body with a single document placeholder, content-hashed so that
/// edits invalidate downstream caches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    body: String,
    version_digest: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        if body.trim().is_empty() {
            return Err(TemplateError::EmptyBody);
        }
        let count = body.matches(DOCUMENT_PLACEHOLDER).count();
        if count != 1 {
            return Err(TemplateError::PlaceholderCount(count));
        }
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        Ok(PromptTemplate {
            name: name.into(),
            body,
            // 64-bit prefix is plenty for content versioning and keeps
            // per-record overhead small.
            version_digest: digest[..16].to_string(),
        })
    }

    /// The built-in zero-shot privilege prompt.
    pub fn default_privilege() -> Self {
        PromptTemplate::new("zero-shot-privilege", DEFAULT_TEMPLATE_BODY)
            .expect("default template is valid")
    }

    /// Load a template from a plain-text file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "template".into());
        PromptTemplate::new(name, body)
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn version_digest(&self) -> &str {
        &self.version_digest
    }
}

/// Substitute the document text into the template, byte-exact otherwise.
///
/// The placeholder is replaced exactly once; a placeholder literal occurring
/// inside the document text is preserved.
pub fn render_prompt(template: &PromptTemplate, doc_text: &str) -> String {
    template.body.replacen(DOCUMENT_PLACEHOLDER, doc_text, 1)
}

/// Lowercase alphanumeric tokens of a string; punctuation and markdown
/// decoration become separators.
fn tokens(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Match a token sequence against a label: the first `privileged` token
/// decides, negated when immediately preceded by `not`.
fn label_from_tokens(toks: &[String]) -> Option<Verdict> {
    let pos = toks.iter().position(|t| t == "privileged")?;
    if pos > 0 && toks[pos - 1] == "not" {
        Some(Verdict::NotPrivileged)
    } else {
        Some(Verdict::Privileged)
    }
}

/// A `Classification: <label>` line, tolerant of case, punctuation, and
/// markdown decoration.
fn classification_line_verdict(line: &str) -> Option<Verdict> {
    let toks = tokens(line);
    if toks.first().map(String::as_str) != Some("classification") {
        return None;
    }
    label_from_tokens(&toks[1..])
}

/// A standalone label: the whole line is the label (heading style), or the
/// line contains a `**bolded**` label token.
fn standalone_verdict(line: &str) -> Option<Verdict> {
    let toks = tokens(line);
    if toks.as_slice() == ["privileged"] {
        return Some(Verdict::Privileged);
    }
    if toks.as_slice() == ["not", "privileged"] {
        return Some(Verdict::NotPrivileged);
    }
    // Bolded token inline: earliest ** span whose content is exactly a label.
    let mut rest = line;
    let mut offset = 0;
    while let Some(start) = rest.find("**") {
        let after = &rest[start + 2..];
        match after.find("**") {
            Some(end) => {
                let inner = &after[..end];
                let inner_toks = tokens(inner);
                if inner_toks.as_slice() == ["not", "privileged"] {
                    return Some(Verdict::NotPrivileged);
                }
                if inner_toks.as_slice() == ["privileged"] {
                    return Some(Verdict::Privileged);
                }
                offset += start + 2 + end + 2;
                rest = &line[offset..];
            }
            None => break,
        }
    }
    None
}

/// Byte range of each line plus the line content, preserving order.
fn lines_with_spans(raw: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, b) in raw.bytes().enumerate() {
        if b == b'\n' {
            out.push((start, i, &raw[start..i]));
            start = i + 1;
        }
    }
    if start <= raw.len() {
        out.push((start, raw.len(), &raw[start..raw.len()]));
    }
    out
}

/// Quote-delimited spans (straight or curly double quotes) within `region`.
fn quoted_spans(region: &str) -> Vec<String> {
    let mut spans = Vec::new();
    let mut rest = region;
    while let Some(open) = find_quote(rest) {
        let after_open = &rest[open.pos + open.len..];
        let close = match find_quote(after_open) {
            Some(q) => q,
            None => break,
        };
        let inner = after_open[..close.pos].trim();
        if !inner.is_empty() {
            spans.push(inner.to_string());
        }
        rest = &after_open[close.pos + close.len..];
    }
    spans
}

struct QuoteHit {
    pos: usize,
    len: usize,
}

fn find_quote(s: &str) -> Option<QuoteHit> {
    s.char_indices()
        .find(|(_, c)| matches!(c, '"' | '\u{201c}' | '\u{201d}'))
        .map(|(pos, c)| QuoteHit {
            pos,
            len: c.len_utf8(),
        })
}

/// Parse a raw model response into a structured verdict.
///
/// Total and deterministic: the same string always yields the same result,
/// and no input raises an error.
pub fn parse_response(raw: &str) -> ParsedClassification {
    let lines = lines_with_spans(raw);

    // Precedence 1: Classification: <label> lines, in document order.
    let mut decision: Option<(usize, Verdict)> = None;
    for (_, end, line) in &lines {
        if let Some(v) = classification_line_verdict(line) {
            decision = Some((*end, v));
            break;
        }
    }
    // Precedence 2: first standalone heading or bolded label token.
    if decision.is_none() {
        for (_, end, line) in &lines {
            if let Some(v) = standalone_verdict(line) {
                decision = Some((*end, v));
                break;
            }
        }
    }
    let (after_pos, verdict) = match decision {
        Some(d) => d,
        None => return ParsedClassification::abstain(),
    };

    let tail = &raw[after_pos.min(raw.len())..];

    // Rationale marker: first line after the classification whose tokens
    // start with "rationale".
    let mut rationale_start: Option<usize> = None;
    for (start, _, line) in lines_with_spans(tail) {
        if tokens(line).first().map(String::as_str) == Some("rationale") {
            rationale_start = Some(start);
            break;
        }
    }

    let (evidence_region, rationale) = match rationale_start {
        Some(start) => {
            let marker_line_text = &tail[start..];
            let first_line_len = marker_line_text
                .find('\n')
                .unwrap_or(marker_line_text.len());
            // Drop the marker word and its separator (searched only on the
            // marker line itself) from the rationale text.
            let body = match marker_line_text[..first_line_len].find(':') {
                Some(c) => &marker_line_text[c + 1..],
                None => match find_ascii_ci(&marker_line_text[..first_line_len], "rationale") {
                    Some(p) => &marker_line_text[p + "rationale".len()..],
                    None => marker_line_text,
                },
            };
            (&tail[..start], body.trim().to_string())
        }
        None => {
            // Trailing prose block: the last blank-line-separated paragraph,
            // unless it is nothing but quoted spans.
            let paragraphs: Vec<&str> = tail
                .split("\n\n")
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .collect();
            let rationale = match paragraphs.last() {
                Some(p) if !is_only_quotes(p) => (*p).to_string(),
                _ => String::new(),
            };
            (tail, rationale)
        }
    };

    ParsedClassification {
        verdict,
        evidence: quoted_spans(evidence_region),
        rationale,
    }
}

/// Case-insensitive ASCII substring search. The returned byte index is a
/// char boundary because the needle starts with an ASCII byte.
fn find_ascii_ci(haystack: &str, needle: &str) -> Option<usize> {
    haystack
        .as_bytes()
        .windows(needle.len())
        .position(|w| w.eq_ignore_ascii_case(needle.as_bytes()))
}

/// True when removing every quoted span leaves no letters or digits.
fn is_only_quotes(paragraph: &str) -> bool {
    let mut stripped = paragraph.to_string();
    for span in quoted_spans(paragraph) {
        stripped = stripped.replace(&span, "");
    }
    !stripped.chars().any(|c| c.is_alphanumeric())
}

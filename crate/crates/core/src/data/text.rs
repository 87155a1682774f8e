//! Word alignments and the word-embedding table.
//!
//! Alignments are JSON arrays of `{token, start_s, end_s}` records where an
//! empty token denotes silence. The embedding table is a text file with one
//! `token v1 ... v_d` line per word; the reserved tokens `<empty>` (silence)
//! and `<unk>` (unknown-word fallback) must both be present.

use crate::error::{Error, Result};
use crate::math::Mat;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const EMPTY_TOKEN: &str = "<empty>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignEntry {
    pub token: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordAlignment {
    entries: Vec<AlignEntry>,
}

impl WordAlignment {
    pub fn new(entries: Vec<AlignEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if !(e.start_s < e.end_s) {
                return Err(Error::Argument(format!(
                    "alignment entry {i}: start {} must precede end {}",
                    e.start_s, e.end_s
                )));
            }
            if i > 0 && e.start_s < entries[i - 1].end_s {
                return Err(Error::Argument(format!(
                    "alignment entries {} and {i} overlap or are unsorted",
                    i - 1
                )));
            }
        }
        Ok(WordAlignment { entries })
    }

    pub fn entries(&self) -> &[AlignEntry] {
        &self.entries
    }

    /// The token covering time `t`, if any. Silence entries return `""`.
    pub fn token_at(&self, t: f64) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.start_s <= t && t < e.end_s)
            .map(|e| e.token.as_str())
    }

    /// True when the whole interval `[start, end)` lies inside empty-word
    /// spans or outside any entry.
    pub fn is_silent_span(&self, start: f64, end: f64) -> bool {
        !self
            .entries
            .iter()
            .any(|e| !e.token.is_empty() && e.start_s < end && start < e.end_s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<AlignEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        WordAlignment::new(entries).map_err(|e| Error::schema(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.entries).expect("serializable");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct WordEmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordEmbeddingTable {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        for (tok, v) in &vectors {
            if v.len() != dim {
                return Err(Error::Argument(format!(
                    "embedding for `{tok}` has {} dims, expected {dim}",
                    v.len()
                )));
            }
        }
        for required in [EMPTY_TOKEN, UNK_TOKEN] {
            if !vectors.contains_key(required) {
                return Err(Error::Argument(format!(
                    "embedding table must define the reserved token `{required}`"
                )));
            }
        }
        Ok(WordEmbeddingTable { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Vector for a token: `""` maps to `<empty>`, anything unknown to
    /// `<unk>`.
    pub fn vector(&self, token: &str) -> &[f64] {
        let key = if token.is_empty() { EMPTY_TOKEN } else { token };
        self.vectors
            .get(key)
            .unwrap_or_else(|| &self.vectors[UNK_TOKEN])
    }

    pub fn empty_vector(&self) -> &[f64] {
        &self.vectors[EMPTY_TOKEN]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts
                .next()
                .ok_or_else(|| Error::parse(path, lineno + 1, "missing token"))?;
            let values: std::result::Result<Vec<f64>, _> =
                parts.map(|p| p.parse::<f64>()).collect();
            let values =
                values.map_err(|_| Error::parse(path, lineno + 1, "bad embedding value"))?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::schema(
                        path,
                        format!("line {}: dim {} != {d}", lineno + 1, values.len()),
                    ))
                }
                _ => {}
            }
            vectors.insert(token.to_string(), values);
        }
        let dim = dim.ok_or_else(|| Error::schema(path, "empty table"))?;
        WordEmbeddingTable::new(dim, vectors).map_err(|e| Error::schema(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        let mut out = String::new();
        for tok in tokens {
            out.push_str(tok);
            for v in &self.vectors[tok] {
                out.push(' ');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Per-frame text features: frame `k` carries the embedding of the word
/// whose interval contains time `k / fps`; silences, gaps, and frames past
/// the last entry carry the empty-word vector.
pub fn align_text_to_frames(
    align: &WordAlignment,
    table: &WordEmbeddingTable,
    fps: f64,
    n_frames: usize,
) -> Mat {
    assert!(n_frames >= 1, "need at least one frame");
    let mut out = Mat::zeros(n_frames, table.dim());
    for k in 0..n_frames {
        let t = k as f64 / fps;
        let vec = match align.token_at(t) {
            Some(token) => table.vector(token),
            None => table.empty_vector(),
        };
        out.row_mut(k).copy_from_slice(vec);
    }
    out
}

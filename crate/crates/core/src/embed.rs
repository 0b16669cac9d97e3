//! Deterministic text embeddings.
//!
//! The default backend is signed feature hashing over word unigrams and
//! within-word character n-grams. An `external` backend serves precomputed
//! vectors from a JSONL file so a neural encoder can be plugged in offline.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    s.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    HashedNgram,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub char_ngram_range: (usize, usize),
    pub use_word_unigrams: bool,
    pub hash_algorithm: String,
    /// JSONL file of `{text, vector}` rows; only read by the external kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_path: Option<PathBuf>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::HashedNgram,
            dim: 512,
            char_ngram_range: (3, 5),
            use_word_unigrams: true,
            hash_algorithm: "fnv1a64".to_string(),
            external_path: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid embedder config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("no precomputed embedding for {0:?}")]
    Missing(String),
    #[error("external embedding file {path}:{line}: {message}")]
    ExternalFile { path: String, line: usize, message: String },
    #[error("failed to read external embeddings: {0}")]
    Io(#[from] std::io::Error),
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim < 8 {
            return Err(EmbedError::InvalidConfig(format!("dim must be >= 8, got {}", self.dim)));
        }
        let (lo, hi) = self.char_ngram_range;
        if lo == 0 || lo > hi {
            return Err(EmbedError::InvalidConfig(format!(
                "char_ngram_range must satisfy 1 <= lower <= upper, got {lo}..={hi}"
            )));
        }
        if self.hash_algorithm != "fnv1a64" {
            return Err(EmbedError::InvalidConfig(format!(
                "unsupported hash algorithm `{}`",
                self.hash_algorithm
            )));
        }
        if self.kind == EmbedderKind::External && self.external_path.is_none() {
            return Err(EmbedError::InvalidConfig(
                "external embedder needs external_path".to_string(),
            ));
        }
        Ok(())
    }
}

/// A fixed-dimension vector that is either unit-norm or all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vector: Vec<f64>,
    norm: f64,
}

impl Embedding {
    /// L2-normalizes `raw`; an all-zero input stays zero.
    pub fn normalized(mut raw: Vec<f64>) -> Self {
        let norm = l2(&raw);
        if norm > 0.0 {
            raw.iter_mut().for_each(|x| *x /= norm);
        }
        let norm = l2(&raw);
        Embedding { vector: raw, norm }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|x| *x == 0.0)
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Features extracted from normalized text: each word (maximal alphanumeric
/// run) and each character n-gram inside a word.
pub fn features(config: &EmbedderConfig, text: &str) -> Vec<String> {
    let normalized = text::normalize(text);
    let (lo, hi) = config.char_ngram_range;
    let mut out = Vec::new();
    for word in normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        if config.use_word_unigrams {
            out.push(word.to_string());
        }
        let chars: Vec<char> = word.chars().collect();
        for n in lo..=hi {
            if n > chars.len() {
                break;
            }
            out.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
        }
    }
    out
}

/// Hashed n-gram embedding of `text`.
pub fn embed_hashed(config: &EmbedderConfig, text: &str) -> Embedding {
    let mut raw = vec![0.0; config.dim];
    for feature in features(config, text) {
        let h = fnv1a64(&feature);
        let idx = (h % config.dim as u64) as usize;
        raw[idx] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    Embedding::normalized(raw)
}

/// Cosine similarity; 0.0 when either side is all zeros.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let (na, nb) = (l2(a), l2(b));
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Deserialize)]
struct ExternalRow {
    text: String,
    vector: Vec<f64>,
}

/// Configured embedding backend.
#[derive(Debug, Clone)]
pub struct Embedder {
    config: EmbedderConfig,
    table: Option<HashMap<String, Embedding>>,
}

impl Embedder {
    pub fn new(config: EmbedderConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let table = match config.kind {
            EmbedderKind::HashedNgram => None,
            EmbedderKind::External => {
                let path = config.external_path.as_ref().expect("validated");
                Some(load_external(path, config.dim)?)
            }
        };
        Ok(Embedder { config, table })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        match &self.table {
            None => Ok(embed_hashed(&self.config, text)),
            Some(table) => {
                let key = text::normalize(text);
                table.get(&key).cloned().ok_or(EmbedError::Missing(key))
            }
        }
    }

    pub fn embed_batch<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Embedding>, EmbedError> {
        texts.iter().map(|t| self.embed(t.as_ref())).collect()
    }
}

fn load_external(path: &Path, dim: usize) -> Result<HashMap<String, Embedding>, EmbedError> {
    let file = std::fs::File::open(path)?;
    let mut table = HashMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| EmbedError::ExternalFile {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let row: ExternalRow = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if row.vector.len() != dim {
            return Err(err(format!("expected {dim} values, found {}", row.vector.len())));
        }
        if row.vector.iter().any(|x| !x.is_finite()) {
            return Err(err("non-finite value".to_string()));
        }
        table.insert(text::normalize(&row.text), Embedding::normalized(row.vector));
    }
    Ok(table)
}

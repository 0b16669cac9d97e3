//! The JSONL record format shared by training, evaluation and generation.
//!
//! One object per line:
//! `{"query", "tool_category", "entities"?, "reasoning"?, "review_status"?, "provenance"?}`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::classifier::LabeledExample;
use crate::registry::{EntityMap, Registry, SchemaViolations, ToolCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator_model: String,
    pub seed_indices: Vec<usize>,
    pub timestamp: String,
}

/// A raw JSONL row. Entities are kept as untyped JSON until validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub query: String,
    pub tool_category: ToolCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Map<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_status: Option<ReviewStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// A labeled query whose entities passed schema validation.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSample {
    pub query: String,
    pub tool: ToolCategory,
    pub entities: EntityMap,
    pub reasoning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub sample: SeedSample,
    pub review_status: ReviewStatus,
    pub provenance: Provenance,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: SchemaViolations,
    },
    #[error("line {line}: query is empty")]
    EmptyQuery { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SeedSample {
    pub fn new(query: impl Into<String>, tool: ToolCategory, entities: EntityMap) -> Self {
        SeedSample { query: query.into(), tool, entities, reasoning: None }
    }

    pub fn from_record(record: &DatasetRecord, registry: &Registry) -> Result<Self, SchemaViolations> {
        let raw = record.entities.clone().unwrap_or_default();
        let entities = registry.validate_entities(record.tool_category, &raw)?;
        Ok(SeedSample {
            query: record.query.clone(),
            tool: record.tool_category,
            entities,
            reasoning: record.reasoning.clone(),
        })
    }

    pub fn to_record(&self) -> DatasetRecord {
        DatasetRecord {
            query: self.query.clone(),
            tool_category: self.tool,
            entities: Some(self.entities.to_json()),
            reasoning: self.reasoning.clone(),
            review_status: None,
            provenance: None,
        }
    }

    pub fn labeled(&self) -> LabeledExample {
        LabeledExample::new(self.query.clone(), self.tool)
    }
}

impl GeneratedSample {
    pub fn to_record(&self) -> DatasetRecord {
        DatasetRecord {
            review_status: Some(self.review_status),
            provenance: Some(self.provenance.clone()),
            ..self.sample.to_record()
        }
    }
}

/// Parses JSONL text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_jsonl(text: &str) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(line)
            .map_err(|e| DatasetError::Parse { line: i + 1, message: e.to_string() })?;
        if record.query.trim().is_empty() {
            return Err(DatasetError::EmptyQuery { line: i + 1 });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, DatasetError> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

/// Parses and validates every record into a [`SeedSample`].
pub fn parse_samples(text: &str, registry: &Registry) -> Result<Vec<SeedSample>, DatasetError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let record = parse_jsonl(raw).map_err(|e| relocate(e, line))?.remove(0);
        let sample = SeedSample::from_record(&record, registry)
            .map_err(|source| DatasetError::Invalid { line, source })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn read_samples(path: impl AsRef<Path>, registry: &Registry) -> Result<Vec<SeedSample>, DatasetError> {
    parse_samples(&std::fs::read_to_string(path)?, registry)
}

fn relocate(err: DatasetError, line: usize) -> DatasetError {
    match err {
        DatasetError::Parse { message, .. } => DatasetError::Parse { line, message },
        DatasetError::EmptyQuery { .. } => DatasetError::EmptyQuery { line },
        other => other,
    }
}

pub fn to_jsonl<'a>(records: impl IntoIterator<Item = &'a DatasetRecord>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a DatasetRecord>,
) -> Result<(), DatasetError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(to_jsonl(records).as_bytes())?;
    f.flush()?;
    Ok(())
}

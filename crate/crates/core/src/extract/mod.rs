//! Entity extraction: chat backends, structured-output parsing and
//! schema-validated results.

mod gazetteer;
mod http;
mod mock;
mod parse;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use uuid::Uuid;

use crate::prompts::{PromptError, PromptPool};
use crate::registry::{EntityMap, Registry, SchemaViolations, ToolCategory};

pub use gazetteer::Gazetteer;
pub use http::{EndpointConfig, HttpBackend, MessageRole};
pub use mock::{mock_extract, mock_extract_with, FailingBackend, LatencyModel, MockBackend};
pub use parse::{parse_structured, ParseStatus, Parsed, StructuredError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceSettings {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        InferenceSettings { temperature: 0.01, max_tokens: 1024 }
    }
}

impl InferenceSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be at least 1".into());
        }
        Ok(())
    }
}

/// Side-channel describing what a request is for. Real backends ignore it;
/// the mock uses it instead of reading the prompt back.
#[derive(Debug, Clone, PartialEq)]
pub enum RequestHint {
    Extract { tool: ToolCategory, query: String },
    Joint { query: String },
    Generate { tool: ToolCategory, count: usize, seeds: Vec<(String, Map<String, Value>)>, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub prompt: String,
    pub settings: InferenceSettings,
    pub request_id: Uuid,
    pub hint: Option<RequestHint>,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>, settings: InferenceSettings) -> Result<Self, ExtractError> {
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(ExtractError::InvalidQuery("prompt is empty".into()));
        }
        Ok(ChatRequest { prompt, settings, request_id: Uuid::new_v4(), hint: None })
    }

    pub fn with_hint(mut self, hint: RequestHint) -> Self {
        self.hint = Some(hint);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendError {
    #[error("backend timed out after {after_ms} ms")]
    Timeout { after_ms: u64 },
    #[error("transport error: {message}")]
    Transport { message: String },
    #[error("backend returned HTTP {code}: {body}")]
    HttpStatus { code: u16, body: String },
    #[error("backend response was not understood: {message}")]
    InvalidResponse { message: String },
}

impl BackendError {
    pub fn timeout(after: Duration) -> Self {
        BackendError::Timeout { after_ms: after.as_millis() as u64 }
    }

    /// Timeouts, transport failures and 5xx responses may succeed on retry.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout { .. } | BackendError::Transport { .. } => true,
            BackendError::HttpStatus { code, .. } => *code >= 500,
            BackendError::InvalidResponse { .. } => false,
        }
    }
}

/// A chat-completion endpoint. Implementations must allow concurrent calls
/// and enforce their own timeout.
pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError>;

    fn name(&self) -> &str;
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl ExtractError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ExtractError::Backend(e) if e.is_retryable())
    }
}

/// Why a completion produced no entities.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum ExtractFailure {
    #[error(transparent)]
    Parse { error: StructuredError },
    #[error(transparent)]
    Schema { violations: SchemaViolations },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub tool: ToolCategory,
    /// Empty when `parse_status` is `Failed`.
    pub entities: EntityMap,
    pub raw_text: String,
    pub parse_status: ParseStatus,
    pub failure: Option<ExtractFailure>,
}

/// Renders `tool`'s prompt, sends exactly one request and validates the
/// parsed object. Parse and schema problems come back as a `Failed` result;
/// prompt and backend problems are errors.
pub fn extract_entities(
    backend: &dyn ChatBackend,
    pool: &PromptPool,
    registry: &Registry,
    tool: ToolCategory,
    query: &str,
    settings: &InferenceSettings,
) -> Result<ExtractionResult, ExtractError> {
    if query.trim().is_empty() {
        return Err(ExtractError::InvalidQuery("query is empty".into()));
    }
    let template = pool.select(tool)?;
    let request = ChatRequest::new(template.render(query), *settings)?
        .with_hint(RequestHint::Extract { tool, query: query.to_string() });
    let raw_text = backend.send(&request)?;
    Ok(interpret(registry, tool, raw_text))
}

fn interpret(registry: &Registry, tool: ToolCategory, raw_text: String) -> ExtractionResult {
    let failed = |failure| ExtractionResult {
        tool,
        entities: EntityMap::new(),
        raw_text: raw_text.clone(),
        parse_status: ParseStatus::Failed,
        failure: Some(failure),
    };
    let parsed = match parse_structured(&raw_text) {
        Ok(p) => p,
        Err(error) => return failed(ExtractFailure::Parse { error }),
    };
    match registry.validate_entities(tool, &parsed.object) {
        Ok(entities) => ExtractionResult {
            tool,
            entities,
            raw_text,
            parse_status: parsed.status,
            failure: None,
        },
        Err(violations) => failed(ExtractFailure::Schema { violations }),
    }
}

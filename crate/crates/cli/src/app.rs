//! Builds the shared routing stack from an [`AppConfig`].

use std::sync::Arc;
use std::time::Duration;

use autoquery::classifier::{load_model, train, ClassifierError, ClassifierModel, TrainConfig};
use autoquery::datagen::GenError;
use autoquery::dataset::DatasetError;
use autoquery::desk::{load_desk_dataset, CorruptBundle};
use autoquery::embed::EmbedderConfig;
use autoquery::eval::EvalError;
use autoquery::extract::{BackendError, ChatBackend, HttpBackend, LatencyModel, MockBackend};
use autoquery::pipeline::{PipelineError, Router};
use autoquery::prompts::{PromptError, PromptPool};
use autoquery::registry::Registry;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{AppConfig, BackendKind, ConfigError};

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Desk(#[from] CorruptBundle),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    /// Routing finished but recorded an extraction problem.
    #[error("extraction failed: {0}")]
    Degraded(Value),
}

impl AppError {
    pub fn kind(&self) -> &'static str {
        match self {
            AppError::Config(_) => "config",
            AppError::Classifier(_) => "classifier",
            AppError::Prompt(_) => "prompt",
            AppError::Dataset(_) => "dataset",
            AppError::Desk(_) => "desk_dataset",
            AppError::Backend(_) => "backend",
            AppError::Pipeline(_) => "pipeline",
            AppError::Eval(_) => "eval",
            AppError::Generation(_) => "generation",
            AppError::Io { .. } => "io",
            AppError::Usage(_) => "usage",
            AppError::Degraded(_) => "degraded",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Config(_) => 2,
            AppError::Degraded(_) => 3,
            _ => 1,
        }
    }

    /// `{"error": {"kind", "message", ...}}` for standard error.
    pub fn to_json(&self) -> Value {
        let mut body = json!({"kind": self.kind(), "message": self.to_string()});
        match self {
            AppError::Degraded(detail) => body["detail"] = detail.clone(),
            AppError::Backend(e) => body["retryable"] = json!(e.is_retryable()),
            AppError::Pipeline(PipelineError::Backend(e)) => body["retryable"] = json!(e.is_retryable()),
            _ => {}
        }
        json!({ "error": body })
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> AppError {
        let context = context.into();
        move |source| AppError::Io { context, source }
    }
}

/// The model from `model_path`, or one trained on the bundled desk set with
/// default settings.
pub fn load_classifier(cfg: &AppConfig) -> Result<ClassifierModel, AppError> {
    match &cfg.model_path {
        Some(p) => Ok(load_model(p)?),
        None => {
            tracing::info!("no model_path configured; training on the bundled desk set");
            let examples: Vec<_> = load_desk_dataset()?.train.iter().map(|s| s.labeled()).collect();
            Ok(train(&examples, &TrainConfig::default(), EmbedderConfig::default())?)
        }
    }
}

pub fn load_pool(cfg: &AppConfig, registry: &Registry) -> Result<PromptPool, AppError> {
    Ok(match &cfg.prompt_dir {
        Some(dir) => PromptPool::load_dir(dir, registry)?,
        None => PromptPool::bundled(registry)?,
    })
}

/// Must run outside an async runtime when the backend is http.
pub fn build_backend(cfg: &AppConfig, registry: &Registry, model: Arc<ClassifierModel>) -> Result<Arc<dyn ChatBackend>, AppError> {
    Ok(match cfg.backend {
        BackendKind::Mock => {
            let latency = LatencyModel::new(
                Duration::from_secs_f64(cfg.mock.base_ms / 1e3),
                Duration::from_secs_f64(cfg.mock.per_token_ms / 1e3),
            );
            Arc::new(MockBackend::new(registry.clone()).with_classifier(model).with_latency(latency))
        }
        BackendKind::Http => Arc::new(HttpBackend::new(cfg.endpoint.clone())?),
    })
}

pub fn build_router(cfg: &AppConfig) -> Result<Router, AppError> {
    let registry = Registry::default();
    let model = Arc::new(load_classifier(cfg)?);
    let pool = Arc::new(load_pool(cfg, &registry)?);
    let backend = build_backend(cfg, &registry, model.clone())?;
    Ok(Router { model, pool, registry: Arc::new(registry), backend, settings: cfg.inference })
}

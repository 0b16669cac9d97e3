//! Layered settings: TOML file, then `AUTOQUERY_*` environment variables,
//! then command-line flags.

use std::path::{Path, PathBuf};

use autoquery::extract::{EndpointConfig, InferenceSettings};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

/// Simulated completion latency for the mock backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSettings {
    pub base_ms: f64,
    pub per_token_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Trained classifier artifact. When unset, a model is trained in memory
    /// on the bundled desk set.
    pub model_path: Option<PathBuf>,
    /// Directory of `*.prompt` files. When unset, the bundled pool is used.
    pub prompt_dir: Option<PathBuf>,
    pub backend: BackendKind,
    pub endpoint: EndpointConfig,
    pub inference: InferenceSettings,
    pub mock: MockSettings,
    pub bind: String,
    /// Upper bound on concurrently processed queries.
    pub parallelism: usize,
    pub log_level: String,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            model_path: None,
            prompt_dir: None,
            backend: BackendKind::Mock,
            endpoint: EndpointConfig::default(),
            inference: InferenceSettings::default(),
            mock: MockSettings::default(),
            bind: "127.0.0.1:8080".into(),
            parallelism: 8,
            log_level: "info".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {path} is invalid: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {var}: {message}")]
    Env { var: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// One layer of optional settings. Both the environment and the flags are
/// read into this shape and applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub model_path: Option<PathBuf>,
    pub prompt_dir: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub endpoint_url: Option<String>,
    pub endpoint_model: Option<String>,
    pub api_key: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_retries: Option<u32>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub mock_base_ms: Option<f64>,
    pub mock_per_token_ms: Option<f64>,
    pub bind: Option<String>,
    pub parallelism: Option<usize>,
    pub log_level: Option<String>,
}

pub const ENV_PREFIX: &str = "AUTOQUERY_";

fn parse_env<T: std::str::FromStr>(var: &str, raw: Option<String>) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.map(|v| {
        v.trim().parse().map_err(|e: T::Err| ConfigError::Env { var: var.to_string(), message: e.to_string() })
    })
    .transpose()
}

impl Overrides {
    /// Reads `AUTOQUERY_*` variables through `lookup` (normally
    /// `std::env::var`). Empty values count as unset.
    pub fn from_env(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let get = |name: &str| lookup(&format!("{ENV_PREFIX}{name}")).filter(|v| !v.trim().is_empty());
        let typed = |name: &str| (format!("{ENV_PREFIX}{name}"), get(name));
        let backend = match get("BACKEND") {
            None => None,
            Some(v) => Some(match v.trim().to_ascii_lowercase().as_str() {
                "mock" => BackendKind::Mock,
                "http" => BackendKind::Http,
                other => {
                    return Err(ConfigError::Env {
                        var: format!("{ENV_PREFIX}BACKEND"),
                        message: format!("expected mock or http, got {other:?}"),
                    })
                }
            }),
        };
        let (v, r) = typed("TIMEOUT_MS");
        let timeout_ms = parse_env(&v, r)?;
        let (v, r) = typed("MAX_RETRIES");
        let max_retries = parse_env(&v, r)?;
        let (v, r) = typed("TEMPERATURE");
        let temperature = parse_env(&v, r)?;
        let (v, r) = typed("MAX_TOKENS");
        let max_tokens = parse_env(&v, r)?;
        let (v, r) = typed("MOCK_BASE_MS");
        let mock_base_ms = parse_env(&v, r)?;
        let (v, r) = typed("MOCK_PER_TOKEN_MS");
        let mock_per_token_ms = parse_env(&v, r)?;
        let (v, r) = typed("PARALLELISM");
        let parallelism = parse_env(&v, r)?;
        Ok(Overrides {
            model_path: get("MODEL_PATH").map(PathBuf::from),
            prompt_dir: get("PROMPT_DIR").map(PathBuf::from),
            backend,
            endpoint_url: get("ENDPOINT_URL"),
            endpoint_model: get("ENDPOINT_MODEL"),
            api_key: get("API_KEY"),
            timeout_ms,
            max_retries,
            temperature,
            max_tokens,
            mock_base_ms,
            mock_per_token_ms,
            bind: get("BIND"),
            parallelism,
            log_level: get("LOG_LEVEL"),
        })
    }

    pub fn apply(&self, cfg: &mut AppConfig) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        if self.model_path.is_some() {
            cfg.model_path = self.model_path.clone();
        }
        if self.prompt_dir.is_some() {
            cfg.prompt_dir = self.prompt_dir.clone();
        }
        if self.api_key.is_some() {
            cfg.endpoint.api_key = self.api_key.clone();
        }
        set(&mut cfg.backend, &self.backend);
        set(&mut cfg.endpoint.url, &self.endpoint_url);
        set(&mut cfg.endpoint.model, &self.endpoint_model);
        set(&mut cfg.endpoint.timeout_ms, &self.timeout_ms);
        set(&mut cfg.endpoint.max_retries, &self.max_retries);
        set(&mut cfg.inference.temperature, &self.temperature);
        set(&mut cfg.inference.max_tokens, &self.max_tokens);
        set(&mut cfg.mock.base_ms, &self.mock_base_ms);
        set(&mut cfg.mock.per_token_ms, &self.mock_per_token_ms);
        set(&mut cfg.bind, &self.bind);
        set(&mut cfg.parallelism, &self.parallelism);
        set(&mut cfg.log_level, &self.log_level);
    }
}

impl AppConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text, path)
    }

    /// File (if any), then environment, then flags. Not yet validated.
    pub fn layered(file: Option<&Path>, env: &Overrides, flags: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        env.apply(&mut cfg);
        flags.apply(&mut cfg);
        Ok(cfg)
    }

    /// [`AppConfig::layered`] followed by [`AppConfig::validate`].
    pub fn resolve(file: Option<&Path>, env: &Overrides, flags: &Overrides) -> Result<Self, ConfigError> {
        let cfg = Self::layered(file, env, flags)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        self.inference.validate().map_err(ConfigError::Invalid)?;
        if self.backend == BackendKind::Http && self.endpoint.url.trim().is_empty() {
            return Err(ConfigError::Invalid("the http backend needs endpoint.url".into()));
        }
        let m = self.mock;
        if !(m.base_ms >= 0.0 && m.per_token_ms >= 0.0 && m.base_ms.is_finite() && m.per_token_ms.is_finite()) {
            return Err(ConfigError::Invalid("mock latencies must be finite and non-negative".into()));
        }
        if let Some(dir) = &self.prompt_dir {
            if !dir.is_dir() {
                return Err(ConfigError::Invalid(format!("prompt_dir {} is not a directory", dir.display())));
            }
        }
        if let Some(p) = &self.model_path {
            if !p.is_file() {
                return Err(ConfigError::Invalid(format!(
                    "model_path {} does not exist; run `autoquery train --out {}` first",
                    p.display(),
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

//! Versioned JSON persistence for [`ClassifierModel`].

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde_json::{json, Map, Value};

use super::{ClassifierError, ClassifierModel, TrainConfig};
use crate::embed::{Embedder, EmbedderConfig};
use crate::registry::ToolCategory;

pub const ARTIFACT_VERSION: u64 = 1;

impl ClassifierModel {
    /// Artifact layout: matrices are flat row-major arrays whose shapes
    /// follow from `train_config.projection_dim`, `embedder.dim` and the
    /// number of labels.
    pub fn to_artifact(&self) -> Value {
        json!({
            "artifact_version": ARTIFACT_VERSION,
            "embedder": self.embedder.config(),
            "labels": self.labels,
            "projection": self.projection.iter().collect::<Vec<_>>(),
            "head_weights": self.head_weights.iter().collect::<Vec<_>>(),
            "head_bias": self.head_bias.to_vec(),
            "train_config": self.train_config,
        })
    }

    pub fn from_artifact(value: &Value) -> Result<Self, ClassifierError> {
        let obj = value.as_object().ok_or_else(|| malformed("$", "expected a JSON object"))?;
        let version = obj
            .get("artifact_version")
            .ok_or_else(|| malformed("artifact_version", "missing"))?
            .as_u64()
            .ok_or_else(|| malformed("artifact_version", "expected a non-negative integer"))?;
        if version != ARTIFACT_VERSION {
            return Err(ClassifierError::VersionMismatch { found: version, expected: ARTIFACT_VERSION });
        }
        let embedder_config: EmbedderConfig = field(obj, "embedder")?;
        let labels: Vec<ToolCategory> = field(obj, "labels")?;
        let train_config: TrainConfig = field(obj, "train_config")?;
        if labels.is_empty() {
            return Err(malformed("labels", "must not be empty"));
        }

        let dim = embedder_config.dim;
        let k = train_config.projection_dim;
        let projection = matrix(obj, "projection", k, dim)?;
        let head_weights = matrix(obj, "head_weights", labels.len(), k)?;
        let head_bias = Array1::from(floats(obj, "head_bias", labels.len())?);

        let embedder = Embedder::new(embedder_config)?;
        Ok(ClassifierModel { embedder, projection, head_weights, head_bias, labels, train_config })
    }
}

fn malformed(path: &str, message: impl Into<String>) -> ClassifierError {
    ClassifierError::MalformedArtifact { path: path.to_string(), message: message.into() }
}

fn field<T: DeserializeOwned>(obj: &Map<String, Value>, name: &str) -> Result<T, ClassifierError> {
    let v = obj.get(name).ok_or_else(|| malformed(name, "missing"))?;
    serde_json::from_value(v.clone()).map_err(|e| malformed(name, e.to_string()))
}

fn floats(obj: &Map<String, Value>, name: &str, len: usize) -> Result<Vec<f64>, ClassifierError> {
    let arr = obj
        .get(name)
        .ok_or_else(|| malformed(name, "missing"))?
        .as_array()
        .ok_or_else(|| malformed(name, "expected an array"))?;
    if arr.len() != len {
        return Err(malformed(name, format!("expected {len} values, found {}", arr.len())));
    }
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| malformed(&format!("{name}[{i}]"), "expected a finite number"))
        })
        .collect()
}

fn matrix(
    obj: &Map<String, Value>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Array2<f64>, ClassifierError> {
    let data = floats(obj, name, rows * cols)?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

pub fn save_model(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
    let mut text = serde_json::to_string(&model.to_artifact()).expect("artifact serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClassifierModel, ClassifierError> {
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| {
        malformed("$", format!("invalid JSON at line {} column {}: {e}", e.line(), e.column()))
    })?;
    ClassifierModel::from_artifact(&value)
}

//! Few-shot tool classifier.
//!
//! Training follows the SetFit recipe at desk scale: sample contrastive
//! pairs, adapt a linear projection over frozen embeddings with a squared
//! cosine loss, then fit a multinomial logistic head on the projected
//! vectors.

mod artifact;
mod loss;
mod pairs;

use indexmap::IndexMap;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, Embedder, EmbedderConfig};
use crate::registry::{ToolCategory, ALL_TOOLS};

pub use artifact::{load_model, save_model, ARTIFACT_VERSION};
pub use loss::contrastive_loss;
pub use pairs::{generate_pairs, ContrastivePair};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub query: String,
    pub tool: ToolCategory,
}

impl LabeledExample {
    pub fn new(query: impl Into<String>, tool: ToolCategory) -> Self {
        Self { query: query.into(), tool }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Contrastive pairs generated per training example, per polarity.
    pub iterations: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub projection_dim: usize,
    pub head_iterations: usize,
    pub head_learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            learning_rate: 2e-5,
            warmup_ratio: 0.1,
            batch_size: 16,
            epochs: 1,
            projection_dim: 256,
            head_iterations: 500,
            head_learning_rate: 1.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.to_string()));
        if self.iterations == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("iterations, batch_size and epochs must be positive");
        }
        if self.projection_dim == 0 || self.head_iterations == 0 {
            return bad("projection_dim and head_iterations must be positive");
        }
        if !(self.learning_rate > 0.0 && self.head_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("insufficient class data: {0}")]
    InsufficientClassData(String),
    #[error("training example {0} has an empty query")]
    EmptyQuery(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at {phase} step {step}")]
    NonFiniteLoss { phase: &'static str, step: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("artifact version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("malformed model artifact at `{path}`: {message}")]
    MalformedArtifact { path: String, message: String },
    #[error("model artifact I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

/// A trained classifier. Immutable once built; safe to share across threads.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    embedder: Embedder,
    projection: Array2<f64>,
    head_weights: Array2<f64>,
    head_bias: Array1<f64>,
    labels: Vec<ToolCategory>,
    train_config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tool: ToolCategory,
    /// Aligned with [`ClassifierModel::labels`].
    pub probabilities: Vec<f64>,
    pub labels: Vec<ToolCategory>,
}

impl Prediction {
    /// Probability per registry tool; tools the model never saw get 0.
    pub fn probability_map(&self) -> IndexMap<ToolCategory, f64> {
        ALL_TOOLS
            .iter()
            .map(|t| {
                let p = self
                    .labels
                    .iter()
                    .position(|l| l == t)
                    .map_or(0.0, |i| self.probabilities[i]);
                (*t, p)
            })
            .collect()
    }
}

impl ClassifierModel {
    pub fn labels(&self) -> &[ToolCategory] {
        &self.labels
    }

    pub fn embedder_config(&self) -> &EmbedderConfig {
        self.embedder.config()
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train_config
    }

    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    pub fn head_weights(&self) -> &Array2<f64> {
        &self.head_weights
    }

    pub fn head_bias(&self) -> &Array1<f64> {
        &self.head_bias
    }

    /// Raw head scores before the softmax.
    pub fn logits(&self, query: &str) -> Result<Array1<f64>, EmbedError> {
        let e = Array1::from(self.embedder.embed(query)?.into_vec());
        let z = unit(self.projection.dot(&e));
        Ok(self.head_weights.dot(&z) + &self.head_bias)
    }

    pub fn predict(&self, query: &str) -> Result<Prediction, EmbedError> {
        let probabilities = softmax(&self.logits(query)?);
        Ok(Prediction {
            tool: self.labels[argmax(&probabilities)],
            probabilities,
            labels: self.labels.clone(),
        })
    }
}

/// Scales to unit length; the zero vector stays zero.
fn unit(v: Array1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v / norm
    } else {
        v
    }
}

/// First index of the maximum, so ties go to the earlier registry label.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax(logits: &Array1<f64>) -> Vec<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    let exp: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|x| x / sum).collect()
}

/// Trains a classifier on `examples` with the given embedder.
pub fn train(
    examples: &[LabeledExample],
    config: &TrainConfig,
    embedder_config: EmbedderConfig,
) -> Result<ClassifierModel, ClassifierError> {
    config.validate()?;
    if let Some(i) = examples.iter().position(|e| crate::text::normalize(&e.query).is_empty()) {
        return Err(ClassifierError::EmptyQuery(i));
    }
    let embedder = Embedder::new(embedder_config)?;
    let dim = embedder.dim();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pairs = generate_pairs(examples, config.iterations, rng.gen())?;

    let n = examples.len();
    let mut embeddings = Array2::zeros((n, dim));
    for (i, ex) in examples.iter().enumerate() {
        let e = embedder.embed(&ex.query)?;
        embeddings.row_mut(i).assign(&Array1::from(e.into_vec()));
    }

    let bound = 1.0 / (dim as f64).sqrt();
    let mut projection =
        Array2::from_shape_fn((config.projection_dim, dim), |_| rng.gen_range(-bound..=bound));
    fit_projection(&mut projection, &pairs, &embeddings, config, &mut rng)?;

    let labels: Vec<ToolCategory> =
        ALL_TOOLS.iter().copied().filter(|t| examples.iter().any(|e| e.tool == *t)).collect();
    let targets: Vec<usize> = examples
        .iter()
        .map(|e| labels.iter().position(|l| *l == e.tool).expect("label collected"))
        .collect();
    let mut features = embeddings.dot(&projection.t());
    for mut row in features.axis_iter_mut(Axis(0)) {
        row.assign(&unit(row.to_owned()));
    }
    let (head_weights, head_bias) = fit_head(&features, &targets, labels.len(), config)?;

    Ok(ClassifierModel {
        embedder,
        projection,
        head_weights,
        head_bias,
        labels,
        train_config: config.clone(),
    })
}

fn fit_projection(
    projection: &mut Array2<f64>,
    pairs: &[ContrastivePair],
    embeddings: &Array2<f64>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), ClassifierError> {
    let steps_per_epoch = pairs.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    // Warmup spans the whole run, not each epoch.
    let warmup_steps = (config.warmup_ratio * total_steps as f64).ceil() as usize;

    let mut adam = Adam::new(projection.dim());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pairs[i]));
            let (loss, grad) = contrastive_loss(projection, &batch, embeddings);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ClassifierError::NonFiniteLoss { phase: "contrastive", step });
            }
            let lr = if step < warmup_steps {
                config.learning_rate * (step + 1) as f64 / warmup_steps as f64
            } else {
                config.learning_rate
            };
            adam.step(projection, &grad, lr);
            step += 1;
        }
    }
    Ok(())
}

/// Adam without weight decay. Plain SGD at sentence-encoder learning rates
/// leaves the projection essentially at its random initialization.
struct Adam {
    m: Array2<f64>,
    v: Array2<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shape: (usize, usize)) -> Self {
        Adam { m: Array2::zeros(shape), v: Array2::zeros(shape), t: 0 }
    }

    fn step(&mut self, params: &mut Array2<f64>, grad: &Array2<f64>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        ndarray::Zip::from(params)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            });
    }
}

/// Full-batch gradient descent on softmax cross-entropy.
fn fit_head(
    features: &Array2<f64>,
    targets: &[usize],
    classes: usize,
    config: &TrainConfig,
) -> Result<(Array2<f64>, Array1<f64>), ClassifierError> {
    let (n, k) = features.dim();
    let mut weights = Array2::<f64>::zeros((classes, k));
    let mut bias = Array1::<f64>::zeros(classes);
    let mut onehot = Array2::<f64>::zeros((n, classes));
    for (i, &t) in targets.iter().enumerate() {
        onehot[[i, t]] = 1.0;
    }
    for step in 0..config.head_iterations {
        let mut probs = features.dot(&weights.t()) + &bias;
        let mut loss = 0.0;
        for (i, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, x| m.max(*x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row /= sum;
            loss -= row[targets[i]].ln();
        }
        if !loss.is_finite() {
            return Err(ClassifierError::NonFiniteLoss { phase: "head", step });
        }
        let residual = (probs - &onehot) / n as f64;
        weights.scaled_add(-config.head_learning_rate, &residual.t().dot(features));
        bias.scaled_add(-config.head_learning_rate, &residual.sum_axis(Axis(0)));
    }
    Ok((weights, bias))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_examples() -> Vec<LabeledExample> {
        let rows = [
            ("is there a tsb for the transmission shudder", ToolCategory::Tsb),
            ("any technical service bulletin about oil leaks", ToolCategory::Tsb),
            ("tsb for rattling heat shield", ToolCategory::Tsb),
            ("recalls for airbag inflators", ToolCategory::Nhtsa),
            ("any complaints or recalls about stalling", ToolCategory::Nhtsa),
            ("safety recall on seat belts", ToolCategory::Nhtsa),
            ("what parts to replace the water pump", ToolCategory::RepairToParts),
            ("parts needed to replace brake rotors", ToolCategory::RepairToParts),
            ("which parts do i need to replace the alternator", ToolCategory::RepairToParts),
        ];
        rows.iter().map(|(q, t)| LabeledExample::new(*q, *t)).collect()
    }

    fn fast_config() -> TrainConfig {
        TrainConfig {
            iterations: 5,
            projection_dim: 32,
            head_iterations: 300,
            head_learning_rate: 1.0,
            ..Default::default()
        }
    }

    fn small_embedder() -> EmbedderConfig {
        EmbedderConfig { dim: 128, ..Default::default() }
    }

    #[test]
    fn fits_toy_training_set() {
        let ex = toy_examples();
        let model = train(&ex, &fast_config(), small_embedder()).unwrap();
        assert_eq!(
            model.labels(),
            [ToolCategory::Tsb, ToolCategory::Nhtsa, ToolCategory::RepairToParts]
        );
        for e in &ex {
            assert_eq!(model.predict(&e.query).unwrap().tool, e.tool, "{}", e.query);
        }
    }

    #[test]
    fn probabilities_form_a_distribution() {
        let model = train(&toy_examples(), &fast_config(), small_embedder()).unwrap();
        for q in ["", "hello world", "recall recall recall", "?"] {
            let p = model.predict(q).unwrap();
            assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.probabilities.iter().all(|x| *x >= 0.0));
            let map = p.probability_map();
            assert_eq!(map.len(), 8);
            assert_eq!(map[&ToolCategory::Others], 0.0);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ex = toy_examples();
        let a = train(&ex, &fast_config(), small_embedder()).unwrap();
        let b = train(&ex, &fast_config(), small_embedder()).unwrap();
        assert_eq!(a.projection(), b.projection());
        assert_eq!(a.head_weights(), b.head_weights());
        assert_eq!(a.head_bias(), b.head_bias());
    }

    #[test]
    fn single_class_rejected() {
        let ex = vec![
            LabeledExample::new("tsb one", ToolCategory::Tsb),
            LabeledExample::new("tsb one", ToolCategory::Tsb),
        ];
        assert!(matches!(
            train(&ex, &fast_config(), small_embedder()),
            Err(ClassifierError::InsufficientClassData(_))
        ));
    }

    #[test]
    fn empty_query_rejected() {
        let mut ex = toy_examples();
        ex[2].query = "   ".into();
        assert!(matches!(
            train(&ex, &fast_config(), small_embedder()),
            Err(ClassifierError::EmptyQuery(2))
        ));
    }

    #[test]
    fn non_finite_loss_reported() {
        let cfg = TrainConfig { learning_rate: 1e308, warmup_ratio: 0.0, ..fast_config() };
        let err = train(&toy_examples(), &cfg, small_embedder()).unwrap_err();
        assert!(matches!(err, ClassifierError::NonFiniteLoss { phase: "contrastive", .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        for cfg in [
            TrainConfig { warmup_ratio: 1.5, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn shared_logit_shift_keeps_argmax() {
        let logits = [0.3, 1.7, 1.7, -2.0];
        let shifted: Vec<f64> = logits.iter().map(|x| x + 123.0).collect();
        assert_eq!(argmax(&logits), 1);
        assert_eq!(argmax(&shifted), 1);
    }

    #[test]
    fn zero_embedding_uses_bias_only() {
        let model = train(&toy_examples(), &fast_config(), small_embedder()).unwrap();
        let logits = model.logits("").unwrap();
        assert_eq!(&logits, model.head_bias());
    }
}

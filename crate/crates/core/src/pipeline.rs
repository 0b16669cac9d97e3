//! Two-step routing (classify, then extract with the tool's own prompt) and
//! the single-step baseline (one composite prompt), with stage timings.

use std::sync::Arc;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::classifier::ClassifierModel;
use crate::embed::EmbedError;
use crate::eval::{latency_stats, par_map, LatencyReport};
use crate::extract::{
    extract_entities, parse_structured, BackendError, ChatBackend, ChatRequest, ExtractError,
    ExtractFailure, InferenceSettings, ParseStatus, RequestHint, StructuredError,
};
use crate::prompts::PromptPool;
use crate::registry::{EntityMap, Registry, SchemaViolations, ToolCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteMode {
    TwoStep,
    SingleStep,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub classify_seconds: f64,
    pub extract_seconds: f64,
    pub total_seconds: f64,
}

/// A problem recorded on an otherwise usable result.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RouteIssue {
    Backend { error: BackendError, retryable: bool },
    Parse { error: StructuredError },
    Schema { violations: SchemaViolations },
    Prompt { message: String },
    UnknownToolLabel { label: String },
}

impl RouteIssue {
    fn from_failure(f: ExtractFailure) -> Self {
        match f {
            ExtractFailure::Parse { error } => RouteIssue::Parse { error },
            ExtractFailure::Schema { violations } => RouteIssue::Schema { violations },
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, RouteIssue::Backend { retryable: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteResult {
    pub tool: ToolCategory,
    pub entities: EntityMap,
    pub timings: Timings,
    pub mode: RouteMode,
    /// None when no extraction ran (`others` short-circuit).
    pub parse_status: Option<ParseStatus>,
    /// Two-step only: the classifier's distribution over all tools.
    pub probabilities: Option<IndexMap<ToolCategory, f64>>,
    pub issue: Option<RouteIssue>,
}

impl RouteResult {
    /// `{"tool_category", "entities"}`, plus `_timings` when asked.
    pub fn public_json(&self, with_timings: bool) -> Value {
        let mut out = Map::new();
        out.insert("tool_category".into(), json!(self.tool));
        out.insert("entities".into(), Value::Object(self.entities.to_json()));
        if with_timings {
            out.insert("_timings".into(), json!(self.timings));
        }
        Value::Object(out)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("classification failed: {0}")]
    Classify(#[from] EmbedError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("single-step completion unusable: {0}")]
    Parse(#[from] StructuredError),
}

fn check_query(query: &str) -> Result<(), PipelineError> {
    if query.trim().is_empty() {
        Err(PipelineError::InvalidQuery("query is empty".into()))
    } else {
        Ok(())
    }
}

/// Classify, then extract with the predicted tool's prompt. Extraction
/// failures leave the tool in place with empty entities and the issue
/// recorded.
pub fn route_two_step(
    query: &str,
    model: &ClassifierModel,
    pool: &PromptPool,
    registry: &Registry,
    backend: &dyn ChatBackend,
    settings: &InferenceSettings,
) -> Result<RouteResult, PipelineError> {
    check_query(query)?;
    let start = Instant::now();
    let prediction = model.predict(query)?;
    let classify_seconds = start.elapsed().as_secs_f64();
    let tool = prediction.tool;

    let mut result = RouteResult {
        tool,
        entities: EntityMap::new(),
        timings: Timings { classify_seconds, ..Default::default() },
        mode: RouteMode::TwoStep,
        parse_status: None,
        probabilities: Some(prediction.probability_map()),
        issue: None,
    };
    if !tool.is_others() {
        let t = Instant::now();
        let outcome = extract_entities(backend, pool, registry, tool, query, settings);
        result.timings.extract_seconds = t.elapsed().as_secs_f64();
        match outcome {
            Ok(x) => {
                result.parse_status = Some(x.parse_status);
                result.entities = x.entities;
                result.issue = x.failure.map(RouteIssue::from_failure);
            }
            Err(e) => {
                result.parse_status = Some(ParseStatus::Failed);
                result.issue = Some(match e {
                    ExtractError::Backend(error) => RouteIssue::Backend { retryable: error.is_retryable(), error },
                    other => RouteIssue::Prompt { message: other.to_string() },
                });
            }
        }
    }
    result.timings.total_seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

/// One composite prompt asking for `{"tool_category", "entities"}`.
pub fn route_single_step(
    query: &str,
    pool: &PromptPool,
    registry: &Registry,
    backend: &dyn ChatBackend,
    settings: &InferenceSettings,
) -> Result<RouteResult, PipelineError> {
    check_query(query)?;
    let start = Instant::now();
    let request = ChatRequest::new(pool.composite_prompt(registry, query), *settings)
        .map_err(|e| PipelineError::InvalidQuery(e.to_string()))?
        .with_hint(RequestHint::Joint { query: query.to_string() });
    let raw = backend.send(&request)?;
    let extract_seconds = start.elapsed().as_secs_f64();
    let parsed = parse_structured(&raw)?;

    let label = parsed.object.get("tool_category");
    let (tool, mut issue) = match label.and_then(Value::as_str).map(str::parse::<ToolCategory>) {
        Some(Ok(tool)) => (tool, None),
        _ => {
            let label = match label {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => String::new(),
            };
            (ToolCategory::Others, Some(RouteIssue::UnknownToolLabel { label }))
        }
    };

    let raw_entities = parsed.object.get("entities").cloned().unwrap_or(Value::Null);
    let (entities, status) = if issue.is_some() {
        (EntityMap::new(), parsed.status)
    } else {
        match registry.validate_value(tool, &raw_entities) {
            Ok(e) => (e, parsed.status),
            Err(violations) => {
                issue = Some(RouteIssue::Schema { violations });
                (EntityMap::new(), ParseStatus::Failed)
            }
        }
    };

    Ok(RouteResult {
        tool,
        entities,
        timings: Timings { classify_seconds: 0.0, extract_seconds, total_seconds: start.elapsed().as_secs_f64() },
        mode: RouteMode::SingleStep,
        parse_status: Some(status),
        probabilities: None,
        issue,
    })
}

/// Shared, immutable routing stack.
#[derive(Clone)]
pub struct Router {
    pub model: Arc<ClassifierModel>,
    pub pool: Arc<PromptPool>,
    pub registry: Arc<Registry>,
    pub backend: Arc<dyn ChatBackend>,
    pub settings: InferenceSettings,
}

impl Router {
    pub fn two_step(&self, query: &str) -> Result<RouteResult, PipelineError> {
        route_two_step(query, &self.model, &self.pool, &self.registry, self.backend.as_ref(), &self.settings)
    }

    pub fn single_step(&self, query: &str) -> Result<RouteResult, PipelineError> {
        route_single_step(query, &self.pool, &self.registry, self.backend.as_ref(), &self.settings)
    }

    pub fn route(&self, query: &str, mode: RouteMode) -> Result<RouteResult, PipelineError> {
        match mode {
            RouteMode::TwoStep => self.two_step(query),
            RouteMode::SingleStep => self.single_step(query),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeComparison {
    pub n: usize,
    pub two_step: Option<LatencyReport>,
    pub single_step: Option<LatencyReport>,
    /// Share of queries where both modes chose the same tool.
    pub agreement_rate: Option<f64>,
}

impl ModeComparison {
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<12} {:>10} {:>10} {:>10}\n", "mode", "mean_s", "p50_s", "p95_s");
        for (name, r) in [("two_step", &self.two_step), ("single_step", &self.single_step)] {
            if let Some(r) = r {
                s += &format!("{name:<12} {:>10.4} {:>10.4} {:>10.4}\n", r.mean_seconds, r.p50_seconds, r.p95_seconds);
            }
        }
        match self.agreement_rate {
            Some(a) => s += &format!("n={}  tool agreement={a:.4}\n", self.n),
            None => s += "n=0\n",
        }
        s
    }
}

/// Runs both modes on every query (two-step on `two_step`, single-step on
/// `single_step`) with up to `parallelism` queries in flight.
pub fn compare_modes(
    queries: &[String],
    two_step: &Router,
    single_step: &Router,
    parallelism: usize,
) -> Result<ModeComparison, PipelineError> {
    if queries.is_empty() {
        return Ok(ModeComparison { n: 0, two_step: None, single_step: None, agreement_rate: None });
    }
    let runs = par_map(queries, parallelism, |q| Ok::<_, PipelineError>((two_step.two_step(q)?, single_step.single_step(q)?)));
    let runs: Vec<(RouteResult, RouteResult)> = runs.into_iter().collect::<Result<_, _>>()?;
    let two: Vec<f64> = runs.iter().map(|(a, _)| a.timings.total_seconds).collect();
    let one: Vec<f64> = runs.iter().map(|(_, b)| b.timings.total_seconds).collect();
    let agree = runs.iter().filter(|(a, b)| a.tool == b.tool).count();
    Ok(ModeComparison {
        n: runs.len(),
        two_step: Some(latency_stats(&two).expect("non-empty")),
        single_step: Some(latency_stats(&one).expect("non-empty")),
        agreement_rate: Some(agree as f64 / runs.len() as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{train, TrainConfig};
    use crate::desk::load_desk_dataset;
    use crate::embed::EmbedderConfig;
    use crate::extract::{FailingBackend, LatencyModel, MockBackend};
    use std::sync::OnceLock;
    use std::time::Duration;

    struct Canned(String);

    impl ChatBackend for Canned {
        fn send(&self, _: &ChatRequest) -> Result<String, BackendError> {
            Ok(self.0.clone())
        }

        fn name(&self) -> &str {
            "canned"
        }
    }

    fn model() -> Arc<ClassifierModel> {
        static M: OnceLock<Arc<ClassifierModel>> = OnceLock::new();
        M.get_or_init(|| {
            let ds = load_desk_dataset().unwrap();
            let ex: Vec<_> = ds.train.iter().map(|s| s.labeled()).collect();
            Arc::new(train(&ex, &TrainConfig::default(), EmbedderConfig::default()).unwrap())
        })
        .clone()
    }

    fn router(backend: Arc<dyn ChatBackend>) -> Router {
        let registry = Registry::default();
        Router {
            model: model(),
            pool: Arc::new(PromptPool::bundled(&registry).unwrap()),
            registry: Arc::new(registry),
            backend,
            settings: InferenceSettings::default(),
        }
    }

    fn mock() -> Arc<MockBackend> {
        Arc::new(MockBackend::new(Registry::default()).with_classifier(model()))
    }

    const FUSION: &str = "Show me the part number and price for spark plugs for a 2019 Ford Fusion.";
    const OTHERS: &str = "What are the negative aspects of choosing an aftermarket brake pad over an OEM part?";

    #[test]
    fn two_step_reference_queries() {
        let r = router(mock());
        let res = r.two_step(FUSION).unwrap();
        assert_eq!(res.tool, ToolCategory::PartsCatalog);
        assert_eq!(res.entities.keys().collect::<Vec<_>>(), ["make", "model", "year", "component", "brand", "warranty", "pnc"]);
        assert_eq!(res.parse_status, Some(ParseStatus::Clean));
        let t = res.timings;
        assert!(t.total_seconds + 1e-3 >= t.classify_seconds + t.extract_seconds);

        let res = r.two_step(OTHERS).unwrap();
        assert_eq!(res.tool, ToolCategory::Others);
        assert!(res.entities.is_empty());
        assert_eq!(res.timings.extract_seconds, 0.0);
        assert_eq!(res.public_json(false), json!({"tool_category": "others", "entities": {}}));
    }

    #[test]
    fn others_never_calls_the_backend() {
        let backend = Arc::new(FailingBackend::new(BackendError::Transport { message: "x".into() }));
        let res = router(backend.clone()).two_step(OTHERS).unwrap();
        assert_eq!(res.issue, None);
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn degraded_mode_keeps_the_tool() {
        let backend = Arc::new(FailingBackend::new(BackendError::timeout(Duration::from_millis(10))));
        let res = router(backend).two_step(FUSION).unwrap();
        assert_eq!(res.tool, ToolCategory::PartsCatalog);
        assert!(res.entities.is_empty());
        assert!(res.issue.as_ref().unwrap().is_retryable());
        assert_eq!(res.parse_status, Some(ParseStatus::Failed));
    }

    #[test]
    fn tool_label_equals_classifier_output() {
        let r = router(Arc::new(Canned("garbage".into())));
        for s in load_desk_dataset().unwrap().holdout.iter().take(16) {
            assert_eq!(r.two_step(&s.query).unwrap().tool, model().predict(&s.query).unwrap().tool);
        }
    }

    #[test]
    fn single_step_agrees_with_two_step_on_worked_example() {
        let r = router(mock());
        let q = "Replace brake pads for my Toyota Corolla 2015.";
        let a = r.two_step(q).unwrap();
        let b = r.single_step(q).unwrap();
        assert_eq!(a.tool, ToolCategory::RepairToParts);
        assert_eq!(a.public_json(false), b.public_json(false));
        assert_eq!(b.mode, RouteMode::SingleStep);
        assert_eq!(
            b.public_json(false),
            json!({"tool_category": "repair_to_parts", "entities": {"make": "Toyota", "model": "Corolla",
                   "year": 2015, "labor_action": "replace", "component": "brake pads"}})
        );
    }

    #[test]
    fn single_step_unknown_label() {
        let r = router(Arc::new(Canned(r#"{"tool_category": "banana", "entities": {"make": "Kia"}}"#.into())));
        let res = r.single_step("anything").unwrap();
        assert_eq!(res.tool, ToolCategory::Others);
        assert!(res.entities.is_empty());
        assert_eq!(res.issue, Some(RouteIssue::UnknownToolLabel { label: "banana".into() }));
    }

    #[test]
    fn single_step_strict_validation() {
        let r = router(Arc::new(Canned(r#"{"tool_category": "tsb", "entities": {"make": "Kia", "extra": 1}}"#.into())));
        let res = r.single_step("anything").unwrap();
        assert_eq!(res.tool, ToolCategory::Tsb);
        assert!(matches!(res.issue, Some(RouteIssue::Schema { .. })));
        assert_eq!(res.parse_status, Some(ParseStatus::Failed));

        let r = router(Arc::new(Canned("no json".into())));
        assert!(matches!(r.single_step("anything"), Err(PipelineError::Parse(StructuredError::NoJsonFound))));
    }

    #[test]
    fn empty_query_rejected_before_backend() {
        let backend = Arc::new(MockBackend::new(Registry::default()).with_classifier(model()));
        let r = router(backend.clone());
        assert!(matches!(r.two_step("  "), Err(PipelineError::InvalidQuery(_))));
        assert!(matches!(r.single_step(""), Err(PipelineError::InvalidQuery(_))));
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn public_json_shape() {
        let res = router(mock()).two_step(FUSION).unwrap();
        let v = res.public_json(false);
        assert_eq!(v.as_object().unwrap().keys().collect::<Vec<_>>(), ["tool_category", "entities"]);
        let v = res.public_json(true);
        assert!(v["_timings"]["total_seconds"].as_f64().unwrap() >= 0.0);
    }

    #[test]
    fn compare_modes_ordering_and_degenerate_cases() {
        let lat = LatencyModel::new(Duration::from_millis(1), Duration::from_micros(100));
        let backend: Arc<dyn ChatBackend> = Arc::new(MockBackend::new(Registry::default()).with_classifier(model()).with_latency(lat));
        let r = router(backend);
        let queries: Vec<String> = load_desk_dataset().unwrap().canonical.iter().map(|s| s.query.clone()).collect();
        let cmp = compare_modes(&queries, &r, &r, 4).unwrap();
        assert_eq!(cmp.n, 8);
        assert_eq!(cmp.agreement_rate, Some(1.0));
        assert!(cmp.two_step.unwrap().mean_seconds < cmp.single_step.unwrap().mean_seconds);
        assert!(cmp.to_text().contains("agreement=1.0000"));

        let empty = compare_modes(&[], &r, &r, 4).unwrap();
        assert_eq!((empty.n, empty.agreement_rate), (0, None));
    }
}

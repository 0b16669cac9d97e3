//! Deterministic stand-ins for a chat model: a rule-based entity extractor
//! and backends built on it.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::{json, Map, Value};

use super::gazetteer::{earliest, find_all, fold, matches_at, Gazetteer};
use super::{BackendError, ChatBackend, ChatRequest, RequestHint};
use crate::classifier::ClassifierModel;
use crate::registry::{EntityMap, Registry, ToolCategory};
use crate::text::token_count;

/// Rule-based extraction against the bundled gazetteer.
pub fn mock_extract(query: &str, tool: ToolCategory, registry: &Registry) -> EntityMap {
    mock_extract_with(Gazetteer::bundled(), query, tool, registry)
}

pub fn mock_extract_with(
    gaz: &Gazetteer,
    query: &str,
    tool: ToolCategory,
    registry: &Registry,
) -> EntityMap {
    let q = Query::new(gaz, query);
    let mut raw = Map::new();
    for field in registry.schema_for(tool).field_names() {
        let value = match field {
            "make" => q.make.map(|(_, _, m)| json!(m)),
            "model" => q.model.clone().map(Value::from),
            "year" => year(query).map(Value::from),
            "mileage" => mileage(query).map(Value::from),
            "issue" => q.issue().map(Value::from),
            "component" => q.component().map(Value::from),
            "system" => q.pick(gaz.systems.iter().map(|s| (s.as_str(), s.as_str()))),
            "brand" => q.pick(gaz.brands.iter().map(|s| (s.as_str(), s.as_str()))),
            "labor_action" => q.labor_action(),
            "query_type" => query_type(&q.folded).map(Value::from),
            "warranty" => warranty(query).map(Value::from),
            "pnc" => pnc(query).map(Value::from),
            "service_name" => service(query).map(|s| json!(s.0)),
            "service_type" => service(query).map(|s| json!(s.1)),
            "service_unit" => service(query).map(|s| json!(s.2)),
            "driving_pattern" => driving_pattern(gaz, &q.folded).map(Value::from),
            _ => None,
        };
        raw.insert(field.to_string(), value.unwrap_or(Value::Null));
    }
    registry.validate_entities(tool, &raw).expect("mock output conforms by construction")
}

struct Query<'a> {
    gaz: &'a Gazetteer,
    text: &'a str,
    folded: String,
    /// (start, end, canonical make)
    make: Option<(usize, usize, &'a str)>,
    model: Option<String>,
    model_span: Option<(usize, usize)>,
}

impl<'a> Query<'a> {
    fn new(gaz: &'a Gazetteer, text: &'a str) -> Self {
        let folded = fold(text);
        let make = earliest(&folded, gaz.make_forms());
        let (model, model_span) = match make {
            Some((_, end, m)) => model_after(gaz, &folded, end, m),
            None => standalone_model(gaz, text),
        }
        .map_or((None, None), |(name, span)| (Some(name), Some(span)));
        Query { gaz, text, folded, make, model, model_span }
    }

    fn pick<'b>(&self, forms: impl IntoIterator<Item = (&'b str, &'b str)>) -> Option<Value> {
        earliest(&self.folded, forms).map(|(_, _, canonical)| json!(canonical))
    }

    fn component(&self) -> Option<String> {
        let forms = self
            .gaz
            .components
            .iter()
            .flat_map(|(canon, forms)| forms.iter().map(move |f| (f.as_str(), canon.as_str())));
        earliest(&self.folded, forms).map(|(_, _, c)| c.to_string())
    }

    fn labor_action(&self) -> Option<Value> {
        let forms = self
            .gaz
            .labor_actions
            .iter()
            .flat_map(|(base, forms)| forms.iter().map(move |f| (f.as_str(), base.as_str())));
        self.pick(forms)
    }

    /// Text following a cue word up to the next clause boundary, e.g. the
    /// "rough idle and stalling" in "My car has rough idle and stalling."
    fn issue(&self) -> Option<String> {
        let mut cues: Vec<(usize, usize)> = ISSUE_CUES
            .iter()
            .flat_map(|c| find_all(&self.folded, c).into_iter().map(move |i| (i, i + c.len())))
            .collect();
        cues.sort_unstable();
        cues.into_iter().find_map(|(_, end)| self.issue_after(end))
    }

    fn issue_after(&self, from: usize) -> Option<String> {
        let rest = &self.folded[from..];
        let mut words: Vec<(usize, usize)> = Vec::new();
        let mut offset = from;
        for piece in rest.split_inclusive(char::is_whitespace) {
            let word = piece.trim_end();
            let start = offset;
            offset += piece.len();
            if word.is_empty() {
                continue;
            }
            let (core, stop_after) = match word.find(|c: char| ".,?!;:".contains(c)) {
                Some(0) => break,
                Some(i) => (&word[..i], true),
                None => (word, false),
            };
            if ISSUE_STOPS.contains(&core) {
                break;
            }
            words.push((start, start + core.len()));
            if stop_after {
                break;
            }
        }
        while let Some(&(s, e)) = words.first() {
            if ISSUE_DETERMINERS.contains(&&self.folded[s..e]) {
                words.remove(0);
            } else {
                break;
            }
        }
        let (&(start, _), &(_, end)) = (words.first()?, words.last()?);
        let lowered = &self.folded[start..end];
        let overlaps = |span: Option<(usize, usize)>| span.is_some_and(|(s, e)| s < end && start < e);
        if lowered.chars().any(|c| c.is_ascii_digit())
            || overlaps(self.make.map(|(s, e, _)| (s, e)))
            || overlaps(self.model_span)
            || lowered.split_whitespace().any(|w| ISSUE_REJECT.contains(&w))
        {
            return None;
        }
        Some(self.text[start..end].to_string())
    }
}

const ISSUE_CUES: &[&str] = &[
    "about", "regarding", "related to", "covering", "concerning", "for", "on", "has", "have", "had",
    "having", "showing", "causes", "causing", "diagnose", "troubleshoot", "noticed", "experiencing",
];
const ISSUE_STOPS: &[&str] = &["in", "on", "for", "at", "with", "affecting", "after", "since", "what", "could", "any"];
const ISSUE_DETERMINERS: &[&str] = &["a", "an", "the", "my", "any", "some", "this", "that"];
const ISSUE_REJECT: &[&str] = &[
    "tsb", "tsbs", "bulletin", "bulletins", "recall", "recalls", "complaint", "complaints", "nhtsa",
    "there", "been", "it", "car", "truck", "vehicle", "service", "parts", "part", "campaigns", "owners",
    "technical", "manual", "open", "safety",
];

fn model_after(gaz: &Gazetteer, folded: &str, make_end: usize, make: &str) -> Option<(String, (usize, usize))> {
    let gap = folded[make_end..].len() - folded[make_end..].trim_start().len();
    let at = make_end + gap;
    if gap == 0 || at >= folded.len() {
        return None;
    }
    let mut best: Option<(&String, usize)> = None;
    for model in gaz.makes.get(make)? {
        let m = fold(model);
        if matches_at(folded, at, &m) && best.map_or(true, |(_, len)| m.len() > len) {
            best = Some((model, m.len()));
        }
    }
    best.map(|(name, len)| (name.clone(), (at, at + len)))
}

/// Model mentioned without a make ("a 2020 Corolla"). Requires the exact
/// gazetteer spelling and skips purely numeric names.
fn standalone_model(gaz: &Gazetteer, text: &str) -> Option<(String, (usize, usize))> {
    let forms = gaz
        .makes
        .values()
        .flatten()
        .filter(|m| !m.chars().all(|c| c.is_ascii_digit()))
        .map(|m| (m.as_str(), m.as_str()));
    let mut best: Option<(usize, usize, &str)> = None;
    for (form, name) in forms {
        if let Some(&start) = find_all(text, form).first() {
            let end = start + form.len();
            if best.map_or(true, |(s, e, _)| start < s || (start == s && end > e)) {
                best = Some((start, end, name));
            }
        }
    }
    best.map(|(s, e, name)| (name.to_string(), (s, e)))
}

fn regex(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static pattern"))
}

/// First standalone four-digit number in 1950..=2035 that is not a distance.
fn year(text: &str) -> Option<i64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = regex(&RE, r"(?i)(^|[^\w,.])(\d{4})(\s*(miles?|mi|km)\b)?");
    re.captures_iter(text).find_map(|c| {
        let end = c.get(2)?.end();
        if c.get(3).is_some() || text[end..].starts_with(|ch: char| ch.is_alphanumeric()) {
            return None;
        }
        let y: i64 = c[2].parse().ok()?;
        (1950..=2035).contains(&y).then_some(y)
    })
}

fn mileage(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = regex(&RE, r"(?i)\b(\d{1,3}(,\d{3})+|\d+(\.\d+)?k?)\s*(miles|mi|km|kilometers)\b");
    re.find(text).map(|m| m.as_str().to_string())
}

fn warranty(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = regex(&RE, r"(?i)\b(lifetime|limited|extended|\d+[- ](year|yr|month|mile)s?)\s+warranty\b");
    re.find(text).map(|m| m.as_str().to_string())
}

fn pnc(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = regex(&RE, r"(?i)\b(pnc|part\s+number|part\s+no\.?)\s*[:#]?\s*([a-z0-9][a-z0-9-]{3,})");
    re.captures_iter(text)
        .map(|c| c[2].to_string())
        .find(|code| code.chars().any(|ch| ch.is_ascii_digit()))
}

/// (service name, service type, unit), e.g. ("30,000-mile service", "mileage", "miles").
fn service(text: &str) -> Option<(String, &'static str, &'static str)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = regex(
        &RE,
        r"(?i)\b(\d{1,3}(,\d{3})+|\d+)[- ](mile|month|km|kilometer)s?\s+(service|maintenance|inspection)\b",
    );
    let c = re.captures(text)?;
    let (kind, unit) = match c[3].to_lowercase().as_str() {
        "month" => ("time", "months"),
        "mile" => ("mileage", "miles"),
        _ => ("mileage", "km"),
    };
    Some((c[0].to_string(), kind, unit))
}

fn driving_pattern(gaz: &Gazetteer, folded: &str) -> Option<String> {
    gaz.driving_patterns
        .iter()
        .filter_map(|p| {
            find_all(folded, p)
                .into_iter()
                .find(|&i| {
                    let after = folded[i + p.len()..].trim_start();
                    ["driving", "conditions", "use"].iter().any(|w| after.starts_with(w))
                        || folded[..i].trim_end().ends_with("driven in")
                })
                .map(|i| (i, p))
        })
        .min()
        .map(|(_, p)| p.clone())
}

const PROCEDURE_CUES: &[&str] = &["how to", "how do i", "how can i", "procedure", "steps", "walk me through"];
const SPEC_CUES: &[&str] = &["what is", "what's", "spec", "torque", "capacity", "limit", "gap", "firing order"];

fn query_type(folded: &str) -> Option<&'static str> {
    if PROCEDURE_CUES.iter().any(|c| !find_all(folded, c).is_empty()) {
        Some("procedure")
    } else if SPEC_CUES.iter().any(|c| !find_all(folded, c).is_empty()) {
        Some("specification")
    } else {
        None
    }
}

/// Artificial delay `base + per_token * token_count(prompt)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LatencyModel {
    pub base: Duration,
    pub per_token: Duration,
}

impl LatencyModel {
    pub fn new(base: Duration, per_token: Duration) -> Self {
        LatencyModel { base, per_token }
    }

    pub fn delay(&self, prompt: &str) -> Duration {
        self.base + self.per_token * token_count(prompt) as u32
    }
}

/// Answers extraction, joint and generation requests from their hints.
pub struct MockBackend {
    registry: Registry,
    classifier: Option<Arc<ClassifierModel>>,
    latency: LatencyModel,
    timeout: Option<Duration>,
    calls: AtomicUsize,
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend::new(Registry::default())
    }
}

impl MockBackend {
    pub fn new(registry: Registry) -> Self {
        MockBackend { registry, classifier: None, latency: LatencyModel::default(), timeout: None, calls: AtomicUsize::new(0) }
    }

    /// Needed for joint (single-step) requests, which must pick a tool.
    pub fn with_classifier(mut self, model: Arc<ClassifierModel>) -> Self {
        self.classifier = Some(model);
        self
    }

    pub fn with_latency(mut self, latency: LatencyModel) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn answer(&self, hint: &RequestHint) -> Result<String, BackendError> {
        match hint {
            RequestHint::Extract { tool, query } => {
                Ok(Value::Object(mock_extract(query, *tool, &self.registry).to_json()).to_string())
            }
            RequestHint::Joint { query } => {
                let model = self.classifier.as_ref().ok_or_else(|| BackendError::InvalidResponse {
                    message: "mock backend has no classifier for joint requests".into(),
                })?;
                let tool = model
                    .predict(query)
                    .map_err(|e| BackendError::InvalidResponse { message: e.to_string() })?
                    .tool;
                let entities = if tool.is_others() {
                    Map::new()
                } else {
                    mock_extract(query, tool, &self.registry).to_json()
                };
                Ok(json!({"tool_category": tool, "entities": entities}).to_string())
            }
            RequestHint::Generate { count, seeds, seed, .. } => Ok(paraphrases(seeds, *count, *seed)),
        }
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let delay = self.latency.delay(&request.prompt);
        if let Some(limit) = self.timeout.filter(|t| delay > *t) {
            std::thread::sleep(limit);
            return Err(BackendError::timeout(limit));
        }
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        let hint = request.hint.as_ref().ok_or_else(|| BackendError::InvalidResponse {
            message: "mock backend needs a request hint".into(),
        })?;
        self.answer(hint)
    }

    fn name(&self) -> &str {
        "mock"
    }
}

const PREFIXES: &[&str] = &["", "Quick question: ", "Hi, ", "Hello! ", "Can you help? ", "Please advise: ", "I'd like to know: "];
const SUFFIXES: &[&str] = &["", " Thanks.", " Thank you!", " Any help appreciated.", " Appreciate it."];

/// JSON lines of rule-generated rewrites of the seeds. Entity values are
/// carried over unchanged since the rewrites never touch them. Once every
/// prefix/suffix pairing is used the output repeats, so downstream dedup
/// undershoots rather than the mock inventing entities.
fn paraphrases(seeds: &[(String, Map<String, Value>)], count: usize, seed: u64) -> String {
    if seeds.is_empty() {
        return String::new();
    }
    let mut combos: Vec<(usize, usize)> = (0..PREFIXES.len())
        .flat_map(|p| (0..SUFFIXES.len()).map(move |s| (p, s)))
        .filter(|&c| c != (0, 0))
        .collect();
    combos.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = String::new();
    for k in 0..count {
        let (query, entities) = &seeds[k % seeds.len()];
        let (p, s) = combos[(k / seeds.len()) % combos.len()];
        let text = format!("{}{}{}", PREFIXES[p], query.trim(), SUFFIXES[s]);
        out.push_str(&json!({"query": text, "entities": entities}).to_string());
        out.push('\n');
    }
    out
}

/// Always fails with the given error; counts calls.
pub struct FailingBackend {
    error: BackendError,
    calls: AtomicUsize,
}

impl FailingBackend {
    pub fn new(error: BackendError) -> Self {
        FailingBackend { error, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for FailingBackend {
    fn send(&self, _: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(self.error.clone())
    }

    fn name(&self) -> &str {
        "failing"
    }
}

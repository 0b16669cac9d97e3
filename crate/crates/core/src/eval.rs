//! Classification metrics, field-wise entity scoring and latency summaries.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::dataset::SeedSample;
use crate::registry::{EntityMap, EntitySchema, EntityValue, ToolCategory, ALL_TOOLS};
use crate::text::normalize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("entity keys {found:?} do not match schema keys {expected:?}")]
    SchemaMismatch { expected: Vec<String>, found: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub n: usize,
    pub accuracy: f64,
    /// Unweighted mean F1 over classes with gold support.
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: IndexMap<ToolCategory, ClassMetrics>,
    /// Rows are gold labels, columns predictions, both in registry order.
    pub confusion: [[usize; 8]; 8],
}

pub fn evaluate_classification(
    pairs: &[(ToolCategory, ToolCategory)],
) -> Result<ClassificationReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut confusion = [[0usize; 8]; 8];
    for (gold, pred) in pairs {
        confusion[gold.index()][pred.index()] += 1;
    }
    let n = pairs.len();
    let correct: usize = (0..8).map(|i| confusion[i][i]).sum();

    let mut per_class = IndexMap::new();
    for tool in ALL_TOOLS {
        let i = tool.index();
        let tp = confusion[i][i] as f64;
        let support: usize = confusion[i].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[i]).sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        per_class.insert(tool, ClassMetrics { precision, recall, f1, support });
    }

    let supported: Vec<&ClassMetrics> = per_class.values().filter(|m| m.support > 0).collect();
    let macro_f1 = supported.iter().map(|m| m.f1).sum::<f64>() / supported.len() as f64;
    let weighted_f1 = supported.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / n as f64;

    Ok(ClassificationReport {
        n,
        accuracy: correct as f64 / n as f64,
        macro_f1,
        weighted_f1,
        per_class,
        confusion,
    })
}

impl ClassificationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n={}  accuracy={:.4}  macro_f1={:.4}  weighted_f1={:.4}", self.n, self.accuracy, self.macro_f1, self.weighted_f1);
        let _ = writeln!(s, "{:<18} {:>9} {:>9} {:>9} {:>8}", "tool", "precision", "recall", "f1", "support");
        for (tool, m) in &self.per_class {
            let _ = writeln!(s, "{:<18} {:>9.4} {:>9.4} {:>9.4} {:>8}", tool.id(), m.precision, m.recall, m.f1, m.support);
        }
        let _ = writeln!(s, "\nconfusion (rows gold, cols predicted):");
        let _ = write!(s, "{:<18}", "");
        for t in ALL_TOOLS {
            let _ = write!(s, " {:>5}", &t.id()[..t.id().len().min(5)]);
        }
        s.push('\n');
        for t in ALL_TOOLS {
            let _ = write!(s, "{:<18}", t.id());
            for c in self.confusion[t.index()] {
                let _ = write!(s, " {c:>5}");
            }
            s.push('\n');
        }
        s
    }
}

/// Groups of interchangeable spellings; comparison maps each member to the
/// group's first entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymTable {
    canonical: HashMap<String, String>,
}

impl SynonymTable {
    pub fn bundled() -> Self {
        Self::from_json_str(include_str!("../data/synonyms.json")).expect("bundled synonyms parse")
    }

    /// Parses `[["chevrolet", "chevy"], ...]`.
    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        let groups: Vec<Vec<String>> = serde_json::from_str(text)?;
        Ok(Self::from_groups(groups))
    }

    pub fn from_groups<I, G, S>(groups: I) -> Self
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut canonical = HashMap::new();
        for group in groups {
            let members: Vec<String> = group.into_iter().map(|s| normalize(s.as_ref())).collect();
            if let Some(head) = members.first() {
                for m in &members {
                    canonical.insert(m.clone(), head.clone());
                }
            }
        }
        SynonymTable { canonical }
    }

    fn resolve(&self, normalized: String) -> String {
        self.canonical.get(&normalized).cloned().unwrap_or(normalized)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldDiff {
    pub field: String,
    pub gold: Value,
    pub predicted: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchOutcome {
    pub pass: bool,
    pub field_diffs: Vec<FieldDiff>,
}

fn field_matches(gold: &EntityValue, pred: &EntityValue, synonyms: Option<&SynonymTable>) -> bool {
    match (gold, pred) {
        (EntityValue::Null, EntityValue::Null) => true,
        (EntityValue::Int(a), EntityValue::Int(b)) => a == b,
        (EntityValue::Str(a), EntityValue::Str(b)) => {
            let (a, b) = (normalize(a), normalize(b));
            match synonyms {
                Some(t) => t.resolve(a) == t.resolve(b),
                None => a == b,
            }
        }
        _ => false,
    }
}

fn check_keys(schema: &EntitySchema, map: &EntityMap) -> Result<(), EvalError> {
    let mut expected: Vec<String> = schema.field_names().map(str::to_string).collect();
    let mut found: Vec<String> = map.keys().map(str::to_string).collect();
    expected.sort();
    found.sort();
    if expected == found {
        Ok(())
    } else {
        Err(EvalError::SchemaMismatch { expected, found })
    }
}

/// Field-by-field comparison; passes only when every field matches.
pub fn semantic_match(
    gold: &EntityMap,
    predicted: &EntityMap,
    schema: &EntitySchema,
    synonyms: Option<&SynonymTable>,
) -> Result<MatchOutcome, EvalError> {
    check_keys(schema, gold)?;
    check_keys(schema, predicted)?;
    let field_diffs: Vec<FieldDiff> = schema
        .field_names()
        .filter_map(|f| {
            let (g, p) = (gold.get(f)?, predicted.get(f)?);
            (!field_matches(g, p, synonyms))
                .then(|| FieldDiff { field: f.to_string(), gold: g.to_json(), predicted: p.to_json() })
        })
        .collect();
    Ok(MatchOutcome { pass: field_diffs.is_empty(), field_diffs })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleOutcome {
    pub id: usize,
    pub query: String,
    pub pass: bool,
    pub gold_tool: ToolCategory,
    pub predicted_tool: Option<ToolCategory>,
    pub field_diffs: Vec<FieldDiff>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionReport {
    pub n: usize,
    pub passes: usize,
    /// Defined as 0 for an empty dataset, with `empty` set.
    pub pass_rate: f64,
    pub empty: bool,
    pub per_sample: Vec<SampleOutcome>,
    pub per_field_mismatch_counts: IndexMap<String, usize>,
}

impl ExtractionReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("n={}  passes={}  pass_rate={:.4}\n", self.n, self.passes, self.pass_rate);
        if self.empty {
            s.push_str("(empty dataset)\n");
        }
        if !self.per_field_mismatch_counts.is_empty() {
            s.push_str("field mismatches:\n");
            for (f, c) in &self.per_field_mismatch_counts {
                let _ = writeln!(s, "  {f:<18} {c:>5}");
            }
        }
        s
    }
}

/// What a route function reports for one query.
pub type RouteOutput = Result<(ToolCategory, EntityMap), String>;

/// Routes every sample and scores it against its gold tool and entities.
/// A wrong tool fails the sample whatever its entities. `route` runs on up
/// to `parallelism` threads; the report is in dataset order.
pub fn evaluate_extraction<F>(
    samples: &[SeedSample],
    registry: &crate::registry::Registry,
    synonyms: Option<&SynonymTable>,
    parallelism: usize,
    route: F,
) -> ExtractionReport
where
    F: Fn(&str) -> RouteOutput + Sync,
{
    let outputs = par_map(samples, parallelism, |s| route(&s.query));
    let mut per_sample = Vec::with_capacity(samples.len());
    let mut counts: IndexMap<String, usize> = IndexMap::new();
    for (id, (sample, output)) in samples.iter().zip(outputs).enumerate() {
        let mut outcome = SampleOutcome {
            id,
            query: sample.query.clone(),
            pass: false,
            gold_tool: sample.tool,
            predicted_tool: None,
            field_diffs: Vec::new(),
            error: None,
        };
        match output {
            Err(e) => outcome.error = Some(e),
            Ok((tool, entities)) => {
                outcome.predicted_tool = Some(tool);
                if tool != sample.tool {
                    outcome.error = Some(format!("routed to {tool}, expected {}", sample.tool));
                } else {
                    match semantic_match(&sample.entities, &entities, registry.schema_for(tool), synonyms) {
                        Ok(m) => {
                            outcome.pass = m.pass;
                            outcome.field_diffs = m.field_diffs;
                        }
                        Err(e) => outcome.error = Some(e.to_string()),
                    }
                }
            }
        }
        for d in &outcome.field_diffs {
            *counts.entry(d.field.clone()).or_default() += 1;
        }
        per_sample.push(outcome);
    }
    let n = per_sample.len();
    let passes = per_sample.iter().filter(|s| s.pass).count();
    ExtractionReport {
        n,
        passes,
        pass_rate: if n == 0 { 0.0 } else { passes as f64 / n as f64 },
        empty: n == 0,
        per_sample,
        per_field_mismatch_counts: counts,
    }
}

/// Order-preserving map over `items` on at most `parallelism` threads.
pub fn par_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyReport {
    pub n: usize,
    pub mean_seconds: f64,
    pub p50_seconds: f64,
    pub p95_seconds: f64,
}

/// Nearest-rank percentile: the ceil(q*n)-th smallest sample.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    // guard against q*n landing a hair above an integer
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

pub fn latency_stats(samples: &[f64]) -> Result<LatencyReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        n: samples.len(),
        mean_seconds: samples.iter().sum::<f64>() / samples.len() as f64,
        p50_seconds: nearest_rank(&sorted, 0.5),
        p95_seconds: nearest_rank(&sorted, 0.95),
    })
}

//! Synthetic sample generation from labeled seeds: generation prompts,
//! candidate parsing, dedup and review bookkeeping.

use std::collections::HashSet;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::dataset::{GeneratedSample, Provenance, ReviewStatus, SeedSample};
use crate::extract::{parse_structured, BackendError, ChatBackend, ChatRequest, InferenceSettings, RequestHint};
use crate::registry::{Registry, ToolCategory, ALL_TOOLS};
use crate::text::normalize_loose;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("no seed samples given")]
    EmptySeeds,
    #[error("seed for {found} passed where all seeds must be {expected}")]
    MixedTools { expected: ToolCategory, found: ToolCategory },
    #[error("no seeds for requested tool {0}")]
    MissingSeeds(ToolCategory),
}

/// Prompt asking for `count` new samples for `tool`, one JSON object per
/// line, with the seeds as examples.
pub fn build_generation_prompt(seeds: &[&SeedSample], tool: ToolCategory, count: usize) -> Result<String, GenError> {
    if seeds.is_empty() {
        return Err(GenError::EmptySeeds);
    }
    if let Some(s) = seeds.iter().find(|s| s.tool != tool) {
        return Err(GenError::MixedTools { expected: tool, found: s.tool });
    }
    let fields: Vec<&str> = seeds[0].entities.keys().collect();
    let mut p = String::new();
    p += "You write training data for an automotive assistant that routes user queries to tools.\n";
    p += &format!("Tool: {} ({})\n", tool.id(), tool.description());
    if fields.is_empty() {
        p += "This tool takes no entities, so \"entities\" is always {}.\n";
    } else {
        p += &format!("The \"entities\" object has exactly these keys: {}. Use null for anything the query does not mention.\n", fields.join(", "));
    }
    p += "\nLabeled examples:\n";
    for s in seeds {
        let mut line = json!({"query": s.query, "entities": s.entities.to_json()});
        if let Some(r) = &s.reasoning {
            line["reasoning"] = json!(r);
        }
        p += &line.to_string();
        p += "\n";
    }
    p += &format!(
        "\nWrite {count} new labeled samples for {}. Vary the wording, vehicles and details. \
         Output exactly one JSON object per line with keys \"query\" and \"entities\", and nothing else.\n",
        tool.id()
    );
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationConfig {
    /// 1 gives one-shot prompts; more gives few-shot.
    pub seeds_per_prompt: usize,
    pub seed: u64,
    /// Recorded in provenance. Falls back to the backend name when empty.
    pub generator_model: String,
    pub settings: InferenceSettings,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            seeds_per_prompt: 1,
            seed: 42,
            generator_model: String::new(),
            settings: InferenceSettings { temperature: 0.7, max_tokens: 4096 },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ToolStats {
    pub requested: usize,
    pub candidates: usize,
    pub malformed: usize,
    pub invalid: usize,
    pub duplicates: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationError {
    pub tool: ToolCategory,
    pub error: BackendError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub samples: Vec<GeneratedSample>,
    pub per_tool: IndexMap<ToolCategory, ToolStats>,
    pub errors: Vec<GenerationError>,
}

impl GenerationReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<18} {:>9} {:>10} {:>9} {:>7} {:>10} {:>7}\n",
            "tool", "requested", "candidates", "malformed", "invalid", "duplicates", "emitted"
        );
        for (tool, t) in &self.per_tool {
            s += &format!(
                "{:<18} {:>9} {:>10} {:>9} {:>7} {:>10} {:>7}\n",
                tool.id(), t.requested, t.candidates, t.malformed, t.invalid, t.duplicates, t.emitted
            );
        }
        for e in &self.errors {
            s += &format!("error {}: {}\n", e.tool, e.error);
        }
        s
    }
}

/// Per requested tool: picks seeds, sends one generation prompt, keeps the
/// lines that parse and validate, then dedups against the seeds and earlier
/// output. Tools run concurrently and merge in tool order. A backend error
/// is logged for its tool and the other tools still complete.
pub fn generate(
    backend: &dyn ChatBackend,
    registry: &Registry,
    seeds: &[SeedSample],
    per_tool_counts: &IndexMap<ToolCategory, usize>,
    config: &GenerationConfig,
    timestamp: &str,
) -> Result<GenerationReport, GenError> {
    let requested: Vec<(ToolCategory, usize)> = ALL_TOOLS
        .iter()
        .filter_map(|t| per_tool_counts.get(t).map(|&n| (*t, n)))
        .filter(|&(_, n)| n > 0)
        .collect();
    let mut plans = Vec::new();
    for &(tool, count) in &requested {
        let pool: Vec<usize> = (0..seeds.len()).filter(|&i| seeds[i].tool == tool).collect();
        if pool.is_empty() {
            return Err(GenError::MissingSeeds(tool));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (tool.index() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let k = config.seeds_per_prompt.clamp(1, pool.len());
        let mut chosen: Vec<usize> = sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]).collect();
        chosen.sort_unstable();
        plans.push((tool, count, chosen));
    }

    let model = if config.generator_model.is_empty() { backend.name().to_string() } else { config.generator_model.clone() };
    let outcomes: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = plans
            .iter()
            .map(|(tool, count, chosen)| {
                scope.spawn(|| generate_one(backend, registry, seeds, *tool, *count, chosen, config, &model, timestamp))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("generation thread panicked")).collect()
    });

    let mut report = GenerationReport { samples: Vec::new(), per_tool: IndexMap::new(), errors: Vec::new() };
    let mut seen: HashSet<String> = seeds.iter().map(|s| normalize_loose(&s.query)).collect();
    for ((tool, count, _), outcome) in plans.iter().zip(outcomes) {
        let mut stats = ToolStats { requested: *count, ..Default::default() };
        match outcome {
            Ok((candidates, malformed, invalid)) => {
                stats.candidates = candidates.len() + malformed + invalid;
                stats.malformed = malformed;
                stats.invalid = invalid;
                for c in candidates {
                    if stats.emitted == *count {
                        break;
                    }
                    if seen.insert(normalize_loose(&c.sample.query)) {
                        report.samples.push(c);
                        stats.emitted += 1;
                    } else {
                        stats.duplicates += 1;
                    }
                }
            }
            Err(error) => report.errors.push(GenerationError { tool: *tool, error }),
        }
        report.per_tool.insert(*tool, stats);
    }
    Ok(report)
}

type Candidates = (Vec<GeneratedSample>, usize, usize);

#[allow(clippy::too_many_arguments)]
fn generate_one(
    backend: &dyn ChatBackend,
    registry: &Registry,
    seeds: &[SeedSample],
    tool: ToolCategory,
    count: usize,
    chosen: &[usize],
    config: &GenerationConfig,
    model: &str,
    timestamp: &str,
) -> Result<Candidates, BackendError> {
    let examples: Vec<&SeedSample> = chosen.iter().map(|&i| &seeds[i]).collect();
    let prompt = build_generation_prompt(&examples, tool, count).expect("seeds checked by caller");
    let hint = RequestHint::Generate {
        tool,
        count,
        seeds: examples.iter().map(|s| (s.query.clone(), s.entities.to_json())).collect(),
        seed: config.seed.wrapping_add(tool.index() as u64),
    };
    let request = ChatRequest::new(prompt, config.settings).expect("prompt is never empty").with_hint(hint);
    let raw = backend.send(&request)?;

    let provenance = Provenance { generator_model: model.to_string(), seed_indices: chosen.to_vec(), timestamp: timestamp.to_string() };
    let (mut out, mut malformed, mut invalid) = (Vec::new(), 0, 0);
    for line in raw.lines().map(str::trim) {
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        let Some((query, entities, reasoning)) = candidate(line, tool) else {
            malformed += 1;
            continue;
        };
        match registry.validate_entities(tool, &entities) {
            Ok(entities) => out.push(GeneratedSample {
                sample: SeedSample { query, tool, entities, reasoning },
                review_status: ReviewStatus::Pending,
                provenance: provenance.clone(),
            }),
            Err(_) => invalid += 1,
        }
    }
    Ok((out, malformed, invalid))
}

/// `(query, entities, reasoning)` from one output line. A line labeled with
/// a different tool is treated as malformed.
fn candidate(line: &str, tool: ToolCategory) -> Option<(String, Map<String, Value>, Option<String>)> {
    let obj = parse_structured(line).ok()?.object;
    let query = obj.get("query")?.as_str()?.trim();
    if query.is_empty() {
        return None;
    }
    if let Some(label) = obj.get("tool_category") {
        if label.as_str()? != tool.id() {
            return None;
        }
    }
    let entities = match obj.get("entities") {
        Some(Value::Object(m)) => m.clone(),
        None if tool.is_others() => Map::new(),
        _ => return None,
    };
    let reasoning = obj.get("reasoning").and_then(Value::as_str).map(str::to_string);
    Some((query.to_string(), entities, reasoning))
}

/// Drops samples whose loosely normalized query repeats a seed or an
/// earlier sample. Order is preserved.
pub fn dedup(samples: Vec<GeneratedSample>, seeds: &[SeedSample]) -> Vec<GeneratedSample> {
    let mut seen: HashSet<String> = seeds.iter().map(|s| normalize_loose(&s.query)).collect();
    samples.into_iter().filter(|s| seen.insert(normalize_loose(&s.sample.query))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk::load_desk_dataset;
    use crate::extract::{FailingBackend, MockBackend};
    use crate::registry::EntityMap;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    const TS: &str = "2026-01-01T00:00:00Z";

    fn seeds() -> Vec<SeedSample> {
        load_desk_dataset().unwrap().train
    }

    fn counts(pairs: &[(ToolCategory, usize)]) -> IndexMap<ToolCategory, usize> {
        pairs.iter().copied().collect()
    }

    fn generated(query: &str) -> GeneratedSample {
        GeneratedSample {
            sample: SeedSample::new(query, ToolCategory::Others, EntityMap::new()),
            review_status: ReviewStatus::Pending,
            provenance: Provenance { generator_model: "m".into(), seed_indices: vec![0], timestamp: TS.into() },
        }
    }

    struct Scripted {
        text: String,
        calls: AtomicUsize,
    }

    impl ChatBackend for Scripted {
        fn send(&self, _: &ChatRequest) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.text.clone())
        }

        fn name(&self) -> &str {
            "scripted"
        }
    }

    #[test]
    fn prompt_construction() {
        let s = seeds();
        let tsb = s.iter().find(|x| x.tool == ToolCategory::Tsb).unwrap();
        let p = build_generation_prompt(&[tsb], ToolCategory::Tsb, 5).unwrap();
        assert!(p.contains(&tsb.query));
        assert!(p.contains("Write 5 new labeled samples"));
        assert!(p.contains("make, model, year, issue"));
        assert_eq!(p, build_generation_prompt(&[tsb], ToolCategory::Tsb, 5).unwrap());

        let nhtsa = s.iter().find(|x| x.tool == ToolCategory::Nhtsa).unwrap();
        assert_eq!(
            build_generation_prompt(&[tsb, nhtsa], ToolCategory::Tsb, 5),
            Err(GenError::MixedTools { expected: ToolCategory::Tsb, found: ToolCategory::Nhtsa })
        );
        assert_eq!(build_generation_prompt(&[], ToolCategory::Tsb, 5), Err(GenError::EmptySeeds));
    }

    #[test]
    fn mock_generation_meets_counts() {
        let reg = Registry::default();
        let backend = MockBackend::new(reg.clone());
        let want = counts(&[(ToolCategory::Tsb, 10), (ToolCategory::PartsCatalog, 7), (ToolCategory::Others, 3)]);
        let r = generate(&backend, &reg, &seeds(), &want, &GenerationConfig::default(), TS).unwrap();
        assert!(r.errors.is_empty());
        assert_eq!(r.samples.len(), 20);
        assert_eq!(r.per_tool.keys().copied().collect::<Vec<_>>(), [ToolCategory::Tsb, ToolCategory::PartsCatalog, ToolCategory::Others]);
        for (tool, st) in &r.per_tool {
            assert_eq!(st.emitted, want[tool]);
        }
        for g in &r.samples {
            assert_eq!(g.review_status, ReviewStatus::Pending);
            assert_eq!(g.provenance.timestamp, TS);
            assert_eq!(g.provenance.generator_model, "mock");
            assert_eq!(reg.validate_map(g.sample.tool, &g.sample.entities).as_ref(), Ok(&g.sample.entities));
        }
        // tool order, then generation order
        let tools: Vec<_> = r.samples.iter().map(|g| g.sample.tool.index()).collect();
        assert!(tools.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn few_shot_prompts_use_several_seeds() {
        let reg = Registry::default();
        let backend = MockBackend::new(reg.clone());
        let cfg = GenerationConfig { seeds_per_prompt: 3, ..Default::default() };
        let s = seeds();
        let r = generate(&backend, &reg, &s, &counts(&[(ToolCategory::Nhtsa, 9)]), &cfg, TS).unwrap();
        let idx = &r.samples[0].provenance.seed_indices;
        assert_eq!(idx.len(), 3);
        assert!(idx.iter().all(|&i| s[i].tool == ToolCategory::Nhtsa));
        assert_eq!(r.samples.len(), 9);
    }

    #[test]
    fn reproducible_under_fixed_seed() {
        let reg = Registry::default();
        let backend = MockBackend::new(reg.clone());
        let want = counts(&[(ToolCategory::Techdoc, 12), (ToolCategory::ServiceToParts, 12)]);
        let cfg = GenerationConfig { seeds_per_prompt: 2, seed: 9, ..Default::default() };
        let a = generate(&backend, &reg, &seeds(), &want, &cfg, TS).unwrap();
        let b = generate(&backend, &reg, &seeds(), &want, &cfg, TS).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_and_invalid_lines_are_dropped_and_counted() {
        let reg = Registry::default();
        let text = [
            r#"{"query": "TSB for rattle in a 2015 Kia Soul?", "entities": {"make": "Kia", "model": "Soul", "year": 2015, "issue": "rattle"}}"#,
            "not json at all",
            r#"{"query": "", "entities": {}}"#,
            r#"{"query": "TSB for a 2012 Kia Rio?", "entities": {"make": "Kia", "colour": "red"}}"#,
            "```",
            r#"{"query": "tsb for rattle in a 2015 kia soul", "entities": {"make": "Kia", "model": "Soul", "year": 2015, "issue": "rattle"}}"#,
        ]
        .join("\n");
        let backend = Scripted { text, calls: AtomicUsize::new(0) };
        let r = generate(&backend, &reg, &seeds(), &counts(&[(ToolCategory::Tsb, 5)]), &GenerationConfig::default(), TS).unwrap();
        assert_eq!(r.samples.len(), 1);
        assert_eq!(
            r.per_tool[&ToolCategory::Tsb],
            ToolStats { requested: 5, candidates: 5, malformed: 2, invalid: 1, duplicates: 1, emitted: 1 }
        );
    }

    #[test]
    fn zero_requested_makes_no_calls() {
        let reg = Registry::default();
        let backend = Scripted { text: String::new(), calls: AtomicUsize::new(0) };
        let r = generate(&backend, &reg, &seeds(), &counts(&[(ToolCategory::Tsb, 0)]), &GenerationConfig::default(), TS).unwrap();
        assert!(r.samples.is_empty() && r.per_tool.is_empty());
        assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn missing_seeds_is_an_error() {
        let reg = Registry::default();
        let only_tsb: Vec<_> = seeds().into_iter().filter(|s| s.tool == ToolCategory::Tsb).collect();
        let err = generate(&MockBackend::new(reg.clone()), &reg, &only_tsb, &counts(&[(ToolCategory::Nhtsa, 2)]), &GenerationConfig::default(), TS);
        assert_eq!(err.unwrap_err(), GenError::MissingSeeds(ToolCategory::Nhtsa));
    }

    #[test]
    fn backend_errors_are_logged_per_tool() {
        let reg = Registry::default();
        let backend = FailingBackend::new(BackendError::HttpStatus { code: 503, body: "busy".into() });
        let r = generate(&backend, &reg, &seeds(), &counts(&[(ToolCategory::Tsb, 3), (ToolCategory::Nhtsa, 3)]), &GenerationConfig::default(), TS).unwrap();
        assert!(r.samples.is_empty());
        assert_eq!(r.errors.iter().map(|e| e.tool).collect::<Vec<_>>(), [ToolCategory::Tsb, ToolCategory::Nhtsa]);
        assert!(r.to_text().contains("error tsb"));
    }

    #[test]
    fn mock_undershoots_rather_than_fabricating() {
        // one seed and 34 prefix/suffix pairings: the rest repeat and are deduped
        let reg = Registry::default();
        let s = seeds();
        let r = generate(&MockBackend::new(reg.clone()), &reg, &s, &counts(&[(ToolCategory::Tsb, 50)]), &GenerationConfig::default(), TS).unwrap();
        let st = &r.per_tool[&ToolCategory::Tsb];
        assert_eq!(st.emitted, 34);
        assert_eq!(st.duplicates, 16);
    }

    #[test]
    fn generated_records_round_trip() {
        let reg = Registry::default();
        let r = generate(&MockBackend::new(reg.clone()), &reg, &seeds(), &counts(&[(ToolCategory::RepairToParts, 4)]), &GenerationConfig::default(), TS).unwrap();
        let records: Vec<_> = r.samples.iter().map(GeneratedSample::to_record).collect();
        let text = crate::dataset::to_jsonl(&records);
        assert_eq!(crate::dataset::parse_jsonl(&text).unwrap(), records);
        assert!(text.contains("\"review_status\":\"pending\""));
    }

    #[test]
    fn dedup_examples() {
        let s = seeds();
        let out = dedup(vec![generated("Is there a TSB?"), generated("is there a tsb"), generated(&s[0].query.to_uppercase())], &s);
        assert_eq!(out.iter().map(|g| g.sample.query.as_str()).collect::<Vec<_>>(), ["Is there a TSB?"]);
        let distinct: Vec<_> = (0..100).map(|i| generated(&format!("query number {i}"))).collect();
        assert_eq!(dedup(distinct, &[]).len(), 100);
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent(queries in proptest::collection::vec("[a-c ,.A-C]{0,6}", 0..30)) {
            let items: Vec<_> = queries.iter().map(|q| generated(q)).collect();
            let once = dedup(items, &[]);
            let twice = dedup(once.clone(), &[]);
            prop_assert_eq!(&once, &twice);
            let keys: HashSet<_> = once.iter().map(|g| normalize_loose(&g.sample.query)).collect();
            prop_assert_eq!(keys.len(), once.len());
        }
    }
}

//! Prompt pool: one few-shot extraction prompt per entity-bearing tool plus
//! a composite prompt for single-step routing.
//!
//! Prompts live in plain text files so they can be edited without a
//! rebuild. Each `<tool>.prompt` file starts with a JSON front-matter block
//! between `---` lines, followed by the instruction body:
//!
//! ```text
//! ---
//! {"tool": "tsb", "fewshot": [{"query": "...", "output": {"make": "Kia", ...}}]}
//! ---
//! Extract ... {{schema}} ... {{examples}} ... Query: {{query}}
//! ```
//!
//! `{{schema}}` and `{{examples}}` are expanded once at load time; the
//! `{{query}}` placeholder must then appear exactly once. The composite
//! prompt lives in `_composite.prompt`, whose body uses `{{tools}}` and
//! `{{query}}` and whose optional front matter supplies examples for tools
//! that have no extraction prompt (i.e. `others`).

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::registry::{Registry, SchemaViolations, ToolCategory, ValueKind, ALL_TOOLS};

pub use crate::text::token_count;

pub const QUERY_PLACEHOLDER: &str = "{{query}}";
const SCHEMA_SLOT: &str = "{{schema}}";
const EXAMPLES_SLOT: &str = "{{examples}}";
const TOOLS_SLOT: &str = "{{tools}}";
pub const COMPOSITE_FILE: &str = "_composite.prompt";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("`others` has no extraction prompt")]
    NoPromptForOthers,
    #[error("prompt pool has no template for `{0}`")]
    MissingTemplate(ToolCategory),
    #[error("prompt file {file}: {message}")]
    Format { file: String, message: String },
    #[error("few-shot example {index} in the `{tool}` prompt does not match its schema: {source}")]
    InvalidFewShot {
        tool: ToolCategory,
        index: usize,
        #[source]
        source: SchemaViolations,
    },
    #[error("failed to read prompt pool: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShot {
    pub query: String,
    pub output: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub tool: ToolCategory,
    pub instruction: String,
    pub fewshot: Vec<FewShot>,
    text: String,
    placeholder_at: usize,
}

impl PromptTemplate {
    /// Fully expanded template text, still containing `{{query}}`.
    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes the query in a single pass; the query is never re-scanned.
    pub fn render(&self, query: &str) -> String {
        let mut out = String::with_capacity(self.text.len() + query.len());
        out.push_str(&self.text[..self.placeholder_at]);
        out.push_str(query);
        out.push_str(&self.text[self.placeholder_at + QUERY_PLACEHOLDER.len()..]);
        out
    }
}

/// Convenience wrapper matching [`PromptTemplate::render`].
pub fn render(template: &PromptTemplate, query: &str) -> String {
    template.render(query)
}

#[derive(Debug, Clone, PartialEq)]
struct CompositeTemplate {
    body: String,
    fewshot: Vec<CompositeExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeExample {
    pub query: String,
    pub tool_category: ToolCategory,
    #[serde(default)]
    pub entities: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPool {
    templates: IndexMap<ToolCategory, PromptTemplate>,
    composite: CompositeTemplate,
}

#[derive(Deserialize)]
struct ToolFrontMatter {
    tool: ToolCategory,
    #[serde(default)]
    fewshot: Vec<FewShot>,
}

#[derive(Deserialize, Default)]
struct CompositeFrontMatter {
    #[serde(default)]
    fewshot: Vec<CompositeExample>,
}

const BUNDLED: [(&str, &str); 8] = [
    ("tsb.prompt", include_str!("../prompts/tsb.prompt")),
    ("nhtsa.prompt", include_str!("../prompts/nhtsa.prompt")),
    ("techdoc.prompt", include_str!("../prompts/techdoc.prompt")),
    ("smart_insights.prompt", include_str!("../prompts/smart_insights.prompt")),
    ("parts_catalog.prompt", include_str!("../prompts/parts_catalog.prompt")),
    ("repair_to_parts.prompt", include_str!("../prompts/repair_to_parts.prompt")),
    ("service_to_parts.prompt", include_str!("../prompts/service_to_parts.prompt")),
    (COMPOSITE_FILE, include_str!("../prompts/_composite.prompt")),
];

/// Splits `---\n{json}\n---\nbody` into its two parts. A file without front
/// matter yields `None` and the whole text as body.
fn split_front_matter<'a>(file: &str, text: &'a str) -> Result<(Option<&'a str>, &'a str), PromptError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let Some(rest) = text.strip_prefix("---\n").or_else(|| text.strip_prefix("---\r\n")) else {
        return Ok((None, text));
    };
    let end = rest
        .find("\n---\n")
        .or_else(|| rest.find("\n---\r\n"))
        .ok_or_else(|| PromptError::Format {
            file: file.to_string(),
            message: "front matter is not closed by a `---` line".to_string(),
        })?;
    let body_start = end + rest[end..].find("---").expect("delimiter found") + 3;
    let body = rest[body_start..].trim_start_matches(['\r', '\n']);
    Ok((Some(&rest[..end]), body))
}

fn schema_block(registry: &Registry, tool: ToolCategory) -> String {
    registry
        .schema_for(tool)
        .fields
        .iter()
        .map(|f| {
            let kind = match f.value_kind {
                ValueKind::String => "string or null",
                ValueKind::Integer => "integer or null",
            };
            format!("- {} ({kind}): {}", f.name, f.description)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn compact(value: &Value) -> String {
    serde_json::to_string(value).expect("JSON value serializes")
}

fn examples_block(fewshot: &[FewShot]) -> String {
    fewshot
        .iter()
        .map(|f| format!("Query: {}\nJSON: {}", f.query, compact(&f.output)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn parse_tool_prompt(file: &str, text: &str, registry: &Registry) -> Result<PromptTemplate, PromptError> {
    let format_err = |message: String| PromptError::Format { file: file.to_string(), message };
    let (front, body) = split_front_matter(file, text)?;
    let front = front.ok_or_else(|| format_err("missing JSON front matter".to_string()))?;
    let meta: ToolFrontMatter =
        serde_json::from_str(front).map_err(|e| format_err(format!("front matter: {e}")))?;
    if meta.tool.is_others() {
        return Err(format_err("`others` cannot have an extraction prompt".to_string()));
    }
    for (index, shot) in meta.fewshot.iter().enumerate() {
        registry
            .validate_value(meta.tool, &shot.output)
            .map_err(|source| PromptError::InvalidFewShot { tool: meta.tool, index, source })?;
        if shot.query.contains(QUERY_PLACEHOLDER) {
            return Err(format_err(format!("few-shot query {index} contains {QUERY_PLACEHOLDER}")));
        }
    }
    let instruction = body.to_string();
    let text = instruction
        .replace(SCHEMA_SLOT, &schema_block(registry, meta.tool))
        .replace(EXAMPLES_SLOT, &examples_block(&meta.fewshot));
    let count = text.matches(QUERY_PLACEHOLDER).count();
    if count != 1 {
        return Err(format_err(format!("expected exactly one {QUERY_PLACEHOLDER}, found {count}")));
    }
    let placeholder_at = text.find(QUERY_PLACEHOLDER).expect("counted");
    Ok(PromptTemplate { tool: meta.tool, instruction, fewshot: meta.fewshot, text, placeholder_at })
}

fn parse_composite(text: &str, registry: &Registry) -> Result<CompositeTemplate, PromptError> {
    let format_err = |message: String| PromptError::Format { file: COMPOSITE_FILE.to_string(), message };
    let (front, body) = split_front_matter(COMPOSITE_FILE, text)?;
    let meta: CompositeFrontMatter = match front {
        Some(f) => serde_json::from_str(f).map_err(|e| format_err(format!("front matter: {e}")))?,
        None => CompositeFrontMatter::default(),
    };
    for (index, ex) in meta.fewshot.iter().enumerate() {
        registry
            .validate_entities(ex.tool_category, &ex.entities)
            .map_err(|source| PromptError::InvalidFewShot { tool: ex.tool_category, index, source })?;
    }
    for slot in [TOOLS_SLOT, QUERY_PLACEHOLDER] {
        let n = body.matches(slot).count();
        if n != 1 {
            return Err(format_err(format!("expected exactly one {slot}, found {n}")));
        }
    }
    Ok(CompositeTemplate { body: body.to_string(), fewshot: meta.fewshot })
}

impl PromptPool {
    /// The prompts shipped with the crate (also found under `prompts/`).
    pub fn bundled(registry: &Registry) -> Result<Self, PromptError> {
        Self::from_files(BUNDLED.iter().map(|(n, t)| (n.to_string(), t.to_string())), registry)
    }

    /// Loads every `*.prompt` file in `dir`. All seven entity-bearing tools
    /// and the composite header must be present.
    pub fn load_dir(dir: impl AsRef<Path>, registry: &Registry) -> Result<Self, PromptError> {
        let mut files = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("prompt") {
                continue;
            }
            let name = path.file_name().expect("file has a name").to_string_lossy().into_owned();
            files.push((name, std::fs::read_to_string(&path)?));
        }
        files.sort();
        Self::from_files(files, registry)
    }

    fn from_files(
        files: impl IntoIterator<Item = (String, String)>,
        registry: &Registry,
    ) -> Result<Self, PromptError> {
        let mut templates = IndexMap::new();
        let mut composite = None;
        for (name, text) in files {
            if name == COMPOSITE_FILE {
                composite = Some(parse_composite(&text, registry)?);
                continue;
            }
            let template = parse_tool_prompt(&name, &text, registry)?;
            let expected = format!("{}.prompt", template.tool.id());
            if name != expected {
                return Err(PromptError::Format {
                    file: name,
                    message: format!("declares tool `{}` but should be named {expected}", template.tool),
                });
            }
            templates.insert(template.tool, template);
        }
        let composite = composite.ok_or_else(|| PromptError::Format {
            file: COMPOSITE_FILE.to_string(),
            message: "composite prompt is missing".to_string(),
        })?;
        let pool = PromptPool { templates, composite };
        pool.check_complete()?;
        Ok(pool)
    }

    pub fn check_complete(&self) -> Result<(), PromptError> {
        match ALL_TOOLS.iter().find(|t| !t.is_others() && !self.templates.contains_key(*t)) {
            Some(t) => Err(PromptError::MissingTemplate(*t)),
            None => Ok(()),
        }
    }

    /// Copy of the pool with one tool's template dropped.
    pub fn without(&self, tool: ToolCategory) -> Self {
        let mut pool = self.clone();
        pool.templates.shift_remove(&tool);
        pool
    }

    pub fn select(&self, tool: ToolCategory) -> Result<&PromptTemplate, PromptError> {
        if tool.is_others() {
            return Err(PromptError::NoPromptForOthers);
        }
        self.templates.get(&tool).ok_or(PromptError::MissingTemplate(tool))
    }

    pub fn templates(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    /// One prompt describing every tool, its schema and one example, asking
    /// for `{"tool_category", "entities"}`.
    pub fn composite_prompt(&self, registry: &Registry, query: &str) -> String {
        let mut sections = Vec::with_capacity(ALL_TOOLS.len());
        for tool in registry.tools() {
            let mut section = format!("## {}\n{}\n", tool.id(), tool.description());
            let schema = registry.schema_for(*tool);
            if schema.is_empty() {
                section.push_str("Entities: none, return an empty object.\n");
            } else {
                section.push_str("Entities:\n");
                section.push_str(&schema_block(registry, *tool));
                section.push('\n');
            }
            if let Some((q, entities)) = self.composite_example(*tool) {
                let output = serde_json::json!({"tool_category": tool.id(), "entities": entities});
                section.push_str(&format!("Example:\nQuery: {q}\nJSON: {}\n", compact(&output)));
            }
            sections.push(section);
        }
        let tools = sections.join("\n");
        let body = &self.composite.body;
        let (pre, post) = body.split_once(QUERY_PLACEHOLDER).expect("validated at load");
        // Only the text outside the query is expanded, so query braces stay verbatim.
        format!("{}{query}{}", pre.replace(TOOLS_SLOT, &tools), post.replace(TOOLS_SLOT, &tools))
    }

    fn composite_example(&self, tool: ToolCategory) -> Option<(&str, Value)> {
        if let Some(ex) = self.composite.fewshot.iter().find(|e| e.tool_category == tool) {
            return Some((&ex.query, Value::Object(ex.entities.clone())));
        }
        let shot = self.templates.get(&tool)?.fewshot.first()?;
        Some((&shot.query, shot.output.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> (Registry, PromptPool) {
        let reg = Registry::default();
        let pool = PromptPool::bundled(&reg).unwrap();
        (reg, pool)
    }

    fn probe_queries() -> Vec<String> {
        crate::desk::load_desk_dataset().unwrap().probe_queries()
    }

    #[test]
    fn bundled_pool_is_complete() {
        let (_, pool) = pool();
        for t in ALL_TOOLS.iter().filter(|t| !t.is_others()) {
            assert_eq!(pool.select(*t).unwrap().tool, *t);
        }
        assert_eq!(pool.templates().count(), 7);
    }

    #[test]
    fn select_errors() {
        let (_, pool) = pool();
        assert!(matches!(pool.select(ToolCategory::Others), Err(PromptError::NoPromptForOthers)));
        let partial = pool.without(ToolCategory::Tsb);
        assert!(matches!(
            partial.select(ToolCategory::Tsb),
            Err(PromptError::MissingTemplate(ToolCategory::Tsb))
        ));
        assert!(partial.check_complete().is_err());
    }

    #[test]
    fn bundled_fewshot_validates() {
        let (reg, pool) = pool();
        for t in pool.templates() {
            assert!(t.fewshot.len() >= 2, "{}", t.tool);
            for shot in &t.fewshot {
                reg.validate_value(t.tool, &shot.output).unwrap();
            }
        }
    }

    #[test]
    fn render_substitutes_once() {
        let reg = Registry::default();
        let text = "---\n{\"tool\": \"tsb\", \"fewshot\": []}\n---\nQ: {{query}}";
        let t = parse_tool_prompt("tsb.prompt", text, &reg).unwrap();
        assert_eq!(t.render("hi"), "Q: hi");
        assert_eq!(t.render("{{query}} {x}"), "Q: {{query}} {x}");
    }

    #[test]
    fn render_is_length_additive() {
        let (_, pool) = pool();
        for t in pool.templates() {
            for q in ["a", "Replace brake pads for my Toyota Corolla 2015.", "ünïcode ✓"] {
                let out = t.render(q);
                assert_eq!(out.len(), t.text().len() - QUERY_PLACEHOLDER.len() + q.len());
                assert_eq!(out.matches(q).count(), t.text().matches(q).count() + 1);
            }
        }
    }

    #[test]
    fn placeholder_count_enforced() {
        let reg = Registry::default();
        for body in ["no slot", "{{query}} and {{query}}"] {
            let text = format!("---\n{{\"tool\": \"tsb\"}}\n---\n{body}");
            assert!(matches!(
                parse_tool_prompt("tsb.prompt", &text, &reg),
                Err(PromptError::Format { .. })
            ));
        }
    }

    #[test]
    fn invalid_fewshot_rejected() {
        let reg = Registry::default();
        let text = "---\n{\"tool\": \"tsb\", \"fewshot\": [{\"query\": \"q\", \"output\": {\"pnc\": \"1\"}}]}\n---\n{{query}}";
        assert!(matches!(
            parse_tool_prompt("tsb.prompt", text, &reg),
            Err(PromptError::InvalidFewShot { index: 0, .. })
        ));
    }

    #[test]
    fn composite_mentions_every_tool() {
        let (reg, pool) = pool();
        let text = pool.composite_prompt(&reg, "Replace brake pads for my Toyota Corolla 2015.");
        for t in ALL_TOOLS {
            assert!(text.contains(t.id()), "{}", t.id());
        }
        assert!(text.contains("tool_category"));
        assert_eq!(text, pool.composite_prompt(&reg, "Replace brake pads for my Toyota Corolla 2015."));
    }

    #[test]
    fn composite_keeps_query_verbatim() {
        let (reg, pool) = pool();
        let text = pool.composite_prompt(&reg, "weird {{tools}} query");
        assert!(text.contains("weird {{tools}} query"));
    }

    #[test]
    fn composite_dominates_every_tool_prompt() {
        let (reg, pool) = pool();
        for q in probe_queries() {
            let composite = token_count(&pool.composite_prompt(&reg, &q));
            for t in pool.templates() {
                assert!(token_count(&t.render(&q)) < composite);
            }
        }
    }

    #[test]
    fn load_dir_matches_bundled() {
        let (reg, pool) = pool();
        let dir = tempfile::tempdir().unwrap();
        for (name, text) in BUNDLED {
            std::fs::write(dir.path().join(name), text).unwrap();
        }
        std::fs::write(dir.path().join("README.txt"), "ignored").unwrap();
        assert_eq!(PromptPool::load_dir(dir.path(), &reg).unwrap(), pool);

        std::fs::remove_file(dir.path().join("nhtsa.prompt")).unwrap();
        assert!(matches!(
            PromptPool::load_dir(dir.path(), &reg),
            Err(PromptError::MissingTemplate(ToolCategory::Nhtsa))
        ));
    }

    #[test]
    fn misnamed_file_rejected() {
        let reg = Registry::default();
        let dir = tempfile::tempdir().unwrap();
        for (name, text) in BUNDLED {
            let name = if name == "tsb.prompt" { "bulletins.prompt" } else { name };
            std::fs::write(dir.path().join(name), text).unwrap();
        }
        assert!(matches!(PromptPool::load_dir(dir.path(), &reg), Err(PromptError::Format { .. })));
    }
}

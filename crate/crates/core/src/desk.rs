//! The bundled desk-scale dataset: 20 training queries per tool, a 40-query
//! held-out paraphrase set and 8 canonical end-to-end fixtures.
//!
//! Regenerate with `data/generate_desk.py`.

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

use crate::dataset::{parse_samples, DatasetError, SeedSample};
use crate::registry::{Registry, ToolCategory, ALL_TOOLS};
use crate::text::normalize_loose;

pub const TRAIN_PER_TOOL: usize = 20;
pub const HOLDOUT_LEN: usize = 40;
pub const CANONICAL_LEN: usize = 8;
pub const PROBE_LEN: usize = 50;

/// The two brake-pad queries whose intent differs only by "How to".
pub const WORKED_QUERIES: [&str; 2] = [
    "Replace brake pads for my Toyota Corolla 2015.",
    "How to replace brake pads for my Toyota Corolla 2015.",
];

const TRAIN: &str = include_str!("../data/desk/train.jsonl");
const HOLDOUT: &str = include_str!("../data/desk/holdout.jsonl");
const CANONICAL: &str = include_str!("../data/desk/canonical.jsonl");

#[derive(Debug, Clone)]
pub struct DeskDataset {
    pub train: Vec<SeedSample>,
    pub holdout: Vec<SeedSample>,
    pub canonical: Vec<SeedSample>,
}

#[derive(Debug, Error)]
#[error("corrupt desk bundle ({file}): {invariant}")]
pub struct CorruptBundle {
    pub file: &'static str,
    pub invariant: String,
}

pub fn load_desk_dataset() -> Result<DeskDataset, CorruptBundle> {
    from_texts(TRAIN, HOLDOUT, CANONICAL)
}

/// Loads `train.jsonl`, `holdout.jsonl` and `canonical.jsonl` from `dir`
/// and checks the same invariants as the bundled copy.
pub fn load_from(dir: impl AsRef<Path>) -> Result<DeskDataset, CorruptBundle> {
    let dir = dir.as_ref();
    let read = |file: &'static str| {
        std::fs::read_to_string(dir.join(file))
            .map_err(|e| CorruptBundle { file, invariant: format!("unreadable: {e}") })
    };
    from_texts(&read("train.jsonl")?, &read("holdout.jsonl")?, &read("canonical.jsonl")?)
}

fn from_texts(train: &str, holdout: &str, canonical: &str) -> Result<DeskDataset, CorruptBundle> {
    let registry = Registry::default();
    let parse = |file: &'static str, text: &str| {
        parse_samples(text, &registry).map_err(|e: DatasetError| CorruptBundle {
            file,
            invariant: format!("every sample validates: {e}"),
        })
    };
    let ds = DeskDataset {
        train: parse("train.jsonl", train)?,
        holdout: parse("holdout.jsonl", holdout)?,
        canonical: parse("canonical.jsonl", canonical)?,
    };
    ds.check()?;
    Ok(ds)
}

impl DeskDataset {
    fn check(&self) -> Result<(), CorruptBundle> {
        let fail = |file, invariant: String| Err(CorruptBundle { file, invariant });

        for tool in ALL_TOOLS {
            let n = self.train.iter().filter(|s| s.tool == tool).count();
            if n != TRAIN_PER_TOOL {
                return fail(
                    "train.jsonl",
                    format!("class balance: expected {TRAIN_PER_TOOL} `{tool}` samples, found {n}"),
                );
            }
        }
        if self.train.len() != TRAIN_PER_TOOL * ALL_TOOLS.len() {
            return fail("train.jsonl", format!("expected 160 samples, found {}", self.train.len()));
        }
        if self.holdout.len() != HOLDOUT_LEN {
            return fail(
                "holdout.jsonl",
                format!("expected {HOLDOUT_LEN} samples, found {}", self.holdout.len()),
            );
        }

        let seen: HashSet<String> = self.train.iter().map(|s| normalize_loose(&s.query)).collect();
        if let Some(s) = self.holdout.iter().find(|s| seen.contains(&normalize_loose(&s.query))) {
            return fail("holdout.jsonl", format!("train/holdout disjointness: {:?}", s.query));
        }
        if let Some(s) = self.canonical.iter().find(|s| seen.contains(&normalize_loose(&s.query))) {
            return fail("canonical.jsonl", format!("canonical queries are not trained on: {:?}", s.query));
        }

        let tools: Vec<ToolCategory> = self.canonical.iter().map(|s| s.tool).collect();
        if tools != ALL_TOOLS {
            return fail(
                "canonical.jsonl",
                format!("one fixture per tool in registry order, found {tools:?}"),
            );
        }
        Ok(())
    }

    pub fn canonical_for(&self, tool: ToolCategory) -> &SeedSample {
        &self.canonical[tool.index()]
    }

    /// Fixed 50-query set for latency and prompt-size comparisons: holdout,
    /// then canonical, then the two worked queries.
    pub fn probe_queries(&self) -> Vec<String> {
        self.holdout
            .iter()
            .chain(&self.canonical)
            .map(|s| s.query.clone())
            .chain(WORKED_QUERIES.iter().map(|q| q.to_string()))
            .collect()
    }
}

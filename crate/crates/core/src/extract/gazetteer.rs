//! Lexicons used by the rule-based mock extractor.

use std::sync::OnceLock;

use indexmap::IndexMap;
use serde::Deserialize;

const BUNDLED: &str = include_str!("../../data/gazetteer.json");

#[derive(Debug, Clone, Deserialize)]
pub struct Gazetteer {
    /// Canonical make name to its model names.
    pub makes: IndexMap<String, Vec<String>>,
    /// Lowercase nickname to canonical make name.
    pub make_aliases: IndexMap<String, String>,
    /// Canonical component name to the surface forms that denote it.
    pub components: IndexMap<String, Vec<String>>,
    pub systems: Vec<String>,
    pub brands: Vec<String>,
    /// Base verb to its inflected forms.
    pub labor_actions: IndexMap<String, Vec<String>>,
    pub driving_patterns: Vec<String>,
}

impl Gazetteer {
    pub fn bundled() -> &'static Gazetteer {
        static G: OnceLock<Gazetteer> = OnceLock::new();
        G.get_or_init(|| Gazetteer::from_json_str(BUNDLED).expect("bundled gazetteer parses"))
    }

    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Every (surface form, canonical make) pair, aliases included.
    pub fn make_forms(&self) -> impl Iterator<Item = (&str, &str)> {
        self.makes
            .keys()
            .map(|m| (m.as_str(), m.as_str()))
            .chain(self.make_aliases.iter().map(|(a, m)| (a.as_str(), m.as_str())))
    }
}

/// Lowercases without changing any byte offsets, so spans found in the
/// folded text index the original. Characters whose lowercase form has a
/// different UTF-8 length are left as they are.
pub(crate) fn fold(text: &str) -> String {
    text.chars()
        .map(|c| {
            let mut lower = c.to_lowercase();
            match (lower.next(), lower.next()) {
                (Some(l), None) if l.len_utf8() == c.len_utf8() => l,
                _ => c,
            }
        })
        .collect()
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric()
}

fn bounded(hay: &str, start: usize, end: usize) -> bool {
    let before = hay[..start].chars().next_back().map_or(true, |c| !is_word(c));
    let after = hay[end..].chars().next().map_or(true, |c| !is_word(c));
    before && after
}

/// Byte offsets of every word-bounded occurrence of `needle` in `hay`.
/// Both are expected to be folded already.
pub(crate) fn find_all(hay: &str, needle: &str) -> Vec<usize> {
    if needle.is_empty() {
        return Vec::new();
    }
    hay.match_indices(needle)
        .map(|(i, _)| i)
        .filter(|&i| bounded(hay, i, i + needle.len()))
        .collect()
}

pub(crate) fn matches_at(hay: &str, at: usize, needle: &str) -> bool {
    hay[at..].starts_with(needle) && bounded(hay, at, at + needle.len())
}

/// Earliest word-bounded hit among `candidates`; ties go to the longer form.
/// Returns (start, end, payload).
pub(crate) fn earliest<'a, T: Copy>(
    hay: &str,
    candidates: impl IntoIterator<Item = (&'a str, T)>,
) -> Option<(usize, usize, T)> {
    let mut best: Option<(usize, usize, T)> = None;
    for (form, payload) in candidates {
        let folded = fold(form);
        if let Some(&start) = find_all(hay, &folded).first() {
            let end = start + folded.len();
            let better = match best {
                None => true,
                Some((s, e, _)) => start < s || (start == s && end > e),
            };
            if better {
                best = Some((start, end, payload));
            }
        }
    }
    best
}

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, LabeledExample};
use crate::registry::ToolCategory;

/// Two training examples and whether they share a class (1.0) or not (0.0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub anchor_index: usize,
    pub other_index: usize,
    pub label: f64,
}

impl ContrastivePair {
    pub fn is_positive(&self) -> bool {
        self.label == 1.0
    }
}

/// Per-class example indices, keyed in registry order.
pub(crate) fn class_index(examples: &[LabeledExample]) -> BTreeMap<ToolCategory, Vec<usize>> {
    let mut by_class: BTreeMap<ToolCategory, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        by_class.entry(ex.tool).or_default().push(i);
    }
    by_class
}

pub(crate) fn check_class_data(
    by_class: &BTreeMap<ToolCategory, Vec<usize>>,
) -> Result<(), ClassifierError> {
    if by_class.len() < 2 {
        return Err(ClassifierError::InsufficientClassData(format!(
            "need at least 2 classes, found {}",
            by_class.len()
        )));
    }
    if let Some((tool, idx)) = by_class.iter().find(|(_, idx)| idx.len() < 2) {
        return Err(ClassifierError::InsufficientClassData(format!(
            "class `{tool}` has {} example(s), need at least 2",
            idx.len()
        )));
    }
    Ok(())
}

/// SetFit-style pair sampling.
///
/// Each of `iterations` rounds visits every example once and emits one
/// positive pair (uniform same-class partner, never itself) followed by one
/// negative pair (uniform partner from any other class). Output length is
/// always `2 * iterations * examples.len()`.
pub fn generate_pairs(
    examples: &[LabeledExample],
    iterations: usize,
    seed: u64,
) -> Result<Vec<ContrastivePair>, ClassifierError> {
    let by_class = class_index(examples);
    check_class_data(&by_class)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = examples.len();
    let mut pairs = Vec::with_capacity(2 * iterations * n);
    for _ in 0..iterations {
        for (i, ex) in examples.iter().enumerate() {
            let same = &by_class[&ex.tool];
            // Draw from the class minus `i` by skipping over its slot.
            let own_pos = same.iter().position(|&j| j == i).expect("example indexed");
            let mut pick = rng.gen_range(0..same.len() - 1);
            if pick >= own_pos {
                pick += 1;
            }
            pairs.push(ContrastivePair { anchor_index: i, other_index: same[pick], label: 1.0 });

            let k = rng.gen_range(0..n - same.len());
            // Map the k-th out-of-class example back to a global index.
            let other_index = examples
                .iter()
                .enumerate()
                .filter(|(_, e)| e.tool != ex.tool)
                .nth(k)
                .map(|(j, _)| j)
                .expect("k < out-of-class count");
            pairs.push(ContrastivePair { anchor_index: i, other_index, label: 0.0 });
        }
    }
    Ok(pairs)
}

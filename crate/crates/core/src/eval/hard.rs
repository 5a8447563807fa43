//! The low-severity, answer-preserving subset drawn from questions no
//! sampled chain ever solved.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::release::CanonicalRecord;
use crate::verify::AnswerChanged;

pub const DEFAULT_HARD_SIZE: usize = 700;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardSubset {
    pub records: Vec<CanonicalRecord>,
    pub requested: usize,
    /// Records meeting every filter, before truncation.
    pub qualifying: usize,
}

impl HardSubset {
    pub fn shortfall(&self) -> Option<usize> {
        (self.qualifying < self.requested).then(|| self.requested - self.qualifying)
    }
}

/// No step position is claimed by two different codes.
pub fn has_step_overlap(r: &CanonicalRecord) -> bool {
    let mut seen = BTreeSet::new();
    r.error_step_indices.values().any(|idx| {
        idx.iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .any(|i| !seen.insert(*i))
    })
}

pub fn qualifies(r: &CanonicalRecord) -> bool {
    !has_step_overlap(r) && r.pass_rate == Some(0.0) && r.answer_changed == AnswerChanged::False
}

/// Qualifying records by ascending severity, ties by instance then variant
/// id, truncated to `size`.
pub fn build_hard_subset(records: &[CanonicalRecord], size: usize) -> HardSubset {
    let mut pool: Vec<&CanonicalRecord> = records.iter().filter(|r| qualifies(r)).collect();
    pool.sort_by(|a, b| {
        a.severity_score
            .total_cmp(&b.severity_score)
            .then_with(|| a.instance_id.cmp(&b.instance_id))
            .then_with(|| a.variant_id.cmp(&b.variant_id))
    });
    let qualifying = pool.len();
    if qualifying < size {
        tracing::warn!(qualifying, requested = size, "hard subset short of requested size");
    }
    HardSubset {
        records: pool.into_iter().take(size).cloned().collect(),
        requested: size,
        qualifying,
    }
}

//! Reconciles claimed error positions with the actual text change, and
//! applies the automatic quality filters.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{answer_matches, extract_answer, QuestionRecord};
use crate::diff::{char_ratio, OpKind, Opcode, SequenceMatcher};
use crate::error::{ForgeError, Result};
use crate::inject::{SeverityConfig, Variant};
use crate::providers::prompts::{self, numbered, options_block};
use crate::providers::{ProviderRegistry, TaskKind};
use crate::taxonomy::ErrorCode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub tf_threshold: f64,
    pub obviousness_threshold: f64,
    pub reduced_weight: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            tf_threshold: 0.10,
            obviousness_threshold: 0.8,
            reduced_weight: 0.3,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tf_threshold", self.tf_threshold),
            ("obviousness_threshold", self.obviousness_threshold),
            ("reduced_weight", self.reduced_weight),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ForgeError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Trimmed, with internal whitespace runs collapsed to one space.
pub fn normalize_step(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn align_steps(original: &[String], corrupted: &[String]) -> Vec<Opcode> {
    let a: Vec<String> = original.iter().map(|s| normalize_step(s)).collect();
    let b: Vec<String> = corrupted.iter().map(|s| normalize_step(s)).collect();
    SequenceMatcher::new(&a, &b).opcodes()
}

/// 1-based corrupted positions that differ from the original. A pure
/// deletion marks the step that follows it, clamped to the last step.
pub fn changed_positions(opcodes: &[Opcode], corrupted_len: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for op in opcodes {
        match op.kind {
            OpKind::Equal => {}
            OpKind::Replace | OpKind::Insert => out.extend(op.corrupted_range.clone().map(|j| j + 1)),
            OpKind::Delete => {
                if corrupted_len > 0 {
                    out.insert((op.corrupted_range.start + 1).min(corrupted_len));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconciled {
    pub verified: BTreeSet<usize>,
    pub false_positives: BTreeSet<usize>,
    pub unreported: BTreeSet<usize>,
}

/// `None` means the chain did not change and the variant is discarded.
pub fn reconcile_error_indices(
    reported: &BTreeSet<usize>,
    opcodes: &[Opcode],
    corrupted_len: usize,
) -> Option<Reconciled> {
    let actual = changed_positions(opcodes, corrupted_len);
    if actual.is_empty() {
        return None;
    }
    Some(Reconciled {
        false_positives: reported.difference(&actual).copied().collect(),
        unreported: actual.difference(reported).copied().collect(),
        verified: actual,
    })
}

/// Splits the verified positions over the variant's codes: each keeps its
/// confirmed claims, and every unclaimed position goes to the code with the
/// nearest claim (ties to the smaller position, then taxonomy order). A
/// single-code variant simply takes all positions. `None` if a code ends
/// up with nothing.
pub fn assign_positions(
    claims: &BTreeMap<ErrorCode, BTreeSet<usize>>,
    verified: &BTreeSet<usize>,
) -> Option<BTreeMap<ErrorCode, BTreeSet<usize>>> {
    if claims.len() == 1 {
        let code = *claims.keys().next()?;
        return Some(BTreeMap::from([(code, verified.clone())]));
    }
    let mut out: BTreeMap<ErrorCode, BTreeSet<usize>> = claims
        .iter()
        .map(|(c, s)| (*c, s.intersection(verified).copied().collect()))
        .collect();
    let anchors: Vec<(usize, ErrorCode)> = out.iter().flat_map(|(c, s)| s.iter().map(|i| (*i, *c))).collect();
    let claimed: BTreeSet<usize> = anchors.iter().map(|(i, _)| *i).collect();
    for &p in verified.difference(&claimed) {
        let nearest = anchors
            .iter()
            .min_by_key(|(i, c)| (i.abs_diff(p), *i, *c))
            .map(|(_, c)| *c);
        match nearest {
            Some(c) => {
                out.get_mut(&c).expect("anchor codes are keys").insert(p);
            }
            None => return None,
        }
    }
    out.values().all(|s| !s.is_empty()).then_some(out)
}

/// Character ratio over both chains joined with newlines. The matcher's
/// tie-breaking depends on argument order, so the texts are matched in
/// lexicographic order to keep the score symmetric.
pub fn text_fidelity(original: &[String], corrupted: &[String]) -> f64 {
    let (a, b) = (original.join("\n"), corrupted.join("\n"));
    if a <= b {
        char_ratio(&a, &b)
    } else {
        char_ratio(&b, &a)
    }
}

/// How visible the corruption is: coverage plus earliness.
pub fn obviousness(positions: &BTreeSet<usize>, chain_len: usize) -> f64 {
    let Some(&first) = positions.first() else {
        return 0.0;
    };
    if chain_len == 0 {
        return 0.0;
    }
    let len = chain_len as f64;
    let coverage = (positions.len() as f64 / len).min(1.0);
    let earliness = 1.0 - (first as f64 / len).min(1.0);
    0.7 * coverage + 0.3 * earliness
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerChanged {
    True,
    False,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    NoTextualChange,
    LowFidelity,
    UnassignablePositions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub text_fidelity: f64,
    pub obviousness: f64,
    pub answer_changed: AnswerChanged,
    pub sample_weight: f64,
    pub discarded: bool,
    pub discard_reason: Option<DiscardReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub variant_id: String,
    pub reported: BTreeSet<usize>,
    pub verified: BTreeSet<usize>,
    pub false_positives: BTreeSet<usize>,
    pub unreported: BTreeSet<usize>,
    pub quality: QualityReport,
}

/// Diff verification and the provider-free filters. On success the
/// variant carries verified indices, its severity is recomputed, and its
/// sample weight reflects obviousness. Answer impact is left `Unknown`.
pub fn diff_verify(
    original: &[String],
    variant: &Variant,
    cfg: &VerifyConfig,
    severity: &SeverityConfig,
) -> (Option<Variant>, VerificationReport) {
    let reported = variant.error_positions();
    let opcodes = align_steps(original, &variant.corrupted_steps);
    let fidelity = text_fidelity(original, &variant.corrupted_steps);
    let mut report = VerificationReport {
        variant_id: variant.variant_id.clone(),
        reported: reported.clone(),
        verified: BTreeSet::new(),
        false_positives: BTreeSet::new(),
        unreported: BTreeSet::new(),
        quality: QualityReport {
            text_fidelity: fidelity,
            obviousness: 0.0,
            answer_changed: AnswerChanged::Unknown,
            sample_weight: variant.sample_weight,
            discarded: true,
            discard_reason: None,
        },
    };
    let Some(rec) = reconcile_error_indices(&reported, &opcodes, variant.corrupted_steps.len()) else {
        report.quality.discard_reason = Some(DiscardReason::NoTextualChange);
        return (None, report);
    };
    report.verified = rec.verified.clone();
    report.false_positives = rec.false_positives;
    report.unreported = rec.unreported;
    let len = variant.corrupted_steps.len();
    report.quality.obviousness = obviousness(&rec.verified, len);
    if fidelity < cfg.tf_threshold {
        report.quality.discard_reason = Some(DiscardReason::LowFidelity);
        return (None, report);
    }
    let Some(assigned) = assign_positions(&variant.error_step_indices, &rec.verified) else {
        report.quality.discard_reason = Some(DiscardReason::UnassignablePositions);
        return (None, report);
    };
    let mut out = variant.clone();
    out.error_step_indices = assigned;
    out.rescore(severity);
    if report.quality.obviousness > cfg.obviousness_threshold {
        out.sample_weight = cfg.reduced_weight;
    }
    report.quality.sample_weight = out.sample_weight;
    report.quality.discarded = false;
    (Some(out), report)
}

/// Asks a provider which answer the corrupted chain reaches and compares
/// it with the gold answer. Unreadable replies give `Unknown`.
pub fn answer_impact(
    record: &QuestionRecord,
    corrupted: &[String],
    registry: &ProviderRegistry,
    provider: &str,
) -> Result<AnswerChanged> {
    let req = prompts::asset("answer_extract")?
        .request(
            TaskKind::AnswerImpact,
            &[
                ("question", &record.question),
                ("options", &options_block(&record.options_tuples())),
                ("steps", &numbered(corrupted)),
            ],
        )
        .payload(json!({
            "gold_answer": record.gold_answer,
            "option_labels": record.option_labels(),
        }));
    let reply = registry.chat(provider, &req)?;
    let answer = reply
        .structured
        .as_ref()
        .and_then(|v| v.get("answer"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .or_else(|| extract_answer(&reply.text))
        .filter(|a| !a.trim().is_empty());
    Ok(match answer {
        None => AnswerChanged::Unknown,
        Some(a) if answer_matches(&a, record) => AnswerChanged::False,
        Some(_) => AnswerChanged::True,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn kinds(ops: &[Opcode]) -> Vec<(OpKind, usize, usize, usize, usize)> {
        ops.iter()
            .map(|o| {
                (
                    o.kind,
                    o.original_range.start,
                    o.original_range.end,
                    o.corrupted_range.start,
                    o.corrupted_range.end,
                )
            })
            .collect()
    }

    #[test]
    fn alignment_examples() {
        let ops = align_steps(&v(&["a", "b", "c"]), &v(&["a", "X", "c"]));
        assert_eq!(
            kinds(&ops),
            vec![
                (OpKind::Equal, 0, 1, 0, 1),
                (OpKind::Replace, 1, 2, 1, 2),
                (OpKind::Equal, 2, 3, 2, 3)
            ]
        );
        let ops = align_steps(&v(&["a", "b", "c"]), &v(&["a", "b", "new", "c"]));
        assert_eq!(changed_positions(&ops, 4), BTreeSet::from([3]));
        let ops = align_steps(&v(&["a", "b"]), &v(&["a  ", " b"]));
        assert_eq!(kinds(&ops), vec![(OpKind::Equal, 0, 2, 0, 2)]);
    }

    #[test]
    fn reconciliation_examples() {
        let orig = v(&["a", "b", "c"]);
        let ops = align_steps(&orig, &v(&["a", "B", "c"]));
        let r = reconcile_error_indices(&BTreeSet::from([1, 2]), &ops, 3).unwrap();
        assert_eq!(r.verified, BTreeSet::from([2]));
        assert_eq!(r.false_positives, BTreeSet::from([1]));

        let orig4 = v(&["a", "b", "c", "d"]);
        let ops = align_steps(&orig4, &v(&["a", "b", "c", "new", "d"]));
        let r = reconcile_error_indices(&BTreeSet::new(), &ops, 5).unwrap();
        assert_eq!(
            (r.verified.clone(), r.unreported),
            (BTreeSet::from([4]), BTreeSet::from([4]))
        );

        let ops = align_steps(&orig, &orig);
        assert!(reconcile_error_indices(&BTreeSet::from([1]), &ops, 3).is_none());
    }

    #[test]
    fn deletion_marks_following_step() {
        let ops = align_steps(&v(&["a", "b", "c"]), &v(&["a", "c"]));
        assert_eq!(changed_positions(&ops, 2), BTreeSet::from([2]));
        // trailing deletion clamps to the last step
        let ops = align_steps(&v(&["a", "b", "c"]), &v(&["a", "b"]));
        assert_eq!(changed_positions(&ops, 2), BTreeSet::from([2]));
    }

    #[test]
    fn fidelity_examples() {
        assert_eq!(text_fidelity(&v(&["abc"]), &v(&["abc"])), 1.0);
        assert_eq!(text_fidelity(&v(&["abc"]), &v(&["xyz"])), 0.0);
        assert!((text_fidelity(&v(&["abcd"]), &v(&["abXd"])) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn obviousness_examples() {
        assert!((obviousness(&BTreeSet::from([10]), 10) - 0.07).abs() < 1e-12);
        let all: BTreeSet<usize> = (1..=10).collect();
        assert!(obviousness(&all, 10) > 0.8);
    }

    #[test]
    fn nearest_claim_takes_unclaimed_positions() {
        let claims = BTreeMap::from([
            (ErrorCode::S1, BTreeSet::from([2])),
            (ErrorCode::R1, BTreeSet::from([6, 9])),
        ]);
        let got = assign_positions(&claims, &BTreeSet::from([2, 3, 5, 6])).unwrap();
        assert_eq!(got[&ErrorCode::S1], BTreeSet::from([2, 3]));
        assert_eq!(got[&ErrorCode::R1], BTreeSet::from([5, 6]));
        let lost = BTreeMap::from([
            (ErrorCode::S1, BTreeSet::from([2])),
            (ErrorCode::R1, BTreeSet::from([9])),
        ]);
        assert!(assign_positions(&lost, &BTreeSet::from([2, 3])).is_none());
    }

    proptest::proptest! {
        #[test]
        fn alignment_partitions_and_reconcile_is_idempotent(
            a in proptest::collection::vec("[a-e]", 1..10),
            b in proptest::collection::vec("[a-e]", 1..10),
        ) {
            let ops = align_steps(&a, &b);
            let (mut i, mut j) = (0, 0);
            for op in &ops {
                proptest::prop_assert_eq!(op.original_range.start, i);
                proptest::prop_assert_eq!(op.corrupted_range.start, j);
                i = op.original_range.end;
                j = op.corrupted_range.end;
            }
            proptest::prop_assert_eq!((i, j), (a.len(), b.len()));
            if let Some(r) = reconcile_error_indices(&BTreeSet::new(), &ops, b.len()) {
                let again = reconcile_error_indices(&r.verified, &ops, b.len()).unwrap();
                proptest::prop_assert_eq!(&again.verified, &r.verified);
                proptest::prop_assert!(again.false_positives.is_empty() && again.unreported.is_empty());
            }
            let f = text_fidelity(&a, &b);
            proptest::prop_assert!((f - text_fidelity(&b, &a)).abs() < 1e-12);
        }
    }
}

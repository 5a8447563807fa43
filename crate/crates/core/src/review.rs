//! Expert review: annotation import, three-model votes, revision, and the
//! expert/model consensus filter.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ForgeError, Result};
use crate::inject::{SeverityConfig, Variant};
use crate::io::read_jsonl_lenient;
use crate::providers::prompts::{self, numbered};
use crate::providers::{ProviderRegistry, TaskKind};
use crate::taxonomy::ErrorCode;
use crate::verify::{align_steps, changed_positions};

/// One expert's judgment of a variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub variant_id: String,
    pub reasoning_correct: bool,
    /// 1-based indices into the original chain.
    #[serde(default)]
    pub expert_error_steps: BTreeSet<usize>,
    #[serde(default)]
    pub corrected_steps: BTreeMap<usize, String>,
    /// Replacement error mapping; absent when the expert accepts the current one.
    #[serde(default)]
    pub mapping_corrections: Option<BTreeMap<ErrorCode, BTreeSet<usize>>>,
    #[serde(default)]
    pub rationale: String,
    pub annotation_complete: bool,
}

impl ReviewRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.variant_id.trim().is_empty() {
            return Err("empty variant_id".into());
        }
        if !self.reasoning_correct && self.expert_error_steps.is_empty() {
            return Err("reasoning marked incorrect without flagged steps".into());
        }
        if self.expert_error_steps.contains(&0) || self.corrected_steps.contains_key(&0) {
            return Err("step indices are 1-based".into());
        }
        if let Some(m) = &self.mapping_corrections {
            if m.is_empty() || m.values().any(|s| s.is_empty() || s.contains(&0)) {
                return Err("mapping corrections need non-empty 1-based index sets".into());
            }
        }
        Ok(())
    }

    pub fn needs_revision(&self, dim: Dimension) -> bool {
        match dim {
            Dimension::Reason => !self.reasoning_correct,
            Dimension::Annot => self.mapping_corrections.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportRejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    /// Valid records, complete or not.
    pub records: Vec<ReviewRecord>,
    pub rejections: Vec<ImportRejection>,
    pub incomplete: usize,
}

impl ImportReport {
    /// Records that take part in voting.
    pub fn complete(&self) -> impl Iterator<Item = &ReviewRecord> {
        self.records.iter().filter(|r| r.annotation_complete)
    }
}

/// Reads annotations, rejecting malformed lines, unknown or repeated
/// variant ids, and records that violate the schema invariants.
pub fn import_annotations(path: &Path, known: &BTreeSet<String>) -> Result<ImportReport> {
    let (ok, bad) = read_jsonl_lenient::<ReviewRecord>(path)?;
    let mut report = ImportReport {
        rejections: bad
            .into_iter()
            .map(|e| ImportRejection {
                line: e.line,
                reason: e.message,
            })
            .collect(),
        ..Default::default()
    };
    let mut seen = BTreeSet::new();
    for (line, rec) in ok {
        let problem = if !known.contains(&rec.variant_id) {
            Some(format!("unknown variant_id '{}'", rec.variant_id))
        } else if !seen.insert(rec.variant_id.clone()) {
            Some(format!("duplicate annotation for '{}'", rec.variant_id))
        } else {
            rec.validate().err()
        };
        match problem {
            Some(reason) => report.rejections.push(ImportRejection { line, reason }),
            None => {
                if !rec.annotation_complete {
                    report.incomplete += 1;
                }
                report.records.push(rec);
            }
        }
    }
    report.rejections.sort_by_key(|r| r.line);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Reason,
    Annot,
}

/// Three distinct provider ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoterPanel(pub [String; 3]);

impl VoterPanel {
    pub fn new(a: &str, b: &str, c: &str) -> Result<Self> {
        let p = VoterPanel([a.to_string(), b.to_string(), c.to_string()]);
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let set: BTreeSet<&String> = self.0.iter().collect();
        if set.len() != 3 {
            return Err(ForgeError::Config(
                "a voter panel needs three distinct providers".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub voter: String,
    pub approve: bool,
    /// The reply could not be read and counts as a rejection.
    #[serde(default)]
    pub parse_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteResult {
    pub dimension: Dimension,
    /// Empty when the expert found nothing to revise and the judgment is
    /// adopted as is.
    pub votes: Vec<Vote>,
    pub adopted: bool,
}

impl VoteResult {
    pub fn direct(dimension: Dimension) -> Self {
        VoteResult {
            dimension,
            votes: Vec::new(),
            adopted: true,
        }
    }

    pub fn is_direct(&self) -> bool {
        self.votes.is_empty()
    }
}

/// Strict majority of three.
pub fn adopted(votes: &[bool]) -> bool {
    votes.iter().filter(|v| **v).count() >= 2
}

/// What voters see besides the expert record.
#[derive(Debug, Clone, Copy)]
pub struct VoteContext<'a> {
    pub question: &'a str,
    pub original_steps: &'a [String],
    pub variant: &'a Variant,
}

fn mapping_text(m: &BTreeMap<ErrorCode, BTreeSet<usize>>) -> String {
    m.iter()
        .map(|(c, s)| format!("{c}: {:?}", s.iter().collect::<Vec<_>>()))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Runs the panel on one dimension, or adopts directly when the expert
/// proposes no revision there.
pub fn vote(
    record: &ReviewRecord,
    dimension: Dimension,
    ctx: &VoteContext<'_>,
    panel: &VoterPanel,
    registry: &ProviderRegistry,
) -> Result<VoteResult> {
    if !record.annotation_complete {
        return Err(ForgeError::invalid(format!(
            "{}: incomplete annotations are not voted on",
            record.variant_id
        )));
    }
    if !record.needs_revision(dimension) {
        return Ok(VoteResult::direct(dimension));
    }
    let req = match dimension {
        Dimension::Reason => {
            let corrections = record
                .corrected_steps
                .iter()
                .map(|(i, t)| format!("{i}. {t}"))
                .collect::<Vec<_>>()
                .join("\n");
            let flagged = record
                .expert_error_steps
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", ");
            prompts::asset("vote_reason")?.request(
                TaskKind::VoteReason,
                &[
                    ("question", ctx.question),
                    ("steps", &numbered(ctx.original_steps)),
                    ("flagged", &flagged),
                    ("corrections", &corrections),
                    ("rationale", &record.rationale),
                ],
            )
        }
        Dimension::Annot => prompts::asset("vote_annot")?.request(
            TaskKind::VoteAnnotation,
            &[
                ("question", ctx.question),
                ("steps", &numbered(&ctx.variant.corrupted_steps)),
                ("current", &mapping_text(&ctx.variant.error_step_indices)),
                (
                    "proposed",
                    &mapping_text(record.mapping_corrections.as_ref().expect("needs revision")),
                ),
                ("rationale", &record.rationale),
            ],
        ),
    }
    .payload(json!({ "variant_id": record.variant_id }));
    let mut votes = Vec::with_capacity(3);
    for voter in &panel.0 {
        let reply = registry.chat(voter, &req)?;
        let approve = reply
            .structured
            .as_ref()
            .and_then(|v| v.get("approve"))
            .and_then(Value::as_bool);
        votes.push(Vote {
            voter: voter.clone(),
            approve: approve.unwrap_or(false),
            parse_failed: approve.is_none(),
        });
    }
    let flags: Vec<bool> = votes.iter().map(|v| v.approve).collect();
    Ok(VoteResult {
        dimension,
        adopted: adopted(&flags),
        votes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionOutcome {
    pub original_steps: Vec<String>,
    pub variant: Variant,
    /// Corrupted positions that differ from the (possibly revised) original.
    pub modified_steps: BTreeSet<usize>,
    /// An adopted revision could not be applied.
    pub deferred: bool,
}

/// Applies adopted revisions in order: rewrite the original chain, replace
/// the error mapping, then recompute the differing positions. The
/// corrupted chain is never edited.
pub fn apply_revisions(
    original_steps: &[String],
    variant: &Variant,
    record: &ReviewRecord,
    reason: &VoteResult,
    annot: &VoteResult,
    question: &str,
    registry: &ProviderRegistry,
    provider: &str,
    severity: &SeverityConfig,
) -> Result<RevisionOutcome> {
    let mut steps = original_steps.to_vec();
    let mut out_variant = variant.clone();
    let mut deferred = false;

    if reason.adopted && record.needs_revision(Dimension::Reason) && !record.corrected_steps.is_empty() {
        let corrections: BTreeMap<String, &String> =
            record.corrected_steps.iter().map(|(i, t)| (i.to_string(), t)).collect();
        let listing = record
            .corrected_steps
            .iter()
            .map(|(i, t)| format!("{i}. {t}"))
            .collect::<Vec<_>>()
            .join("\n");
        let req = prompts::asset("rewrite")?
            .request(
                TaskKind::Rewrite,
                &[
                    ("question", question),
                    ("steps", &numbered(&steps)),
                    ("corrections", &listing),
                ],
            )
            .payload(json!({ "steps": steps, "corrections": corrections }));
        let reply = registry.chat(provider, &req)?;
        let rewritten: Option<Vec<String>> = reply
            .structured
            .as_ref()
            .and_then(|v| v.get("steps"))
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(|s| s.as_str().map(str::to_string)).collect())
            .filter(|s: &Vec<String>| !s.is_empty());
        match rewritten {
            Some(s) => steps = s,
            None => deferred = true,
        }
    }

    if annot.adopted {
        if let Some(mapping) = &record.mapping_corrections {
            let len = out_variant.corrupted_steps.len();
            if mapping.values().flatten().all(|i| (1..=len).contains(i)) {
                out_variant.error_step_indices = mapping.clone();
                out_variant.error_codes = mapping.keys().copied().collect();
                out_variant.is_composite = out_variant.error_codes.len() > 1;
                out_variant.rescore(severity);
            } else {
                deferred = true;
            }
        }
    }

    let modified_steps = changed_positions(
        &align_steps(&steps, &out_variant.corrupted_steps),
        out_variant.corrupted_steps.len(),
    );
    Ok(RevisionOutcome {
        original_steps: steps,
        variant: out_variant,
        modified_steps,
        deferred,
    })
}

/// Outcome of review for one variant, as stored between CLI stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub variant_id: String,
    pub annotated: bool,
    pub annotation_complete: bool,
    pub reason: Option<VoteResult>,
    pub annot: Option<VoteResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NotAnnotated,
    Incomplete,
    NotVoted,
    ReasonConflict,
    AnnotConflict,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub retained: BTreeSet<String>,
    pub dropped: Vec<(String, DropReason)>,
}

/// Keeps a variant only when it was fully annotated and the panel agreed
/// with the expert on both dimensions.
pub fn consensus_filter(decisions: &[ReviewDecision]) -> ConsensusOutcome {
    let mut out = ConsensusOutcome::default();
    for d in decisions {
        let drop = if !d.annotated {
            Some(DropReason::NotAnnotated)
        } else if !d.annotation_complete {
            Some(DropReason::Incomplete)
        } else {
            match (&d.reason, &d.annot) {
                (Some(r), Some(a)) => {
                    if !r.adopted {
                        Some(DropReason::ReasonConflict)
                    } else if !a.adopted {
                        Some(DropReason::AnnotConflict)
                    } else {
                        None
                    }
                }
                _ => Some(DropReason::NotVoted),
            }
        };
        match drop {
            Some(r) => out.dropped.push((d.variant_id.clone(), r)),
            None => {
                out.retained.insert(d.variant_id.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blueprint::SafetyLevel;
    use crate::inject::TargetProfile;
    use crate::providers::mock::ScriptedProvider;
    use std::sync::Arc;

    fn record(correct: bool, mapping: Option<BTreeMap<ErrorCode, BTreeSet<usize>>>) -> ReviewRecord {
        ReviewRecord {
            variant_id: "q::v1".into(),
            reasoning_correct: correct,
            expert_error_steps: if correct { BTreeSet::new() } else { BTreeSet::from([2]) },
            corrected_steps: if correct {
                BTreeMap::new()
            } else {
                BTreeMap::from([(2, "fixed".to_string())])
            },
            mapping_corrections: mapping,
            rationale: String::new(),
            annotation_complete: true,
        }
    }

    fn variant() -> Variant {
        Variant {
            variant_id: "q::v1".into(),
            parent_instance_id: "q".into(),
            corrupted_steps: vec!["a".into(), "B".into(), "c".into()],
            error_codes: BTreeSet::from([ErrorCode::R1]),
            error_step_indices: BTreeMap::from([(ErrorCode::R1, BTreeSet::from([2]))]),
            severity_score: 0.5,
            severity_level: SafetyLevel::Major,
            is_composite: false,
            producer: "m".into(),
            sample_weight: 1.0,
            targets: vec![2],
            target_profile: TargetProfile {
                safety_level: SafetyLevel::Major,
                bnc: None,
            },
            fallback_target: false,
            error_description: String::new(),
            reason: String::new(),
        }
    }

    #[test]
    fn majority_truth_table() {
        for mask in 0u8..8 {
            let v: Vec<bool> = (0..3).map(|i| mask & (1 << i) != 0).collect();
            assert_eq!(adopted(&v), mask.count_ones() >= 2, "{v:?}");
        }
    }

    #[test]
    fn confirmation_is_adopted_without_vote() {
        let reg = ProviderRegistry::new();
        let panel = VoterPanel::new("a", "b", "c").unwrap();
        let orig: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let v = variant();
        let ctx = VoteContext {
            question: "q",
            original_steps: &orig,
            variant: &v,
        };
        let r = vote(&record(true, None), Dimension::Reason, &ctx, &panel, &reg).unwrap();
        assert!(r.adopted && r.is_direct());
    }

    #[test]
    fn unreadable_vote_counts_against() {
        let reg = ProviderRegistry::new()
            .with(Arc::new(ScriptedProvider::replying("a", [r#"{"approve": true}"#])))
            .with(Arc::new(ScriptedProvider::replying("b", ["yes I think so"])))
            .with(Arc::new(ScriptedProvider::replying("c", [r#"{"approve": false}"#])));
        let panel = VoterPanel::new("a", "b", "c").unwrap();
        let orig: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let v = variant();
        let ctx = VoteContext {
            question: "q",
            original_steps: &orig,
            variant: &v,
        };
        let r = vote(&record(false, None), Dimension::Reason, &ctx, &panel, &reg).unwrap();
        assert!(!r.adopted);
        assert!(r.votes[1].parse_failed);
        assert!(VoterPanel::new("a", "a", "c").is_err());
    }

    #[test]
    fn no_adoption_leaves_everything_unchanged() {
        let orig: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let v = variant();
        let rec = record(false, Some(BTreeMap::from([(ErrorCode::R3, BTreeSet::from([2]))])));
        let no = |d| VoteResult {
            dimension: d,
            votes: vec![],
            adopted: false,
        };
        let out = apply_revisions(
            &orig,
            &v,
            &rec,
            &no(Dimension::Reason),
            &no(Dimension::Annot),
            "q",
            &ProviderRegistry::new(),
            "x",
            &SeverityConfig::default(),
        )
        .unwrap();
        assert_eq!(out.original_steps, orig);
        assert_eq!(
            serde_json::to_string(&out.variant).unwrap(),
            serde_json::to_string(&v).unwrap()
        );
        assert_eq!(out.modified_steps, BTreeSet::from([2]));
    }

    #[test]
    fn adopted_revisions_apply_in_order() {
        let orig: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let v = variant();
        let rec = record(false, Some(BTreeMap::from([(ErrorCode::R3, BTreeSet::from([2]))])));
        let reg = ProviderRegistry::new().with(Arc::new(ScriptedProvider::replying(
            "w",
            [r#"{"steps": ["a", "b2", "c"]}"#],
        )));
        let yes = |d| VoteResult {
            dimension: d,
            votes: vec![],
            adopted: true,
        };
        let out = apply_revisions(
            &orig,
            &v,
            &rec,
            &yes(Dimension::Reason),
            &yes(Dimension::Annot),
            "q",
            &reg,
            "w",
            &SeverityConfig::default(),
        )
        .unwrap();
        assert_eq!(out.variant.corrupted_steps, v.corrupted_steps);
        assert_eq!(out.original_steps[1], "b2");
        assert_eq!(out.variant.error_codes, BTreeSet::from([ErrorCode::R3]));
        assert_eq!(
            out.modified_steps,
            changed_positions(&align_steps(&out.original_steps, &v.corrupted_steps), 3)
        );
    }

    #[test]
    fn consensus_rules() {
        let dec = |id: &str, annotated, complete, r: Option<bool>, a: Option<bool>| ReviewDecision {
            variant_id: id.into(),
            annotated,
            annotation_complete: complete,
            reason: r.map(|x| VoteResult {
                dimension: Dimension::Reason,
                votes: vec![],
                adopted: x,
            }),
            annot: a.map(|x| VoteResult {
                dimension: Dimension::Annot,
                votes: vec![],
                adopted: x,
            }),
        };
        let all = vec![
            dec("keep", true, true, Some(true), Some(true)),
            dec("conflict", true, true, Some(false), Some(true)),
            dec("none", false, false, None, None),
            dec("partial", true, false, None, None),
        ];
        let out = consensus_filter(&all);
        assert_eq!(out.retained, BTreeSet::from(["keep".to_string()]));
        assert_eq!(out.dropped.len(), 3);
        let again: Vec<_> = all
            .iter()
            .filter(|d| out.retained.contains(&d.variant_id))
            .cloned()
            .collect();
        assert_eq!(consensus_filter(&again).retained, out.retained);
    }

    #[test]
    fn import_checks_ids_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ann.jsonl");
        let lines = [
            r#"{"variant_id": "q::v1", "reasoning_correct": true, "annotation_complete": true}"#,
            r#"{"variant_id": "q::v2", "reasoning_correct": false, "expert_error_steps": [2], "corrected_steps": {"2": "x"}, "annotation_complete": true}"#,
            r#"{"variant_id": "q::v3", "reasoning_correct": true, "annotation_complete": false}"#,
            r#"{"variant_id": "nope", "reasoning_correct": true, "annotation_complete": true}"#,
            r#"{"variant_id": "q::v1", "reasoning_correct": false, "annotation_complete": true}"#,
            "not json",
        ];
        std::fs::write(&p, lines.join("\n")).unwrap();
        let known: BTreeSet<String> = ["q::v1", "q::v2", "q::v3"].map(String::from).into();
        let rep = import_annotations(&p, &known).unwrap();
        assert_eq!(rep.records.len(), 3);
        assert_eq!(rep.incomplete, 1);
        assert_eq!(rep.complete().count(), 2);
        assert_eq!(rep.rejections.iter().map(|r| r.line).collect::<Vec<_>>(), vec![4, 5, 6]);
    }
}

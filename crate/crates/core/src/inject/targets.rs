//! Where in the chain each error type is planted.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::blueprint::{SafetyLevel, StepAnnotation};
use crate::error::{ForgeError, Result};
use crate::providers::embed::tokens;
use crate::providers::SimilarityCache;
use crate::taxonomy::{ErrorCode, TargetFamily};

/// 1-based step indices. For structural types an index `p` is an insertion
/// point: new material goes after step `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSelection {
    pub targets: Vec<usize>,
    /// No step met the family's criterion.
    pub fallback: bool,
}

/// Steps shorter than this are not treated as declarative claims.
const MIN_CLAIM_TOKENS: usize = 4;

fn bnc_at(bnc: Option<&[f64]>, i: usize) -> f64 {
    bnc.and_then(|b| b.get(i)).copied().unwrap_or(0.0)
}

fn safety_rank(ann: &[StepAnnotation], i: usize) -> usize {
    // lower is more critical; unannotated steps rank last
    ann.get(i).map_or(SafetyLevel::ALL.len(), |a| a.safety_level as usize)
}

/// Best index under `cmp` (smaller is better), ties to the lowest index.
fn best_by(candidates: impl Iterator<Item = usize>, cmp: impl Fn(usize, usize) -> Ordering) -> Option<usize> {
    candidates.fold(None, |best, i| match best {
        Some(b) if cmp(i, b) != Ordering::Less => Some(b),
        _ => Some(i),
    })
}

fn desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

fn fallback(n: usize, bnc: Option<&[f64]>) -> TargetSelection {
    let i = best_by(0..n, |a, b| desc(bnc_at(bnc, a), bnc_at(bnc, b))).unwrap_or(0);
    TargetSelection {
        targets: vec![i + 1],
        fallback: true,
    }
}

/// Chooses target steps by the code's family. Higher step criticality
/// (when a blueprint exists) is preferred first in every family except
/// consistency, where relatedness of the pair comes first.
pub fn select_targets(
    code: ErrorCode,
    steps: &[String],
    annotations: &[StepAnnotation],
    bnc: Option<&[f64]>,
    sim: &SimilarityCache,
) -> Result<TargetSelection> {
    let n = steps.len();
    if n == 0 {
        return Err(ForgeError::invalid("cannot target an empty chain"));
    }
    let by_bnc = |a: usize, b: usize| desc(bnc_at(bnc, a), bnc_at(bnc, b));
    let pick = match code.family() {
        TargetFamily::Safety => {
            let eligible = (0..n).filter(|&i| {
                annotations.get(i).is_some_and(|a| {
                    matches!(a.safety_level, SafetyLevel::Critical | SafetyLevel::Major) || a.is_prerequisite_of_next
                })
            });
            best_by(eligible, |a, b| {
                by_bnc(a, b).then(safety_rank(annotations, a).cmp(&safety_rank(annotations, b)))
            })
            .map(|i| vec![i + 1])
        }
        TargetFamily::Consistency => {
            let mut best: Option<(f64, f64, usize, usize)> = None;
            for i in 0..n {
                for j in i + 1..n {
                    let s = sim.sim(&steps[i], &steps[j])?;
                    let b = bnc_at(bnc, i) + bnc_at(bnc, j);
                    let better = best.is_none_or(|(bs, bb, _, _)| s > bs || (s == bs && b > bb));
                    if better {
                        best = Some((s, b, i, j));
                    }
                }
            }
            best.map(|(_, _, i, j)| vec![i + 1, j + 1])
        }
        TargetFamily::Knowledge => {
            let len = |i: usize| tokens(&steps[i]).len();
            let eligible = (0..n).filter(|&i| len(i) >= MIN_CLAIM_TOKENS);
            best_by(eligible, |a, b| by_bnc(a, b).then(len(b).cmp(&len(a)))).map(|i| vec![i + 1])
        }
        TargetFamily::Structural => {
            // insert before the concluding step
            let eligible = 0..n.saturating_sub(1);
            best_by(eligible, by_bnc).map(|i| vec![i + 1])
        }
        TargetFamily::General => {
            // keep the concluding step intact when there is a choice
            let last = if n > 1 { n - 1 } else { n };
            best_by(0..last, |a, b| {
                by_bnc(a, b).then(safety_rank(annotations, a).cmp(&safety_rank(annotations, b)))
            })
            .map(|i| vec![i + 1])
        }
    };
    Ok(match pick {
        Some(targets) => TargetSelection {
            targets,
            fallback: false,
        },
        None => fallback(n, bnc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use SafetyLevel::*;

    fn ann(levels: &[(SafetyLevel, bool)]) -> Vec<StepAnnotation> {
        levels
            .iter()
            .enumerate()
            .map(|(i, &(l, p))| StepAnnotation {
                step_index: i + 1,
                safety_level: l,
                is_prerequisite_of_next: p,
            })
            .collect()
    }

    fn steps(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("step number {i} states a finding")).collect()
    }

    #[test]
    fn safety_picks_critical_step() {
        let sim = SimilarityCache::token_set();
        let a = ann(&[(Minor, false), (Critical, false), (Minor, false)]);
        let t = select_targets(ErrorCode::R5, &steps(3), &a, None, &sim).unwrap();
        assert_eq!(
            t,
            TargetSelection {
                targets: vec![2],
                fallback: false
            }
        );
    }

    #[test]
    fn safety_accepts_prerequisite() {
        let sim = SimilarityCache::token_set();
        let a = ann(&[(Minor, false), (Moderate, false), (Minor, true)]);
        let t = select_targets(ErrorCode::E1, &steps(3), &a, None, &sim).unwrap();
        assert_eq!(t.targets, vec![3]);
    }

    #[test]
    fn safety_falls_back_to_max_bnc() {
        let sim = SimilarityCache::token_set();
        let a = ann(&[(Minor, false), (Moderate, false), (Minor, false)]);
        let bnc = [0.1, 0.2, 0.9];
        let t = select_targets(ErrorCode::R5, &steps(3), &a, Some(&bnc), &sim).unwrap();
        assert_eq!(
            t,
            TargetSelection {
                targets: vec![3],
                fallback: true
            }
        );
        let t = select_targets(ErrorCode::R5, &steps(3), &a, None, &sim).unwrap();
        assert_eq!(
            t,
            TargetSelection {
                targets: vec![1],
                fallback: true
            }
        );
    }

    #[test]
    fn consistency_picks_most_related_pair() {
        let sim = SimilarityCache::token_set();
        let s: Vec<String> = ["fever and cough", "renal function is low", "cough with fever noted"]
            .map(String::from)
            .into();
        let t = select_targets(ErrorCode::R2, &s, &[], None, &sim).unwrap();
        assert_eq!(t.targets, vec![1, 3]);
    }

    #[test]
    fn knowledge_prefers_longest_claim() {
        let sim = SimilarityCache::token_set();
        let s: Vec<String> = [
            "short one",
            "this is a much longer declarative claim",
            "a medium length claim here",
        ]
        .map(String::from)
        .into();
        let t = select_targets(ErrorCode::R1, &s, &[], None, &sim).unwrap();
        assert_eq!(t.targets, vec![2]);
    }

    #[test]
    fn structural_inserts_before_conclusion() {
        let sim = SimilarityCache::token_set();
        let bnc = [0.1, 0.5, 0.3, 0.99];
        let t = select_targets(ErrorCode::S1, &steps(4), &[], Some(&bnc), &sim).unwrap();
        assert_eq!(t.targets, vec![2]);
        let t = select_targets(ErrorCode::S1, &steps(1), &[], None, &sim).unwrap();
        assert!(t.fallback);
    }
}

//! Test-time answer selection over sampled trajectories.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

pub const DEFAULT_N: usize = 64;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_TOP_P: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: String,
    pub trajectory_index: usize,
    /// `None` when no answer could be parsed.
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default)]
    pub step_scores: Vec<f64>,
}

impl Trajectory {
    /// The weakest step decides.
    pub fn score(&self) -> Option<f64> {
        self.step_scores.iter().copied().reduce(f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Cot,
    Sc,
    Bon,
    ScRm,
}

impl FromStr for Strategy {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cot" => Ok(Strategy::Cot),
            "sc" => Ok(Strategy::Sc),
            "bon" => Ok(Strategy::Bon),
            "sc_rm" => Ok(Strategy::ScRm),
            other => Err(ForgeError::invalid(format!("unknown strategy {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    /// Chosen answer; `cot` leaves it empty and lists every answer instead.
    pub answer: Option<String>,
    pub trajectory_index: Option<usize>,
    pub answers: Vec<String>,
    /// Fraction of considered answers that are correct (needs gold).
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifierReport {
    pub strategy: Strategy,
    pub n: usize,
    pub selections: BTreeMap<String, Selection>,
    /// Questions with no parseable answer among their first `n` trajectories.
    pub unanswered: Vec<String>,
    /// Mean over all questions with gold answers; unanswered ones score 0.
    pub accuracy: Option<f64>,
}

fn majority(answers: &[&str]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in answers {
        *counts.entry(a).or_default() += 1;
    }
    // BTreeMap iterates labels ascending, so the first maximum is the smallest
    let mut best: Option<(&str, usize)> = None;
    for (a, c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((a, c));
        }
    }
    best.map(|(a, _)| a.to_string())
}

fn select(strategy: Strategy, trs: &[&Trajectory]) -> Result<Selection> {
    let answered: Vec<&Trajectory> = trs.iter().copied().filter(|t| t.answer.is_some()).collect();
    let label = |t: &Trajectory| t.answer.clone().expect("filtered");
    let scored = |t: &Trajectory| {
        t.score().ok_or_else(|| {
            ForgeError::invalid(format!(
                "{} trajectory {} has no step scores",
                t.question_id, t.trajectory_index
            ))
        })
    };
    let mut sel = Selection {
        answer: None,
        trajectory_index: None,
        answers: answered.iter().map(|t| label(t)).collect(),
        accuracy: None,
    };
    match strategy {
        Strategy::Cot => {}
        Strategy::Sc => {
            let labels: Vec<&str> = answered
                .iter()
                .map(|t| t.answer.as_deref().expect("filtered"))
                .collect();
            sel.answer = majority(&labels);
        }
        Strategy::Bon => {
            let mut best: Option<(f64, &Trajectory)> = None;
            for t in &answered {
                let s = scored(t)?;
                if best.is_none_or(|(b, bt)| s > b || (s == b && t.trajectory_index < bt.trajectory_index)) {
                    best = Some((s, t));
                }
            }
            if let Some((_, t)) = best {
                sel.answer = Some(label(t));
                sel.trajectory_index = Some(t.trajectory_index);
            }
        }
        Strategy::ScRm => {
            let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for t in &answered {
                let s = scored(t)?;
                let g = groups.entry(label(t)).or_insert((f64::NEG_INFINITY, 0));
                g.0 = g.0.max(s);
                g.1 += 1;
            }
            let mut best: Option<(&String, f64, usize)> = None;
            for (a, &(s, size)) in &groups {
                if best.is_none_or(|(_, bs, bn)| s > bs || (s == bs && size > bn)) {
                    best = Some((a, s, size));
                }
            }
            sel.answer = best.map(|(a, _, _)| a.clone());
        }
    }
    Ok(sel)
}

/// Applies `strategy` to the first `n` trajectories (by index) of every
/// question. With `gold`, accuracy is reported per question and overall.
pub fn run_verifier(
    strategy: Strategy,
    trajectories: &[Trajectory],
    n: usize,
    gold: Option<&BTreeMap<String, String>>,
) -> Result<VerifierReport> {
    if n == 0 {
        return Err(ForgeError::invalid("n must be at least 1"));
    }
    let mut by_q: BTreeMap<&str, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajectories {
        by_q.entry(&t.question_id).or_default().push(t);
    }
    let mut report = VerifierReport {
        strategy,
        n,
        selections: BTreeMap::new(),
        unanswered: Vec::new(),
        accuracy: None,
    };
    let mut total = 0.0;
    let mut graded = 0usize;
    for (q, mut trs) in by_q {
        trs.sort_by_key(|t| t.trajectory_index);
        trs.truncate(n);
        let mut sel = select(strategy, &trs)?;
        let empty = sel.answers.is_empty();
        if empty {
            report.unanswered.push(q.to_string());
        }
        if let Some(g) = gold.and_then(|m| m.get(q)) {
            let acc = if empty {
                0.0
            } else if strategy == Strategy::Cot {
                sel.answers.iter().filter(|a| *a == g).count() as f64 / sel.answers.len() as f64
            } else {
                f64::from(u8::from(sel.answer.as_ref() == Some(g)))
            };
            sel.accuracy = Some(acc);
            total += acc;
            graded += 1;
        }
        report.selections.insert(q.to_string(), sel);
    }
    report.accuracy = (graded > 0).then(|| total / graded as f64);
    Ok(report)
}

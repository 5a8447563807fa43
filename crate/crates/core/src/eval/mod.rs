//! Scoring step-level verifiers against the released dataset.

pub mod hard;
pub mod metrics;
pub mod verifier;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ForgeError, Result};
use crate::providers::prompts::{self, numbered};
use crate::providers::{extract_json, ChatRequest, TaskKind};
use crate::release::CanonicalRecord;
use crate::taxonomy::ErrorCode;

pub use hard::{build_hard_subset, HardSubset};
pub use metrics::{compute_metrics, per_error_type_breakdown, Confusion, MetricsReport, Population};
pub use verifier::{run_verifier, Strategy, Trajectory, VerifierReport};

/// A chain with ground-truth step labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalChain {
    pub chain_id: String,
    /// `true` marks an erroneous step.
    pub erroneous: Vec<bool>,
    pub codes: BTreeSet<ErrorCode>,
}

impl EvalChain {
    pub fn has_error(&self) -> bool {
        self.erroneous.iter().any(|e| *e)
    }

    /// 0-based index of the earliest erroneous step.
    pub fn first_error(&self) -> Option<usize> {
        self.erroneous.iter().position(|e| *e)
    }
}

/// Chains of the dataset: every variant, and optionally each question's
/// original chain once (id `{instance_id}::original`, no errors).
pub fn eval_chains(records: &[CanonicalRecord], include_original: bool) -> Vec<EvalChain> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for r in records {
        let pos = r.error_positions();
        out.push(EvalChain {
            chain_id: r.variant_id.clone(),
            erroneous: (1..=r.corrupted_steps.len()).map(|i| pos.contains(&i)).collect(),
            codes: r.error_codes.iter().copied().collect(),
        });
        if include_original && seen.insert(r.instance_id.clone()) {
            out.push(EvalChain {
                chain_id: format!("{}::original", r.instance_id),
                erroneous: vec![false; r.original_steps.len()],
                codes: BTreeSet::new(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Probability,
    Generative,
}

/// Per-step verdicts for one chain; `true` means predicted erroneous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPrediction {
    pub chain_id: String,
    pub protocol: Protocol,
    pub predicted_erroneous: Vec<bool>,
}

/// Probability of "+" at or above this counts as a correct step.
pub const PLUS_THRESHOLD: f64 = 0.5;

fn is_symbol(c: char) -> Option<bool> {
    match c {
        '+' => Some(false),
        '-' | '\u{2212}' | '\u{2013}' => Some(true),
        _ => None,
    }
}

fn validity_array(v: &Value, n: usize) -> Option<Vec<bool>> {
    let arr = v.get("validity").unwrap_or(v).as_array()?;
    if arr.len() != n {
        return None;
    }
    arr.iter().map(|x| x.as_f64().map(|f| f < PLUS_THRESHOLD)).collect()
}

/// Reads `n` step verdicts from a transcript: a `{"validity": [..]}` array
/// (values at or above 0.5 are valid), else the first run of exactly `n`
/// `+`/`-` symbols separated only by whitespace or commas.
pub fn parse_generative(text: &str, n: usize) -> Option<Vec<bool>> {
    if n == 0 {
        return None;
    }
    if let Some(v) = extract_json(text) {
        if let Some(p) = validity_array(&v, n) {
            return Some(p);
        }
    }
    let mut run: Vec<bool> = Vec::new();
    let mut runs: Vec<Vec<bool>> = Vec::new();
    for c in text.chars() {
        if let Some(s) = is_symbol(c) {
            run.push(s);
        } else if !(c.is_whitespace() || c == ',') && !run.is_empty() {
            runs.push(std::mem::take(&mut run));
        }
    }
    if !run.is_empty() {
        runs.push(run);
    }
    runs.into_iter().find(|r| r.len() == n)
}

/// One probability row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRow {
    pub chain_id: String,
    /// 1-based.
    pub step_index: usize,
    pub p_plus: f64,
}

/// Binarized predictions for every chain whose rows cover all of its steps
/// exactly once; the remaining chain ids are returned as unscored.
pub fn score_probability_rows(
    rows: &[ProbabilityRow],
    chains: &[EvalChain],
) -> Result<(Vec<StepPrediction>, Vec<String>)> {
    let mut by_chain: BTreeMap<&str, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in rows {
        if !(0.0..=1.0).contains(&r.p_plus) {
            return Err(ForgeError::invalid(format!(
                "{} step {}: probability {} outside [0, 1]",
                r.chain_id, r.step_index, r.p_plus
            )));
        }
        by_chain.entry(&r.chain_id).or_default().insert(r.step_index, r.p_plus);
    }
    let mut preds = Vec::new();
    let mut unscored = Vec::new();
    for c in chains {
        let n = c.erroneous.len();
        let steps = by_chain.get(c.chain_id.as_str());
        let complete = steps.is_some_and(|s| s.len() == n && (1..=n).all(|i| s.contains_key(&i)));
        if complete {
            let s = steps.expect("checked");
            preds.push(StepPrediction {
                chain_id: c.chain_id.clone(),
                protocol: Protocol::Probability,
                predicted_erroneous: (1..=n).map(|i| s[&i] < PLUS_THRESHOLD).collect(),
            });
        } else {
            unscored.push(c.chain_id.clone());
        }
    }
    Ok((preds, unscored))
}

/// A generative transcript for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub chain_id: String,
    pub response: String,
}

pub fn score_transcripts(transcripts: &[Transcript], chains: &[EvalChain]) -> (Vec<StepPrediction>, Vec<String>) {
    let by_id: BTreeMap<&str, &str> = transcripts
        .iter()
        .map(|t| (t.chain_id.as_str(), t.response.as_str()))
        .collect();
    let mut preds = Vec::new();
    let mut unscored = Vec::new();
    for c in chains {
        match by_id
            .get(c.chain_id.as_str())
            .and_then(|t| parse_generative(t, c.erroneous.len()))
        {
            Some(p) => preds.push(StepPrediction {
                chain_id: c.chain_id.clone(),
                protocol: Protocol::Generative,
                predicted_erroneous: p,
            }),
            None => unscored.push(c.chain_id.clone()),
        }
    }
    (preds, unscored)
}

/// Grading request for one chain. The enhanced form lists each step's
/// safety level and prerequisite flag.
pub fn eval_request(record: &CanonicalRecord, steps: &[String], enhanced: bool) -> Result<ChatRequest> {
    let n = steps.len().to_string();
    let req = if enhanced {
        let listed = steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let ann = record.step_annotations.get(i);
                let level = ann.map_or("unknown", |a| a.safety_level.as_str());
                let prereq = ann.is_some_and(|a| a.is_prerequisite_of_next);
                format!(
                    "{}. {s} [safety_level={level}; is_prerequisite_of_next={prereq}]",
                    i + 1
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        prompts::asset("eval_enhanced")?.request(
            TaskKind::Evaluate,
            &[("question", &record.question), ("steps", &listed), ("n", &n)],
        )
    } else {
        prompts::asset("eval_basic")?.request(
            TaskKind::Evaluate,
            &[("question", &record.question), ("steps", &numbered(steps)), ("n", &n)],
        )
    };
    Ok(req.structured(enhanced).payload(json!({ "step_count": steps.len() })))
}

//! Step- and case-level metrics. The erroneous step is the positive class.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalChain, StepPrediction};
use crate::error::{ForgeError, Result};
use crate::taxonomy::ErrorCode;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    /// Steps of chains that contain at least one error.
    #[default]
    Erroneous,
    All,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    /// `truth` and `pred` are `true` for erroneous.
    pub fn add(&mut self, truth: bool, pred: bool) {
        match (truth, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn f1(tp: u64, fp: u64, fn_: u64) -> Option<f64> {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub population: Population,
    pub steps: Confusion,
    pub f1: f64,
    pub f1_neg: f64,
    /// Set when the F1 denominator was zero and the score counted as 0.
    pub f1_undefined: bool,
    pub f1_neg_undefined: bool,
    pub prm_score: f64,
    /// Recall on erroneous steps.
    pub acc: Option<f64>,
    pub first: Option<f64>,
    /// Accuracy on correct steps.
    pub acc_pos: Option<f64>,
    /// Accuracy on erroneous steps.
    pub acc_neg: Option<f64>,
    pub bias_gap: Option<f64>,
    pub chains: Confusion,
    pub case_accuracy: Option<f64>,
    pub case_f1: Option<f64>,
    /// Erroneous chains counted toward `first`, and how many were hit.
    pub first_total: u64,
    pub first_hits: u64,
    /// Population chains without a prediction.
    pub unscored: u64,
}

impl MetricsReport {
    /// Every derived figure is a function of the counts alone.
    pub fn from_counts(
        population: Population,
        steps: Confusion,
        chains: Confusion,
        first_hits: u64,
        first_total: u64,
        unscored: u64,
    ) -> Self {
        let pos = f1(steps.tp, steps.fp, steps.fn_);
        let neg = f1(steps.tn, steps.fn_, steps.fp);
        let f1v = pos.unwrap_or(0.0);
        let f1n = neg.unwrap_or(0.0);
        let acc_neg = ratio(steps.tp, steps.tp + steps.fn_);
        let acc_pos = ratio(steps.tn, steps.tn + steps.fp);
        MetricsReport {
            population,
            steps,
            f1: f1v,
            f1_neg: f1n,
            f1_undefined: pos.is_none(),
            f1_neg_undefined: neg.is_none(),
            prm_score: 0.5 * f1n + 0.5 * f1v,
            acc: acc_neg,
            first: ratio(first_hits, first_total),
            acc_pos,
            acc_neg,
            bias_gap: acc_pos.zip(acc_neg).map(|(p, n)| p - n),
            chains,
            case_accuracy: ratio(chains.tp + chains.tn, chains.total()),
            case_f1: f1(chains.tp, chains.fp, chains.fn_),
            first_total,
            first_hits,
            unscored,
        }
    }
}

fn metrics_over<'a>(
    population: Population,
    chains: impl Iterator<Item = &'a EvalChain>,
    preds: &BTreeMap<&str, &StepPrediction>,
) -> Result<MetricsReport> {
    let mut steps = Confusion::default();
    let mut cases = Confusion::default();
    let (mut first_hits, mut first_total, mut unscored, mut seen) = (0u64, 0u64, 0u64, 0u64);
    for c in chains {
        let Some(p) = preds.get(c.chain_id.as_str()) else {
            unscored += 1;
            continue;
        };
        if p.predicted_erroneous.len() != c.erroneous.len() {
            return Err(ForgeError::LengthMismatch {
                what: "prediction steps",
                left: p.predicted_erroneous.len(),
                right: c.erroneous.len(),
            });
        }
        seen += 1;
        let flagged = p.predicted_erroneous.iter().any(|e| *e);
        cases.add(c.has_error(), flagged);
        if population == Population::Erroneous && !c.has_error() {
            continue;
        }
        for (t, q) in c.erroneous.iter().zip(&p.predicted_erroneous) {
            steps.add(*t, *q);
        }
        if let Some(i) = c.first_error() {
            first_total += 1;
            first_hits += u64::from(p.predicted_erroneous[i]);
        }
    }
    if seen == 0 || (steps.total() == 0 && population == Population::Erroneous) {
        return Err(ForgeError::EmptyPopulation);
    }
    Ok(MetricsReport::from_counts(
        population,
        steps,
        cases,
        first_hits,
        first_total,
        unscored,
    ))
}

fn index(predictions: &[StepPrediction]) -> BTreeMap<&str, &StepPrediction> {
    predictions.iter().map(|p| (p.chain_id.as_str(), p)).collect()
}

/// Step metrics over the chosen population; case metrics over every
/// scored chain.
pub fn compute_metrics(
    predictions: &[StepPrediction],
    chains: &[EvalChain],
    population: Population,
) -> Result<MetricsReport> {
    metrics_over(population, chains.iter(), &index(predictions))
}

/// One report per code over erroneous chains carrying that code. A chain
/// with several codes counts in each of their buckets.
pub fn per_error_type_breakdown(
    predictions: &[StepPrediction],
    chains: &[EvalChain],
) -> Result<BTreeMap<ErrorCode, MetricsReport>> {
    let preds = index(predictions);
    let mut out = BTreeMap::new();
    for code in crate::taxonomy::ALL_CODES {
        let bucket = chains.iter().filter(|c| c.has_error() && c.codes.contains(&code));
        match metrics_over(Population::Erroneous, bucket, &preds) {
            Ok(r) => {
                out.insert(code, r);
            }
            Err(ForgeError::EmptyPopulation) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

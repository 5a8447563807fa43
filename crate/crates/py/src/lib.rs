//! Python bindings for the provider-free parts of forge: the error
//! taxonomy, diff verification, severity levels, step-level metrics, and
//! answer selection over sampled trajectories.
//!
//! Structured results come back as plain dicts and lists.

use std::collections::BTreeMap;

use forge_core::diff::char_ratio;
use forge_core::eval::{
    compute_metrics, parse_generative, run_verifier, EvalChain, Population, Protocol, StepPrediction, Strategy,
    Trajectory,
};
use forge_core::inject::severity::discretize;
use forge_core::taxonomy::ALL_CODES;
use forge_core::verify::{align_steps, changed_positions};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn invalid(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serialized through JSON so every result is a built-in Python value.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(invalid)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Parses a string through the type's serde name, e.g. `"Critical"`.
fn from_name<T: DeserializeOwned>(name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| invalid(format!("unknown value '{name}'")))
}

/// The fourteen error types with category, name, and weight.
#[pyfunction]
fn taxonomy(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    let rows: Vec<_> = ALL_CODES.iter().map(|c| c.info()).collect();
    to_py(py, &rows)
}

/// 1-based positions in `corrupted` that differ from `original` after
/// whitespace normalization.
#[pyfunction]
fn changed_steps(original: Vec<String>, corrupted: Vec<String>) -> Vec<usize> {
    changed_positions(&align_steps(&original, &corrupted), corrupted.len())
        .into_iter()
        .collect()
}

/// Character-level similarity ratio in [0, 1].
#[pyfunction]
fn similarity(a: &str, b: &str) -> f64 {
    char_ratio(a, b)
}

/// Discrete severity from the affected fraction and target safety level.
#[pyfunction]
fn severity_level(fraction: f64, safety: &str) -> PyResult<String> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(invalid("fraction must lie in [0, 1]"));
    }
    Ok(discretize(fraction, from_name(safety)?).as_str().to_string())
}

/// Parses a `+`/`-` judgment of exactly `n` steps; `None` if absent.
#[pyfunction]
fn parse_judgment(text: &str, n: usize) -> Option<Vec<bool>> {
    parse_generative(text, n)
}

/// Step and case metrics. `labels[i][j]` and `predictions[i][j]` are
/// `True` when step `j` of chain `i` is (predicted) erroneous.
#[pyfunction]
#[pyo3(signature = (labels, predictions, population = "erroneous"))]
fn step_metrics<'py>(
    py: Python<'py>,
    labels: Vec<Vec<bool>>,
    predictions: Vec<Vec<bool>>,
    population: &str,
) -> PyResult<Bound<'py, PyAny>> {
    if labels.len() != predictions.len() {
        return Err(invalid("labels and predictions differ in chain count"));
    }
    let chains: Vec<EvalChain> = labels
        .into_iter()
        .enumerate()
        .map(|(i, erroneous)| EvalChain {
            chain_id: i.to_string(),
            erroneous,
            codes: Default::default(),
        })
        .collect();
    let preds: Vec<StepPrediction> = predictions
        .into_iter()
        .enumerate()
        .map(|(i, predicted_erroneous)| StepPrediction {
            chain_id: i.to_string(),
            protocol: Protocol::Generative,
            predicted_erroneous,
        })
        .collect();
    let report = compute_metrics(&preds, &chains, from_name::<Population>(population)?).map_err(invalid)?;
    to_py(py, &report)
}

/// Answer selection. Each trajectory is `(question_id, index, answer or
/// None, step_scores)`; `gold` maps question ids to answers.
#[pyfunction]
#[pyo3(signature = (strategy, trajectories, n, gold = None))]
fn select_answers<'py>(
    py: Python<'py>,
    strategy: &str,
    trajectories: Vec<(String, usize, Option<String>, Vec<f64>)>,
    n: usize,
    gold: Option<BTreeMap<String, String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let strategy: Strategy = strategy.parse().map_err(invalid)?;
    let trajectories: Vec<Trajectory> = trajectories
        .into_iter()
        .map(|(question_id, trajectory_index, answer, step_scores)| Trajectory {
            question_id,
            trajectory_index,
            answer,
            step_scores,
        })
        .collect();
    let report = run_verifier(strategy, &trajectories, n, gold.as_ref()).map_err(invalid)?;
    to_py(py, &report)
}

#[pymodule]
fn stepforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(taxonomy, m)?)?;
    m.add_function(wrap_pyfunction!(changed_steps, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(severity_level, m)?)?;
    m.add_function(wrap_pyfunction!(parse_judgment, m)?)?;
    m.add_function(wrap_pyfunction!(step_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(select_answers, m)?)?;
    Ok(())
}

//! Demand-driven choice of error types per instance.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::taxonomy::{ErrorCode, ALL_CODES};

/// Per-type variant counts of the reference release, in taxonomy order.
/// The default target distribution is these counts, normalized.
const REFERENCE_COUNTS: [f64; 14] = [
    3149.0, 1964.0, 8287.0, 2972.0, 2242.0, 2205.0, 2906.0, 5288.0, 2622.0, 2117.0, 2058.0, 1479.0, 1760.0, 3765.0,
];

/// Demand floor. Every over-supplied code is still drawn in proportion to
/// the floor, which leaves a steady-state gap to the target that grows
/// with it; at 1e-4 the gap stays well under 0.02 in L1.
pub const DEFAULT_EPSILON: f64 = 1e-4;

pub fn default_target() -> [f64; 14] {
    let total: f64 = REFERENCE_COUNTS.iter().sum();
    REFERENCE_COUNTS.map(|c| c / total)
}

/// Parses a `{code: weight}` map into a normalized target. Every code must
/// be present, weights must be finite and non-negative with a positive sum.
pub fn target_from_map(map: &BTreeMap<String, f64>) -> Result<[f64; 14]> {
    let mut out = [0.0; 14];
    let mut seen = [false; 14];
    for (k, &w) in map {
        let code: ErrorCode = k
            .parse()
            .map_err(|_| ForgeError::Config(format!("unknown error code '{k}' in target")))?;
        if !w.is_finite() || w < 0.0 {
            return Err(ForgeError::Config(format!(
                "target weight for {k} must be finite and >= 0"
            )));
        }
        out[code.index()] = w;
        seen[code.index()] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(ForgeError::Config(format!("target is missing {}", ALL_CODES[i])));
    }
    let total: f64 = out.iter().sum();
    if total <= 0.0 {
        return Err(ForgeError::Config("target weights sum to zero".into()));
    }
    Ok(out.map(|w| w / total))
}

/// Target distribution, running empirical distribution, and demand floor.
///
/// The empirical share of a code is its count over all codes drawn so far;
/// before any draw every share is zero, so demand equals the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingState {
    target: [f64; 14],
    counts: [u64; 14],
    epsilon: f64,
}

impl Default for SamplingState {
    fn default() -> Self {
        SamplingState::new(default_target(), DEFAULT_EPSILON).expect("default target is valid")
    }
}

impl SamplingState {
    pub fn new(target: [f64; 14], epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(ForgeError::Config("sampling floor must be positive".into()));
        }
        let total: f64 = target.iter().sum();
        if target.iter().any(|w| !w.is_finite() || *w < 0.0) || (total - 1.0).abs() > 1e-6 {
            return Err(ForgeError::Config(
                "target distribution must be non-negative and sum to 1".into(),
            ));
        }
        Ok(SamplingState {
            target,
            counts: [0; 14],
            epsilon,
        })
    }

    /// Starts from a given empirical distribution, as if `total` codes had
    /// been drawn in those proportions.
    pub fn with_empirical(mut self, empirical: [f64; 14], total: u64) -> Self {
        self.counts = empirical.map(|p| (p * total as f64).round() as u64);
        self
    }

    pub fn target(&self) -> &[f64; 14] {
        &self.target
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn drawn(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn empirical(&self) -> [f64; 14] {
        let total = self.drawn();
        if total == 0 {
            return [0.0; 14];
        }
        self.counts.map(|c| c as f64 / total as f64)
    }

    /// `target - empirical` per code; may be negative.
    pub fn demand(&self) -> [f64; 14] {
        let emp = self.empirical();
        std::array::from_fn(|i| self.target[i] - emp[i])
    }

    /// Draw weights: demand floored at epsilon, zero outside `applicable`.
    pub fn weights(&self, applicable: &[bool; 14]) -> [f64; 14] {
        let d = self.demand();
        std::array::from_fn(|i| if applicable[i] { d[i].max(self.epsilon) } else { 0.0 })
    }

    /// `count` distinct applicable codes, drawn sequentially with weights
    /// fixed at the start of the instance. Does not update the state.
    pub fn sample<R: Rng + ?Sized>(&self, applicable: &[bool; 14], count: usize, rng: &mut R) -> Vec<ErrorCode> {
        let mut w = self.weights(applicable);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                break;
            }
            let mut x = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, wi) in w.iter().enumerate() {
                if *wi <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if x < *wi {
                    break;
                }
                x -= wi;
            }
            let i = pick.expect("positive total has a positive weight");
            out.push(ALL_CODES[i]);
            w[i] = 0.0;
        }
        out
    }

    pub fn record(&mut self, codes: &[ErrorCode]) {
        for c in codes {
            self.counts[c.index()] += 1;
        }
    }

    /// Draws 1 to 3 codes (uniform, capped by the applicable count) and
    /// records them.
    pub fn sample_instance<R: Rng + ?Sized>(&mut self, applicable: &[bool; 14], rng: &mut R) -> Vec<ErrorCode> {
        let available = applicable.iter().filter(|a| **a).count();
        if available == 0 {
            return Vec::new();
        }
        let count = rng.random_range(1..=3usize).min(available);
        let codes = self.sample(applicable, count, rng);
        self.record(&codes);
        codes
    }
}

/// L1 distance between two distributions.
pub fn l1_distance(a: &[f64; 14], b: &[f64; 14]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

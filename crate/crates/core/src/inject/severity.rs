//! Severity score and level of a planted error.

use serde::{Deserialize, Serialize};

use crate::blueprint::SafetyLevel;
use crate::error::{ForgeError, Result};

/// Severity levels share the four safety grades.
pub type SeverityLevel = SafetyLevel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeverityConfig {
    pub fraction_weight: f64,
    pub safety_weight: f64,
    pub type_weight: f64,
    pub w_critical: f64,
    pub w_major: f64,
    pub w_moderate: f64,
    pub w_minor: f64,
}

impl Default for SeverityConfig {
    fn default() -> Self {
        SeverityConfig {
            fraction_weight: 0.35,
            safety_weight: 0.35,
            type_weight: 0.30,
            w_critical: 1.0,
            w_major: 0.7,
            w_moderate: 0.4,
            w_minor: 0.1,
        }
    }
}

impl SeverityConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.fraction_weight,
            self.safety_weight,
            self.type_weight,
            self.w_critical,
            self.w_major,
            self.w_moderate,
            self.w_minor,
        ];
        if all.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(ForgeError::Config("severity weights must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn safety_weight_of(&self, level: SafetyLevel) -> f64 {
        match level {
            SafetyLevel::Critical => self.w_critical,
            SafetyLevel::Major => self.w_major,
            SafetyLevel::Moderate => self.w_moderate,
            SafetyLevel::Minor => self.w_minor,
        }
    }
}

/// Share of corrupted steps that carry an error, capped at 1.
pub fn affected_fraction(error_steps: usize, chain_len: usize) -> f64 {
    if chain_len == 0 {
        return 0.0;
    }
    (error_steps as f64 / chain_len as f64).min(1.0)
}

/// Weighted sum of disruption, target criticality, and type weight.
pub fn severity_score(fraction: f64, safety_weight: f64, type_weight: f64, cfg: &SeverityConfig) -> f64 {
    cfg.fraction_weight * fraction + cfg.safety_weight * safety_weight + cfg.type_weight * type_weight
}

/// First matching rule from the most severe level down.
pub fn discretize(fraction: f64, safety: SafetyLevel) -> SeverityLevel {
    let high = matches!(safety, SafetyLevel::Critical | SafetyLevel::Major);
    if fraction >= 0.7 && high {
        SafetyLevel::Critical
    } else if fraction >= 0.4 || high {
        SafetyLevel::Major
    } else if fraction >= 0.2 || safety == SafetyLevel::Moderate {
        SafetyLevel::Moderate
    } else {
        SafetyLevel::Minor
    }
}

/// What severity needs to know about the targeted steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetProfile {
    /// Most critical annotated level among target steps.
    pub safety_level: SafetyLevel,
    /// Highest criticality score among target steps, when a blueprint exists.
    pub bnc: Option<f64>,
}

impl TargetProfile {
    pub fn safety_weight(&self, cfg: &SeverityConfig) -> f64 {
        let w = cfg.safety_weight_of(self.safety_level);
        self.bnc.map_or(w, |b| w.max(b))
    }

    pub fn merge(self, other: TargetProfile) -> TargetProfile {
        TargetProfile {
            safety_level: self.safety_level.min(other.safety_level),
            bnc: match (self.bnc, other.bnc) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
        }
    }
}

pub fn score_severity(
    error_steps: usize,
    chain_len: usize,
    target: &TargetProfile,
    type_weight: f64,
    cfg: &SeverityConfig,
) -> (f64, SeverityLevel) {
    let fraction = affected_fraction(error_steps, chain_len);
    let score = severity_score(fraction, target.safety_weight(cfg), type_weight, cfg);
    (score, discretize(fraction, target.safety_level))
}

//! The fourteen-type error taxonomy.
//!
//! Each code belongs to one of three categories and carries an inherent
//! severity weight used by severity scoring and composite ranking.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Simplicity,
    Soundness,
    Sensitivity,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Simplicity => "Simplicity",
            Category::Soundness => "Soundness",
            Category::Sensitivity => "Sensitivity",
        };
        f.write_str(s)
    }
}

/// Error type code. Ordering follows the taxonomy table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCode {
    #[serde(rename = "S-1")]
    S1,
    #[serde(rename = "S-2")]
    S2,
    #[serde(rename = "R-1")]
    R1,
    #[serde(rename = "R-2")]
    R2,
    #[serde(rename = "R-3")]
    R3,
    #[serde(rename = "R-4")]
    R4,
    #[serde(rename = "R-5")]
    R5,
    #[serde(rename = "R-6")]
    R6,
    #[serde(rename = "R-7")]
    R7,
    #[serde(rename = "E-1")]
    E1,
    #[serde(rename = "E-2")]
    E2,
    #[serde(rename = "E-3")]
    E3,
    #[serde(rename = "E-4")]
    E4,
    #[serde(rename = "E-5")]
    E5,
}

pub const ALL_CODES: [ErrorCode; 14] = [
    ErrorCode::S1,
    ErrorCode::S2,
    ErrorCode::R1,
    ErrorCode::R2,
    ErrorCode::R3,
    ErrorCode::R4,
    ErrorCode::R5,
    ErrorCode::R6,
    ErrorCode::R7,
    ErrorCode::E1,
    ErrorCode::E2,
    ErrorCode::E3,
    ErrorCode::E4,
    ErrorCode::E5,
];

/// One taxonomy row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorType {
    pub code: ErrorCode,
    pub category: Category,
    pub name: &'static str,
    pub abbreviation: &'static str,
    pub blueprint_operation: &'static str,
    pub w_type: f64,
    pub universal: bool,
}

const fn row(
    code: ErrorCode,
    category: Category,
    name: &'static str,
    abbreviation: &'static str,
    blueprint_operation: &'static str,
    w_type: f64,
    universal: bool,
) -> ErrorType {
    ErrorType {
        code,
        category,
        name,
        abbreviation,
        blueprint_operation,
        w_type,
        universal,
    }
}

pub static TAXONOMY: [ErrorType; 14] = [
    row(
        ErrorCode::S1,
        Category::Simplicity,
        "Non-Redundancy",
        "NR",
        "Insert redundant step",
        0.2,
        false,
    ),
    row(
        ErrorCode::S2,
        Category::Simplicity,
        "Non-Circular Logic",
        "NCL",
        "Inject circular argument",
        0.3,
        false,
    ),
    row(
        ErrorCode::R1,
        Category::Soundness,
        "Evidence-Based Soundness",
        "EBS",
        "Replace medical fact",
        0.8,
        true,
    ),
    row(
        ErrorCode::R2,
        Category::Soundness,
        "Step Consistency",
        "SC",
        "Introduce contradiction",
        0.6,
        false,
    ),
    row(
        ErrorCode::R3,
        Category::Soundness,
        "Contextual Applicability",
        "CA",
        "Ignore patient context",
        0.6,
        false,
    ),
    row(
        ErrorCode::R4,
        Category::Soundness,
        "Confidence Invariance",
        "CI",
        "Insert overconfident claim",
        0.7,
        false,
    ),
    row(
        ErrorCode::R5,
        Category::Soundness,
        "Safety Awareness",
        "SA",
        "Remove safety check",
        1.0,
        false,
    ),
    row(
        ErrorCode::R6,
        Category::Soundness,
        "Information Grounding Compliance",
        "IGC",
        "Fabricate entity",
        0.7,
        true,
    ),
    row(
        ErrorCode::R7,
        Category::Soundness,
        "Trajectory Reasoning",
        "TR",
        "Reverse causal/temporal order",
        0.6,
        false,
    ),
    row(
        ErrorCode::E1,
        Category::Sensitivity,
        "Prerequisite Sensitivity",
        "PS",
        "Delete prerequisite step",
        0.7,
        false,
    ),
    row(
        ErrorCode::E2,
        Category::Sensitivity,
        "Deception Resistance",
        "DR",
        "Insert distractor",
        0.5,
        true,
    ),
    row(
        ErrorCode::E3,
        Category::Sensitivity,
        "Multi-Solution Consistency",
        "MSC",
        "Dismiss alternatives",
        0.4,
        false,
    ),
    row(
        ErrorCode::E4,
        Category::Sensitivity,
        "Quantitative Correctness",
        "QC",
        "Alter numerical value",
        0.5,
        false,
    ),
    row(
        ErrorCode::E5,
        Category::Sensitivity,
        "Differential Diagnosis Coverage",
        "DDC",
        "Narrow differential",
        0.7,
        false,
    ),
];

/// How an error type manipulates the chain; drives target selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetFamily {
    Safety,
    Consistency,
    Knowledge,
    Structural,
    /// Types without a dedicated strategy (R-4, E-2..E-5).
    General,
}

impl ErrorCode {
    pub fn info(self) -> &'static ErrorType {
        &TAXONOMY[self.index()]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        ALL_CODES.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::S1 => "S-1",
            ErrorCode::S2 => "S-2",
            ErrorCode::R1 => "R-1",
            ErrorCode::R2 => "R-2",
            ErrorCode::R3 => "R-3",
            ErrorCode::R4 => "R-4",
            ErrorCode::R5 => "R-5",
            ErrorCode::R6 => "R-6",
            ErrorCode::R7 => "R-7",
            ErrorCode::E1 => "E-1",
            ErrorCode::E2 => "E-2",
            ErrorCode::E3 => "E-3",
            ErrorCode::E4 => "E-4",
            ErrorCode::E5 => "E-5",
        }
    }

    pub fn category(self) -> Category {
        self.info().category
    }

    pub fn w_type(self) -> f64 {
        self.info().w_type
    }

    pub fn is_universal(self) -> bool {
        self.info().universal
    }

    pub fn family(self) -> TargetFamily {
        use ErrorCode::*;
        match self {
            R5 | E1 => TargetFamily::Safety,
            R2 | R7 => TargetFamily::Consistency,
            R1 | R3 | R6 => TargetFamily::Knowledge,
            S1 | S2 => TargetFamily::Structural,
            R4 | E2 | E3 | E4 | E5 => TargetFamily::General,
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_uppercase();
        ALL_CODES
            .iter()
            .copied()
            .find(|c| c.as_str().replace('-', "") == norm)
            .ok_or_else(|| format!("unknown error code '{s}'"))
    }
}

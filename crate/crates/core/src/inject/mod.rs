//! Error planting: applicability, type sampling, targets, provider edits,
//! severity, and composites.

pub mod composite;
pub mod sampling;
pub mod severity;
pub mod targets;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::blueprint::StepAnnotation;
use crate::error::Result;
use crate::providers::prompts::{self, numbered};
use crate::providers::{ProviderPool, ProviderRegistry, SimilarityCache, TaskKind};
use crate::taxonomy::{ErrorCode, ALL_CODES, TAXONOMY};

pub use composite::{rank_combinations, synthesize_composite, CompositeConfig};
pub use sampling::SamplingState;
pub use severity::{score_severity, SeverityConfig, SeverityLevel, TargetProfile};
pub use targets::{select_targets, TargetSelection};

/// How an error type changes the chain's shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Insert,
    Delete,
    Replace,
}

impl EditKind {
    pub fn of(code: ErrorCode) -> Self {
        use ErrorCode::*;
        match code {
            S1 | S2 | R4 | E2 => EditKind::Insert,
            R5 | E1 => EditKind::Delete,
            _ => EditKind::Replace,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EditKind::Insert => "insert",
            EditKind::Delete => "delete",
            EditKind::Replace => "replace",
        }
    }
}

/// A corrupted chain with its claimed error positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub variant_id: String,
    pub parent_instance_id: String,
    pub corrupted_steps: Vec<String>,
    pub error_codes: BTreeSet<ErrorCode>,
    /// 1-based indices into `corrupted_steps`, per code.
    pub error_step_indices: BTreeMap<ErrorCode, BTreeSet<usize>>,
    pub severity_score: f64,
    pub severity_level: SeverityLevel,
    pub is_composite: bool,
    pub producer: String,
    pub sample_weight: f64,
    /// Original-chain targets handed to the producer.
    pub targets: Vec<usize>,
    pub target_profile: TargetProfile,
    #[serde(default)]
    pub fallback_target: bool,
    #[serde(default)]
    pub error_description: String,
    #[serde(default)]
    pub reason: String,
}

impl Variant {
    /// Distinct error positions over all codes.
    pub fn error_positions(&self) -> BTreeSet<usize> {
        self.error_step_indices.values().flatten().copied().collect()
    }

    /// Code whose type weight drives severity: the heaviest member.
    pub fn severity_code(&self) -> Option<ErrorCode> {
        self.error_codes
            .iter()
            .copied()
            .fold(None, |best: Option<ErrorCode>, c| match best {
                Some(b) if b.w_type() >= c.w_type() => Some(b),
                _ => Some(c),
            })
    }

    /// Recomputes severity from the current indices and chain length.
    pub fn rescore(&mut self, cfg: &SeverityConfig) {
        let w_type = self.severity_code().map_or(0.0, ErrorCode::w_type);
        let (score, level) = score_severity(
            self.error_positions().len(),
            self.corrupted_steps.len(),
            &self.target_profile,
            w_type,
            cfg,
        );
        self.severity_score = score;
        self.severity_level = level;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Applicability {
    pub applicable: [bool; 14],
    /// The judgment could not be read; only universal types are set.
    pub fallback: bool,
}

impl Applicability {
    pub fn universal_only() -> Self {
        Applicability {
            applicable: ALL_CODES.map(ErrorCode::is_universal),
            fallback: true,
        }
    }

    pub fn codes(&self) -> Vec<ErrorCode> {
        ALL_CODES.into_iter().filter(|c| self.applicable[c.index()]).collect()
    }
}

fn parse_bit(v: &Value) -> Option<bool> {
    v.as_bool().or_else(|| v.as_u64().filter(|x| *x <= 1).map(|x| x == 1))
}

/// Provider judges each type; universal types are always applicable.
pub fn tag_applicability(
    question: &str,
    steps: &[String],
    registry: &ProviderRegistry,
    provider: &str,
) -> Result<Applicability> {
    let types = TAXONOMY
        .iter()
        .map(|t| format!("{} {}: {}", t.code, t.name, t.blueprint_operation))
        .collect::<Vec<_>>()
        .join("\n");
    let req = prompts::asset("applicability")?
        .request(
            TaskKind::Applicability,
            &[("question", question), ("steps", &numbered(steps)), ("types", &types)],
        )
        .payload(json!({ "step_count": steps.len() }));
    let reply = registry.chat(provider, &req)?;
    let bits: Option<Vec<bool>> = reply
        .structured
        .as_ref()
        .and_then(|v| v.get("applicable"))
        .and_then(Value::as_array)
        .filter(|a| a.len() == 14)
        .and_then(|a| a.iter().map(parse_bit).collect());
    Ok(match bits {
        Some(bits) => Applicability {
            applicable: std::array::from_fn(|i| bits[i] || ALL_CODES[i].is_universal()),
            fallback: false,
        },
        None => Applicability::universal_only(),
    })
}

/// Everything about one instance that injection reads.
#[derive(Debug, Clone, Copy)]
pub struct InjectionContext<'a> {
    pub instance_id: &'a str,
    pub question: &'a str,
    pub steps: &'a [String],
    pub annotations: &'a [StepAnnotation],
    pub step_bnc: Option<&'a [f64]>,
}

impl InjectionContext<'_> {
    /// Severity inputs for a set of original-chain targets.
    pub fn profile(&self, targets: &[usize]) -> TargetProfile {
        let safety_level = targets
            .iter()
            .filter_map(|t| self.annotations.get(t.wrapping_sub(1)))
            .map(|a| a.safety_level)
            .min()
            .unwrap_or(SeverityLevel::Minor);
        let bnc = self.step_bnc.map(|b| {
            targets
                .iter()
                .filter_map(|t| b.get(t.wrapping_sub(1)))
                .copied()
                .fold(0.0, f64::max)
        });
        TargetProfile { safety_level, bnc }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectConfig {
    /// Extra attempts after an unreadable reply, same producer.
    pub parse_retries: u32,
    pub temperature: f64,
}

impl Default for InjectConfig {
    fn default() -> Self {
        InjectConfig {
            parse_retries: 1,
            temperature: 0.7,
        }
    }
}

/// Fields read from an injection reply.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedEdit {
    pub corrupted_steps: Vec<String>,
    pub reported: BTreeSet<usize>,
    pub description: String,
    pub reason: String,
}

fn index_list(v: Option<&Value>) -> Option<Vec<usize>> {
    v?.as_array()?.iter().map(|x| x.as_u64().map(|u| u as usize)).collect()
}

/// Reads an injection reply; `None` when the chain is missing or empty.
/// Reported indices outside the corrupted chain are dropped.
pub fn parse_injection(v: Option<&Value>) -> Option<ParsedEdit> {
    let v = v?;
    let corrupted_steps: Vec<String> = v
        .get("corrupted_steps")?
        .as_array()?
        .iter()
        .map(|s| s.as_str().map(|s| s.trim().to_string()))
        .collect::<Option<_>>()?;
    if corrupted_steps.is_empty() || corrupted_steps.iter().any(String::is_empty) {
        return None;
    }
    let reported = index_list(v.get("error_step_indices"))
        .or_else(|| index_list(v.get("modified_steps")))
        .unwrap_or_default()
        .into_iter()
        .filter(|i| (1..=corrupted_steps.len()).contains(i))
        .collect();
    let text = |k: &str| v.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
    Some(ParsedEdit {
        corrupted_steps,
        reported,
        description: text("error_description"),
        reason: text("reason"),
    })
}

fn target_text(code: ErrorCode, targets: &[usize]) -> String {
    let list = targets.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
    match EditKind::of(code) {
        EditKind::Insert => format!("insert new material after step {list}"),
        _ => list,
    }
}

/// Asks `provider` to plant `code` at `targets`. Unreadable replies are
/// retried with a fresh sample; `None` once the budget is spent.
pub fn inject_error(
    ctx: &InjectionContext<'_>,
    code: ErrorCode,
    selection: &TargetSelection,
    variant_id: String,
    provider: &str,
    registry: &ProviderRegistry,
    cfg: &InjectConfig,
    severity: &SeverityConfig,
) -> Result<Option<Variant>> {
    let info = code.info();
    let edit = EditKind::of(code);
    let base = prompts::asset("inject")?
        .request(
            TaskKind::Inject,
            &[
                ("code", code.as_str()),
                ("name", info.name),
                ("definition", prompts::definition(code)),
                ("operation", info.blueprint_operation),
                ("question", ctx.question),
                ("steps", &numbered(ctx.steps)),
                ("targets", &target_text(code, &selection.targets)),
            ],
        )
        .temperature(cfg.temperature)
        .payload(json!({
            "steps": ctx.steps,
            "code": code.as_str(),
            "edit": edit.as_str(),
            "targets": selection.targets,
        }));
    for attempt in 0..=cfg.parse_retries {
        let reply = registry.chat(provider, &base.clone().sample(attempt))?;
        let Some(parsed) = parse_injection(reply.structured.as_ref()) else {
            continue;
        };
        let mut v = Variant {
            variant_id,
            parent_instance_id: ctx.instance_id.to_string(),
            corrupted_steps: parsed.corrupted_steps,
            error_codes: BTreeSet::from([code]),
            error_step_indices: BTreeMap::from([(code, parsed.reported)]),
            severity_score: 0.0,
            severity_level: SeverityLevel::Minor,
            is_composite: false,
            producer: provider.to_string(),
            sample_weight: 1.0,
            targets: selection.targets.clone(),
            target_profile: ctx.profile(&selection.targets),
            fallback_target: selection.fallback,
            error_description: parsed.description,
            reason: parsed.reason,
        };
        v.rescore(severity);
        return Ok(Some(v));
    }
    Ok(None)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceInjection {
    pub variants: Vec<Variant>,
    /// Codes whose reply could not be read within the retry budget.
    pub dropped: Vec<ErrorCode>,
}

/// Plants each code as its own variant; producers rotate through the pool
/// in variant order. Ids are `{instance_id}::v{n}`.
pub fn inject_instance(
    ctx: &InjectionContext<'_>,
    codes: &[ErrorCode],
    pool: &ProviderPool,
    registry: &ProviderRegistry,
    sim: &SimilarityCache,
    cfg: &InjectConfig,
    severity: &SeverityConfig,
) -> Result<InstanceInjection> {
    let mut out = InstanceInjection::default();
    for (k, &code) in codes.iter().enumerate() {
        let selection = select_targets(code, ctx.steps, ctx.annotations, ctx.step_bnc, sim)?;
        let producer = pool.member_for_attempt(k + 1);
        let id = format!("{}::v{}", ctx.instance_id, k + 1);
        match inject_error(ctx, code, &selection, id, producer, registry, cfg, severity)? {
            Some(v) => out.variants.push(v),
            None => out.dropped.push(code),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blueprint::SafetyLevel;
    use crate::providers::mock::{FnProvider, ScriptedProvider};
    use std::sync::Arc;

    fn chain() -> Vec<String> {
        [
            "The patient has fever and productive cough.",
            "Chest radiograph shows lobar consolidation.",
            "Community-acquired pneumonia is the working diagnosis.",
            "Therefore the answer is \\boxed{B}.",
        ]
        .map(String::from)
        .into()
    }

    fn annotations(n: usize) -> Vec<StepAnnotation> {
        (1..=n)
            .map(|i| StepAnnotation {
                step_index: i,
                safety_level: if i == 2 { SafetyLevel::Major } else { SafetyLevel::Minor },
                is_prerequisite_of_next: false,
            })
            .collect()
    }

    #[test]
    fn universal_types_always_set() {
        let reg = ProviderRegistry::new().with(Arc::new(ScriptedProvider::replying(
            "m",
            [r#"{"applicable": [0,0,0,0,0,0,0,0,0,0,0,0,1,0]}"#],
        )));
        let a = tag_applicability("q", &chain(), &reg, "m").unwrap();
        let codes: Vec<&str> = a.codes().iter().map(|c| c.as_str()).collect();
        assert_eq!(codes, vec!["R-1", "R-6", "E-2", "E-4"]);
        assert!(!a.fallback);
    }

    #[test]
    fn wrong_arity_falls_back() {
        let reg = ProviderRegistry::new().with(Arc::new(ScriptedProvider::replying(
            "m",
            [r#"{"applicable": [1,1,1]}"#],
        )));
        let a = tag_applicability("q", &chain(), &reg, "m").unwrap();
        assert!(a.fallback);
        assert_eq!(a.codes(), vec![ErrorCode::R1, ErrorCode::R6, ErrorCode::E2]);
    }

    #[test]
    fn redundant_insertion_example() {
        // two inserted steps after step 2 of a 4-step chain
        let mut c = chain();
        c.insert(2, "A sputum culture would also be informative.".into());
        c.insert(3, "A procalcitonin level would add confirmation.".into());
        let reply = json!({
            "corrupted_steps": c,
            "modified_steps": [3, 4],
            "error_steps": [],
            "error_step_indices": [3, 4],
            "error_description": "redundant tests",
            "reason": "no change in management",
        })
        .to_string();
        let reg = ProviderRegistry::new().with(Arc::new(ScriptedProvider::replying("m1", [reply])));
        let steps = chain();
        let ann = annotations(4);
        let ctx = InjectionContext {
            instance_id: "q1",
            question: "q",
            steps: &steps,
            annotations: &ann,
            step_bnc: None,
        };
        let sel = TargetSelection {
            targets: vec![2],
            fallback: false,
        };
        let v = inject_error(
            &ctx,
            ErrorCode::S1,
            &sel,
            "q1::v1".into(),
            "m1",
            &reg,
            &InjectConfig::default(),
            &SeverityConfig::default(),
        )
        .unwrap()
        .unwrap();
        assert_eq!(v.corrupted_steps.len(), 6);
        assert_eq!(v.error_step_indices[&ErrorCode::S1], BTreeSet::from([3, 4]));
        // 2/6 affected, Major target, w_type 0.2
        let expect = 0.35 * (2.0 / 6.0) + 0.35 * 0.7 + 0.30 * 0.2;
        assert!((v.severity_score - expect).abs() < 1e-12);
        assert_eq!(v.severity_level, SafetyLevel::Major);
    }

    #[test]
    fn unreadable_replies_exhaust_budget() {
        let reg = ProviderRegistry::new().with(Arc::new(ScriptedProvider::replying("m", ["nope", "still nope"])));
        let steps = chain();
        let ctx = InjectionContext {
            instance_id: "q1",
            question: "q",
            steps: &steps,
            annotations: &[],
            step_bnc: None,
        };
        let sel = TargetSelection {
            targets: vec![1],
            fallback: false,
        };
        let got = inject_error(
            &ctx,
            ErrorCode::R1,
            &sel,
            "x".into(),
            "m",
            &reg,
            &InjectConfig::default(),
            &SeverityConfig::default(),
        )
        .unwrap();
        assert!(got.is_none());
    }

    #[test]
    fn producers_rotate() {
        let echo = |id: &'static str| {
            Arc::new(FnProvider::new(id, move |req| {
                let steps = req.payload["steps"].clone();
                Ok(json!({"corrupted_steps": steps, "error_step_indices": [1]}).to_string())
            }))
        };
        let reg = ProviderRegistry::new()
            .with(echo("m1"))
            .with(echo("m2"))
            .with(echo("m3"));
        let pool = ProviderPool::new(["m1", "m2", "m3"]).unwrap();
        let steps = chain();
        let ann = annotations(4);
        let ctx = InjectionContext {
            instance_id: "q1",
            question: "q",
            steps: &steps,
            annotations: &ann,
            step_bnc: None,
        };
        let out = inject_instance(
            &ctx,
            &[ErrorCode::R1, ErrorCode::E4, ErrorCode::S2],
            &pool,
            &reg,
            &SimilarityCache::token_set(),
            &InjectConfig::default(),
            &SeverityConfig::default(),
        )
        .unwrap();
        let producers: Vec<&str> = out.variants.iter().map(|v| v.producer.as_str()).collect();
        assert_eq!(producers, vec!["m1", "m2", "m3"]);
        // an unchanged chain survives here; diff verification removes it later
        assert_eq!(out.variants[0].corrupted_steps, steps);
        assert_eq!(out.variants[2].variant_id, "q1::v3");
    }
}

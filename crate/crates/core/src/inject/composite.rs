//! Multi-error variants assembled from single-error ones.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{InjectConfig, InjectionContext, SeverityConfig, SeverityLevel, Variant};
use crate::error::Result;
use crate::providers::prompts::{self, numbered};
use crate::providers::{ProviderRegistry, TaskKind};
use crate::taxonomy::ErrorCode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositeConfig {
    /// Combinations sent for merging per instance.
    pub k_comp: usize,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        CompositeConfig { k_comp: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedCombination {
    /// Indices into the single-variant list, ascending.
    pub members: Vec<usize>,
    pub score: u32,
    pub codes: Vec<ErrorCode>,
}

/// +2 per distinct category, +1 for two or more distinct severity levels.
/// `None` when members share an error step or repeat a code.
pub fn combination_score(members: &[&Variant]) -> Option<u32> {
    let mut steps = BTreeSet::new();
    let mut codes = BTreeSet::new();
    for v in members {
        for c in &v.error_codes {
            if !codes.insert(*c) {
                return None;
            }
        }
        for i in v.error_positions() {
            if !steps.insert(i) {
                return None;
            }
        }
    }
    let categories: BTreeSet<_> = codes.iter().map(|c| c.category()).collect();
    let levels: BTreeSet<SeverityLevel> = members.iter().map(|v| v.severity_level).collect();
    Some(2 * categories.len() as u32 + u32::from(levels.len() >= 2))
}

/// Every qualifying pair and triple, best first; ties by the sorted code
/// list in lexicographic order.
pub fn rank_combinations(singles: &[Variant]) -> Vec<RankedCombination> {
    let n = singles.len();
    let mut sets: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            sets.push(vec![i, j]);
            for k in j + 1..n {
                sets.push(vec![i, j, k]);
            }
        }
    }
    let mut ranked: Vec<RankedCombination> = sets
        .into_iter()
        .filter_map(|members| {
            let vs: Vec<&Variant> = members.iter().map(|&i| &singles[i]).collect();
            let score = combination_score(&vs)?;
            let codes: Vec<ErrorCode> = vs
                .iter()
                .flat_map(|v| v.error_codes.iter().copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            Some(RankedCombination { members, score, codes })
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score.cmp(&a.score).then_with(|| {
            let key = |c: &RankedCombination| {
                let mut k: Vec<&str> = c.codes.iter().map(|c| c.as_str()).collect();
                k.sort_unstable();
                k
            };
            key(a).cmp(&key(b))
        })
    });
    ranked
}

/// Reads a merge reply. Each member code must receive at least one index
/// in range; an index claimed by several codes stays with the first code
/// in taxonomy order.
pub fn parse_composite(
    v: Option<&Value>,
    codes: &[ErrorCode],
) -> Option<(Vec<String>, BTreeMap<ErrorCode, BTreeSet<usize>>, String, String)> {
    let v = v?;
    let steps: Vec<String> = v
        .get("corrupted_steps")?
        .as_array()?
        .iter()
        .map(|s| s.as_str().map(|s| s.trim().to_string()))
        .collect::<Option<_>>()?;
    if steps.is_empty() || steps.iter().any(String::is_empty) {
        return None;
    }
    let map = v.get("error_step_indices")?.as_object()?;
    let mut taken = BTreeSet::new();
    let mut out = BTreeMap::new();
    for &code in codes {
        let raw = map.get(code.as_str())?.as_array()?;
        let set: BTreeSet<usize> = raw
            .iter()
            .filter_map(Value::as_u64)
            .map(|i| i as usize)
            .filter(|i| (1..=steps.len()).contains(i) && !taken.contains(i))
            .collect();
        if set.is_empty() {
            return None;
        }
        taken.extend(set.iter().copied());
        out.insert(code, set);
    }
    let text = |k: &str| v.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
    Some((steps, out, text("error_description"), text("reason")))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompositeOutcome {
    pub variants: Vec<Variant>,
    /// Selected combinations whose merge could not be read.
    pub dropped: usize,
}

/// Merges the top `k_comp` combinations. Ids are `{instance_id}::c{n}`.
/// Severity uses the union of error positions, the most critical member
/// target, and the heaviest member type.
pub fn synthesize_composite(
    ctx: &InjectionContext<'_>,
    singles: &[Variant],
    comp: &CompositeConfig,
    provider: &str,
    registry: &ProviderRegistry,
    cfg: &InjectConfig,
    severity: &SeverityConfig,
) -> Result<CompositeOutcome> {
    let mut out = CompositeOutcome::default();
    if singles.len() < 2 {
        return Ok(out);
    }
    let asset = prompts::asset("composite")?;
    for combo in rank_combinations(singles).into_iter().take(comp.k_comp) {
        let members: Vec<&Variant> = combo.members.iter().map(|&i| &singles[i]).collect();
        let listing = members
            .iter()
            .map(|v| {
                let code = v.error_codes.iter().next().map_or("", |c| c.as_str());
                format!("[{code}]\n{}", numbered(&v.corrupted_steps))
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let base = asset
            .request(
                TaskKind::Composite,
                &[
                    ("question", ctx.question),
                    ("steps", &numbered(ctx.steps)),
                    ("variants", &listing),
                ],
            )
            .temperature(cfg.temperature)
            .payload(json!({
                "steps": ctx.steps,
                "variants": members.iter().map(|v| json!({
                    "code": v.error_codes.iter().next().map(|c| c.as_str()),
                    "corrupted_steps": v.corrupted_steps,
                })).collect::<Vec<_>>(),
            }));
        let mut merged = None;
        for attempt in 0..=cfg.parse_retries {
            let reply = registry.chat(provider, &base.clone().sample(attempt))?;
            if let Some(m) = parse_composite(reply.structured.as_ref(), &combo.codes) {
                merged = Some(m);
                break;
            }
        }
        let Some((steps, indices, description, reason)) = merged else {
            out.dropped += 1;
            continue;
        };
        let profile = members
            .iter()
            .map(|v| v.target_profile)
            .reduce(|a, b| a.merge(b))
            .expect("at least two members");
        let mut v = Variant {
            variant_id: format!("{}::c{}", ctx.instance_id, out.variants.len() + 1),
            parent_instance_id: ctx.instance_id.to_string(),
            corrupted_steps: steps,
            error_codes: combo.codes.iter().copied().collect(),
            error_step_indices: indices,
            severity_score: 0.0,
            severity_level: SeverityLevel::Minor,
            is_composite: true,
            producer: provider.to_string(),
            sample_weight: 1.0,
            targets: members
                .iter()
                .flat_map(|v| v.targets.iter().copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            target_profile: profile,
            fallback_target: members.iter().any(|v| v.fallback_target),
            error_description: description,
            reason,
        };
        v.rescore(severity);
        out.variants.push(v);
    }
    Ok(out)
}

//! Knowledge-triplet extraction and multi-provider semantic voting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::segment_steps;
use crate::error::{ForgeError, Result};
use crate::providers::prompts;
use crate::providers::{ProviderRegistry, SimilarityCache, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    #[serde(default)]
    pub supporters: BTreeSet<String>,
}

impl Triplet {
    pub fn new(subject: &str, predicate: &str, object: &str, provider: &str) -> Self {
        Triplet {
            subject: subject.trim().to_string(),
            predicate: predicate.trim().to_string(),
            object: object.trim().to_string(),
            supporters: BTreeSet::from([provider.to_string()]),
        }
    }

    pub fn parts(&self) -> [&str; 3] {
        [&self.subject, &self.predicate, &self.object]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VotingConfig {
    pub entity_threshold: f64,
    pub relation_threshold: f64,
    pub min_support: usize,
}

impl Default for VotingConfig {
    fn default() -> Self {
        VotingConfig {
            entity_threshold: 0.7,
            relation_threshold: 0.6,
            min_support: 2,
        }
    }
}

impl VotingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("entity threshold", self.entity_threshold),
            ("relation threshold", self.relation_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ForgeError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.min_support < 1 {
            return Err(ForgeError::Config("min support must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of one extraction call.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Extraction {
    pub triplets: Vec<Triplet>,
    /// Entries without exactly three non-empty strings.
    pub dropped: usize,
    pub parse_failed: bool,
}

/// Parses a `{"triplets": [[s, p, o], ...]}` reply (a bare list also works).
pub fn parse_triplets(parsed: Option<&Value>, provider: &str) -> Extraction {
    let list = match parsed {
        Some(Value::Object(o)) => o.get("triplets").and_then(Value::as_array),
        Some(Value::Array(a)) => Some(a),
        _ => None,
    };
    let Some(list) = list else {
        return Extraction {
            parse_failed: true,
            ..Default::default()
        };
    };
    let mut out = Extraction::default();
    for entry in list {
        let parts: Option<Vec<&str>> = entry
            .as_array()
            .filter(|a| a.len() == 3)
            .and_then(|a| a.iter().map(Value::as_str).collect());
        match parts {
            Some(p) if p.iter().all(|s| !s.trim().is_empty()) => {
                out.triplets.push(Triplet::new(p[0], p[1], p[2], provider));
            }
            _ => out.dropped += 1,
        }
    }
    out
}

pub fn extract_triplets(
    question: &str,
    reasoning: &str,
    provider: &str,
    registry: &ProviderRegistry,
) -> Result<Extraction> {
    if reasoning.trim().is_empty() {
        return Err(ForgeError::invalid("empty reasoning text"));
    }
    let req = prompts::asset("ern_extract")?
        .request(
            TaskKind::ExtractTriplets,
            &[("question", question), ("reasoning", reasoning)],
        )
        .payload(json!({ "steps": segment_steps(reasoning) }));
    let reply = registry.chat(provider, &req)?;
    Ok(parse_triplets(reply.structured.as_ref(), provider))
}

/// Pairwise equivalence: both entities reach the entity threshold and
/// the predicates reach the relation threshold.
pub fn triplets_equivalent(a: &Triplet, b: &Triplet, cfg: &VotingConfig, sim: &SimilarityCache) -> Result<bool> {
    Ok(sim.sim(&a.subject, &b.subject)? >= cfg.entity_threshold
        && sim.sim(&a.predicate, &b.predicate)? >= cfg.relation_threshold
        && sim.sim(&a.object, &b.object)? >= cfg.entity_threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErnEdge {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub supporters: BTreeSet<String>,
    pub supporter_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ern {
    pub instance_id: String,
    pub nodes: BTreeSet<String>,
    pub edges: Vec<ErnEdge>,
    /// Candidate triplets that entered the vote.
    pub candidate_count: usize,
}

impl Ern {
    pub fn from_edges(instance_id: &str, edges: Vec<ErnEdge>) -> Self {
        let nodes = edges
            .iter()
            .flat_map(|e| [e.subject.clone(), e.object.clone()])
            .collect();
        Ern {
            instance_id: instance_id.to_string(),
            nodes,
            candidate_count: edges.len(),
            edges,
        }
    }

    /// Share of candidates that became edges, in percent.
    pub fn acceptance_rate(&self) -> f64 {
        if self.candidate_count == 0 {
            0.0
        } else {
            100.0 * self.edges.len() as f64 / self.candidate_count as f64
        }
    }

    /// One JSON object per edge.
    pub fn dump_lines(&self) -> Vec<Value> {
        self.edges
            .iter()
            .map(|e| {
                json!({
                    "instance_id": self.instance_id,
                    "subject": e.subject,
                    "predicate": e.predicate,
                    "object": e.object,
                    "supporter_count": e.supporter_count,
                })
            })
            .collect()
    }
}

/// Fuses per-provider extractions by semantic voting.
///
/// A candidate's support is the number of distinct providers whose list
/// holds at least one equivalent triplet (its own provider included).
/// Surviving candidates are merged into the first earlier survivor they
/// are equivalent to, which fixes the surface form; merged edges keep the
/// largest supporter set.
pub fn vote_fuse(
    instance_id: &str,
    per_provider: &[(String, Vec<Triplet>)],
    cfg: &VotingConfig,
    sim: &SimilarityCache,
) -> Result<Ern> {
    cfg.validate()?;
    let providers: BTreeSet<&str> = per_provider.iter().map(|(p, _)| p.as_str()).collect();
    if providers.len() != per_provider.len() {
        return Err(ForgeError::invalid("provider listed twice in vote input"));
    }
    if providers.len() < cfg.min_support {
        return Err(ForgeError::invalid(format!(
            "{} providers cannot reach support {}",
            providers.len(),
            cfg.min_support
        )));
    }

    // unique surface forms and their pairwise equivalence
    let mut forms: Vec<[String; 3]> = Vec::new();
    let mut form_id: BTreeMap<[String; 3], usize> = BTreeMap::new();
    let mut candidates: Vec<(usize, usize)> = Vec::new(); // (provider index, form)
    for (pi, (_, list)) in per_provider.iter().enumerate() {
        for t in list {
            let key = [t.subject.clone(), t.predicate.clone(), t.object.clone()];
            let id = *form_id.entry(key.clone()).or_insert_with(|| {
                forms.push(key);
                forms.len() - 1
            });
            candidates.push((pi, id));
        }
    }
    sim.prefetch(forms.iter().flat_map(|f| f.iter().map(String::as_str)))?;
    let n = forms.len();
    let mut equiv = vec![vec![false; n]; n];
    for i in 0..n {
        equiv[i][i] = true;
        for j in i + 1..n {
            let a = Triplet::new(&forms[i][0], &forms[i][1], &forms[i][2], "");
            let b = Triplet::new(&forms[j][0], &forms[j][1], &forms[j][2], "");
            let e = triplets_equivalent(&a, &b, cfg, sim)?;
            equiv[i][j] = e;
            equiv[j][i] = e;
        }
    }
    let forms_by_provider: Vec<Vec<usize>> = (0..per_provider.len())
        .map(|pi| candidates.iter().filter(|c| c.0 == pi).map(|c| c.1).collect())
        .collect();

    let mut edges: Vec<(usize, BTreeSet<String>)> = Vec::new();
    for &(_, f) in &candidates {
        let supporters: BTreeSet<String> = forms_by_provider
            .iter()
            .enumerate()
            .filter(|(_, fs)| fs.iter().any(|&g| equiv[f][g]))
            .map(|(pi, _)| per_provider[pi].0.clone())
            .collect();
        if supporters.len() < cfg.min_support {
            continue;
        }
        match edges.iter_mut().find(|(g, _)| equiv[*g][f]) {
            Some((_, existing)) => {
                if supporters.len() > existing.len() {
                    *existing = supporters;
                }
            }
            None => edges.push((f, supporters)),
        }
    }

    let mut ern = Ern::from_edges(
        instance_id,
        edges
            .into_iter()
            .map(|(f, supporters)| ErnEdge {
                subject: forms[f][0].clone(),
                predicate: forms[f][1].clone(),
                object: forms[f][2].clone(),
                supporter_count: supporters.len(),
                supporters,
            })
            .collect(),
    );
    ern.candidate_count = candidates.len();
    Ok(ern)
}

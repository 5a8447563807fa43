//! Distillation of an evidence network into a reasoning blueprint.
//!
//! Stages: anchor the conclusion node, bridge fragmented components, keep
//! what is connected to the conclusion in either direction, drop edges
//! implied by longer paths, then score node criticality. A provider checks
//! sufficiency, and turns the result into annotated steps.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{segment_steps, DatasetClass, QuestionRecord};
use crate::ern::Ern;
use crate::error::{ForgeError, Result};
use crate::graph;
use crate::providers::embed::tokens;
use crate::providers::prompts::{self, numbered};
use crate::providers::{ProviderRegistry, SimilarityCache, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Causal,
    /// Synthetic `same_as` link between components; traversed both ways.
    Bridge,
    /// Closes a cycle; kept as an attribute edge and never reduced.
    CycleBack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlueprintEdge {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub kind: EdgeKind,
    #[serde(default)]
    pub supporter_count: usize,
}

impl BlueprintEdge {
    fn triple(&self) -> (&str, &str, &str) {
        (&self.subject, &self.predicate, &self.object)
    }
}

/// Node set plus labeled edges; the working form between stages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledGraph {
    pub nodes: BTreeSet<String>,
    pub edges: Vec<BlueprintEdge>,
}

/// Dense index view: sorted node names and `(from, to)` pairs.
struct Indexed {
    names: Vec<String>,
    pairs: Vec<(usize, usize)>,
}

impl LabeledGraph {
    pub fn from_ern(ern: &Ern) -> Self {
        LabeledGraph {
            nodes: ern.nodes.clone(),
            edges: ern
                .edges
                .iter()
                .map(|e| BlueprintEdge {
                    subject: e.subject.clone(),
                    predicate: e.predicate.clone(),
                    object: e.object.clone(),
                    kind: EdgeKind::Causal,
                    supporter_count: e.supporter_count,
                })
                .collect(),
        }
    }

    fn indexed(&self) -> Indexed {
        let names: Vec<String> = self.nodes.iter().cloned().collect();
        let pos: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let pairs = self
            .edges
            .iter()
            .map(|e| (pos[e.subject.as_str()], pos[e.object.as_str()]))
            .collect();
        Indexed { names, pairs }
    }

    /// Pairs with bridge edges present in both directions.
    fn traversal_pairs(&self, ix: &Indexed) -> Vec<(usize, usize)> {
        let mut out = ix.pairs.clone();
        for (e, &(u, v)) in self.edges.iter().zip(&ix.pairs) {
            if e.kind == EdgeKind::Bridge {
                out.push((v, u));
            }
        }
        out
    }

    fn node_index(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ForgeError::UnknownNode(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub bridge_threshold: f64,
    pub min_edges: usize,
    /// Similarity a fallback target must reach to anchor a short answer.
    pub fallback_min_similarity: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            bridge_threshold: 0.85,
            min_edges: 3,
            fallback_min_similarity: 0.3,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.bridge_threshold) || !(0.0..=1.0).contains(&self.fallback_min_similarity) {
            return Err(ForgeError::Config("distillation thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BncWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for BncWeights {
    fn default() -> Self {
        BncWeights {
            alpha: 0.4,
            beta: 0.35,
            gamma: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SafetyLevel {
    Critical,
    Major,
    Moderate,
    Minor,
}

impl SafetyLevel {
    pub const ALL: [SafetyLevel; 4] = [
        SafetyLevel::Critical,
        SafetyLevel::Major,
        SafetyLevel::Moderate,
        SafetyLevel::Minor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SafetyLevel::Critical => "Critical",
            SafetyLevel::Major => "Major",
            SafetyLevel::Moderate => "Moderate",
            SafetyLevel::Minor => "Minor",
        }
    }
}

impl fmt::Display for SafetyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SafetyLevel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown safety level '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepAnnotation {
    /// 1-based.
    pub step_index: usize,
    pub safety_level: SafetyLevel,
    pub is_prerequisite_of_next: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blueprint {
    pub instance_id: String,
    pub nodes: BTreeSet<String>,
    pub edges: Vec<BlueprintEdge>,
    pub conclusion_node: String,
    pub conclusion_similarity: f64,
    pub bnc: BTreeMap<String, f64>,
    pub edges_removed: usize,
    pub sufficient: Option<bool>,
    pub enhancement_rounds: u32,
    /// Set when the sufficiency check could not be read.
    pub unverified: bool,
}

impl Blueprint {
    pub fn graph(&self) -> LabeledGraph {
        LabeledGraph {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn bridge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Bridge).count()
    }

    pub fn compression_rate(&self) -> f64 {
        let before = self.edges.len() + self.edges_removed;
        if before == 0 {
            0.0
        } else {
            self.edges_removed as f64 / before as f64
        }
    }
}

/// Alternative texts tried when the answer itself is too short to match.
#[derive(Debug, Clone, Default)]
pub struct ConclusionHints<'a> {
    pub long_answer: Option<&'a str>,
    pub source_lookup: Option<&'a str>,
    pub question: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConclusionMatch {
    pub node: String,
    pub similarity: f64,
    /// Which text anchored the match: "answer" or a fallback name.
    pub anchor: &'static str,
}

fn best_match(nodes: &BTreeSet<String>, target: &str, sim: &SimilarityCache) -> Result<(String, f64)> {
    sim.prefetch(nodes.iter().map(String::as_str).chain([target]))?;
    let mut best: Option<(String, f64)> = None;
    // sorted iteration keeps the smaller name on ties
    for n in nodes {
        let s = sim.sim(n, target)?;
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((n.clone(), s));
        }
    }
    best.ok_or(ForgeError::EmptyGraph)
}

/// Node most similar to the answer. Answers of at most one token first try
/// the hints in order, accepting the first whose best match reaches the
/// configured similarity.
pub fn find_conclusion_node(
    nodes: &BTreeSet<String>,
    answer: &str,
    hints: &ConclusionHints<'_>,
    cfg: &DistillConfig,
    sim: &SimilarityCache,
) -> Result<ConclusionMatch> {
    if nodes.is_empty() {
        return Err(ForgeError::EmptyGraph);
    }
    let short = tokens(answer).len() <= 1;
    if short {
        let ordered = [
            ("long_answer", hints.long_answer),
            ("source_lookup", hints.source_lookup),
            ("question", hints.question),
        ];
        for (name, text) in ordered {
            let Some(text) = text.filter(|t| !t.trim().is_empty()) else {
                continue;
            };
            let (node, s) = best_match(nodes, text, sim)?;
            if s >= cfg.fallback_min_similarity {
                return Ok(ConclusionMatch {
                    node,
                    similarity: s,
                    anchor: name,
                });
            }
        }
    }
    let (node, similarity) = best_match(nodes, answer, sim)?;
    Ok(ConclusionMatch {
        node,
        similarity,
        anchor: "answer",
    })
}

/// Links weakly connected components through their most similar node
/// pairs, greedily by descending similarity, one bridge per merge.
pub fn semantic_bridge(g: &LabeledGraph, cfg: &DistillConfig, sim: &SimilarityCache) -> Result<(LabeledGraph, usize)> {
    let ix = g.indexed();
    let n = ix.names.len();
    let comp = graph::weak_components(n, &ix.pairs);
    sim.prefetch(ix.names.iter().map(String::as_str))?;
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if comp[i] != comp[j] {
                let s = sim.sim(&ix.names[i], &ix.names[j])?;
                if s >= cfg.bridge_threshold {
                    candidates.push((s, i, j));
                }
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let comp_count = comp.iter().max().map_or(0, |m| m + 1);
    let mut parent: Vec<usize> = (0..comp_count).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut out = g.clone();
    let mut added = 0;
    for (_, i, j) in candidates {
        let (ri, rj) = (root(&mut parent, comp[i]), root(&mut parent, comp[j]));
        if ri == rj {
            continue;
        }
        parent[ri.max(rj)] = ri.min(rj);
        out.edges.push(BlueprintEdge {
            subject: ix.names[i].clone(),
            predicate: "same_as".into(),
            object: ix.names[j].clone(),
            kind: EdgeKind::Bridge,
            supporter_count: 0,
        });
        added += 1;
    }
    Ok((out, added))
}

/// Everything reachable from `root` forward or backward, with the edges
/// among it.
pub fn bidirectional_bfs(g: &LabeledGraph, root: &str) -> Result<LabeledGraph> {
    let r = g.node_index(root)?;
    let ix = g.indexed();
    let keep = graph::bidirectional_reach(ix.names.len(), &g.traversal_pairs(&ix), r);
    let nodes: BTreeSet<String> = ix
        .names
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(n, _)| n.clone())
        .collect();
    let edges = g
        .edges
        .iter()
        .filter(|e| nodes.contains(&e.subject) && nodes.contains(&e.object))
        .cloned()
        .collect();
    Ok(LabeledGraph { nodes, edges })
}

/// Tags cycle-closing edges (searching from `root` first), then removes
/// edges implied by longer paths. Returns the graph and the removal count.
pub fn transitive_reduce(g: &LabeledGraph, root: &str) -> Result<(LabeledGraph, usize)> {
    let r = g.node_index(root)?;
    let ix = g.indexed();
    let n = ix.names.len();
    let mut out = g.clone();

    let directed: Vec<usize> = (0..g.edges.len())
        .filter(|&i| g.edges[i].kind != EdgeKind::Bridge)
        .collect();
    let directed_pairs: Vec<(usize, usize)> = directed.iter().map(|&i| ix.pairs[i]).collect();
    let back = graph::back_edges(n, &directed_pairs, r);
    for (k, &i) in directed.iter().enumerate() {
        if back[k] {
            out.edges[i].kind = EdgeKind::CycleBack;
        }
    }
    let exempt: Vec<bool> = out.edges.iter().map(|e| e.kind == EdgeKind::CycleBack).collect();
    let bidirectional: Vec<bool> = out.edges.iter().map(|e| e.kind == EdgeKind::Bridge).collect();
    let keep = graph::transitive_reduction(n, &ix.pairs, &exempt, &bidirectional);
    let removed = keep.iter().filter(|k| !**k).count();
    out.edges = out
        .edges
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(e, _)| e)
        .collect();
    Ok((out, removed))
}

/// Node criticality: weighted betweenness, proximity to the conclusion,
/// and relative degree.
///
/// Betweenness is directed (bridges both ways) and normalized by
/// `(n-1)(n-2)`; proximity is `1/(1+d)` over undirected hops, 0 when
/// unreachable; degree counts each edge once.
pub fn compute_bnc(g: &LabeledGraph, conclusion: &str, w: &BncWeights) -> Result<BTreeMap<String, f64>> {
    if g.nodes.is_empty() {
        return Err(ForgeError::EmptyGraph);
    }
    let c = g.node_index(conclusion)?;
    let ix = g.indexed();
    let n = ix.names.len();
    let bc = graph::betweenness(n, &g.traversal_pairs(&ix));
    let dist = graph::undirected_distances(n, &ix.pairs, c);
    let deg = graph::degrees(n, &ix.pairs);
    let max_deg = deg.iter().copied().max().unwrap_or(0);
    Ok(ix
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let prox = dist[i].map_or(0.0, |d| 1.0 / (1.0 + d as f64));
            let deg_term = if max_deg == 0 {
                0.0
            } else {
                deg[i] as f64 / max_deg as f64
            };
            (name.clone(), w.alpha * bc[i] + w.beta * prox + w.gamma * deg_term)
        })
        .collect())
}

/// Full distillation of a voted network.
pub fn distill(
    ern: &Ern,
    answer: &str,
    hints: &ConclusionHints<'_>,
    cfg: &DistillConfig,
    weights: &BncWeights,
    sim: &SimilarityCache,
) -> Result<Blueprint> {
    cfg.validate()?;
    let base = LabeledGraph::from_ern(ern);
    let conclusion = find_conclusion_node(&base.nodes, answer, hints, cfg, sim)?;
    let (bridged, _) = semantic_bridge(&base, cfg, sim)?;
    let kept = bidirectional_bfs(&bridged, &conclusion.node)?;
    let (reduced, removed) = transitive_reduce(&kept, &conclusion.node)?;
    let bnc = compute_bnc(&reduced, &conclusion.node, weights)?;
    Ok(Blueprint {
        instance_id: ern.instance_id.clone(),
        nodes: reduced.nodes,
        edges: reduced.edges,
        conclusion_node: conclusion.node,
        conclusion_similarity: conclusion.similarity,
        bnc,
        edges_removed: removed,
        sufficient: None,
        enhancement_rounds: 0,
        unverified: false,
    })
}

fn edge_lines(edges: &[(&str, &str, &str)]) -> String {
    edges
        .iter()
        .enumerate()
        .map(|(i, (s, p, o))| format!("{}. ({s}) -[{p}]-> ({o})", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn ask_sufficient(
    bp: &Blueprint,
    question: &str,
    answer: &str,
    registry: &ProviderRegistry,
    provider: &str,
    round: u32,
) -> Result<Option<bool>> {
    let triples: Vec<_> = bp.edges.iter().map(BlueprintEdge::triple).collect();
    let req = prompts::asset("sufficiency")?
        .request(
            TaskKind::Sufficiency,
            &[
                ("question", question),
                ("answer", answer),
                ("edges", &edge_lines(&triples)),
            ],
        )
        .sample(round)
        .payload(json!({ "edge_count": bp.edges.len() }));
    let reply = registry.chat(provider, &req)?;
    Ok(reply
        .structured
        .as_ref()
        .and_then(|v| v.get("sufficient"))
        .and_then(Value::as_bool))
}

/// One sufficiency check, and at most one round of supplementation from
/// the voted network when the blueprint is judged insufficient or has
/// fewer than `min_edges` edges. Supplements must share a node with the
/// blueprint at the time they are added.
pub fn verify_and_enhance(
    bp: &Blueprint,
    ern: &Ern,
    question: &str,
    answer: &str,
    cfg: &DistillConfig,
    weights: &BncWeights,
    registry: &ProviderRegistry,
    provider: &str,
) -> Result<Blueprint> {
    let mut out = bp.clone();
    let Some(sufficient) = ask_sufficient(bp, question, answer, registry, provider, 0)? else {
        out.unverified = true;
        return Ok(out);
    };
    out.sufficient = Some(sufficient);
    if sufficient && bp.edges.len() >= cfg.min_edges {
        return Ok(out);
    }
    let present: BTreeSet<(&str, &str, &str)> = bp.edges.iter().map(BlueprintEdge::triple).collect();
    let candidates: Vec<_> = ern
        .edges
        .iter()
        .filter(|e| !present.contains(&(e.subject.as_str(), e.predicate.as_str(), e.object.as_str())))
        .collect();
    if candidates.is_empty() {
        return Ok(out);
    }
    let current: Vec<_> = bp.edges.iter().map(BlueprintEdge::triple).collect();
    let cand_triples: Vec<_> = candidates
        .iter()
        .map(|e| (e.subject.as_str(), e.predicate.as_str(), e.object.as_str()))
        .collect();
    let req = prompts::asset("supplement")?
        .request(
            TaskKind::Supplement,
            &[
                ("question", question),
                ("answer", answer),
                ("edges", &edge_lines(&current)),
                ("candidates", &edge_lines(&cand_triples)),
            ],
        )
        .payload(json!({ "candidate_count": candidates.len() }));
    let reply = registry.chat(provider, &req)?;
    let Some(selected) = reply
        .structured
        .as_ref()
        .and_then(|v| v.get("selected"))
        .and_then(Value::as_array)
    else {
        out.unverified = true;
        return Ok(out);
    };
    for num in selected.iter().filter_map(Value::as_u64) {
        let Some(e) = candidates.get((num as usize).wrapping_sub(1)) else {
            continue;
        };
        if !(out.nodes.contains(&e.subject) || out.nodes.contains(&e.object)) {
            continue;
        }
        if out
            .edges
            .iter()
            .any(|x| x.triple() == (e.subject.as_str(), e.predicate.as_str(), e.object.as_str()))
        {
            continue;
        }
        out.nodes.insert(e.subject.clone());
        out.nodes.insert(e.object.clone());
        out.edges.push(BlueprintEdge {
            subject: e.subject.clone(),
            predicate: e.predicate.clone(),
            object: e.object.clone(),
            kind: EdgeKind::Causal,
            supporter_count: e.supporter_count,
        });
    }
    out.enhancement_rounds = 1;
    out.bnc = compute_bnc(&out.graph(), &out.conclusion_node, weights)?;
    match ask_sufficient(&out, question, answer, registry, provider, 1)? {
        Some(s) => out.sufficient = Some(s),
        None => out.unverified = true,
    }
    Ok(out)
}

/// Edges ordered so that every causal edge follows those feeding its
/// subject; cycle-back and bridge edges do not constrain the order.
pub fn dependency_order(bp: &Blueprint) -> Vec<&BlueprintEdge> {
    let g = bp.graph();
    let ix = g.indexed();
    let n = ix.names.len();
    let mut indeg = vec![0usize; n];
    let mut out_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, &(u, v)) in bp.edges.iter().zip(&ix.pairs) {
        if e.kind == EdgeKind::Causal && u != v {
            out_adj[u].push(v);
            indeg[v] += 1;
        }
    }
    let mut rank = vec![usize::MAX; n];
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut next = 0;
    while let Some(u) = ready.pop_first() {
        rank[u] = next;
        next += 1;
        for &v in &out_adj[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.insert(v);
            }
        }
    }
    let mut order: Vec<(usize, usize, usize)> = ix
        .pairs
        .iter()
        .enumerate()
        .map(|(i, &(u, v))| (rank[u], rank[v], i))
        .collect();
    order.sort_unstable();
    order.into_iter().map(|(_, _, i)| &bp.edges[i]).collect()
}

/// Parses `[{"safety_level": .., "is_prerequisite_of_next": ..}, ..]`.
pub fn parse_annotations(list: &Value) -> Result<Vec<StepAnnotation>> {
    let items = list
        .as_array()
        .ok_or_else(|| ForgeError::invalid("annotations must be a list"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let level = a
                .get("safety_level")
                .and_then(Value::as_str)
                .ok_or_else(|| ForgeError::invalid(format!("annotation {} has no safety_level", i + 1)))?;
            let safety_level = level.parse::<SafetyLevel>().map_err(ForgeError::Invalid)?;
            Ok(StepAnnotation {
                step_index: i + 1,
                safety_level,
                is_prerequisite_of_next: a
                    .get("is_prerequisite_of_next")
                    .and_then(Value::as_bool)
                    .unwrap_or(false),
            })
        })
        .collect()
}

fn clean_steps(v: &Value) -> Option<Vec<String>> {
    let steps: Vec<String> = v
        .as_array()?
        .iter()
        .filter_map(Value::as_str)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    Some(steps).filter(|s| !s.is_empty())
}

/// Produces annotated steps. Class B chains are written from the
/// blueprint; class A chains keep their own steps and are only annotated.
pub fn annotate_and_linearize(
    bp: Option<&Blueprint>,
    record: &QuestionRecord,
    registry: &ProviderRegistry,
    provider: &str,
) -> Result<(Vec<String>, Vec<StepAnnotation>)> {
    let invalid = |what: &str| ForgeError::invalid(format!("{}: {what}", record.instance_id));
    if record.dataset_class == DatasetClass::A {
        let steps = segment_steps(record.reasoning_text.as_deref().unwrap_or_default());
        if steps.is_empty() {
            return Err(invalid("no reasoning steps"));
        }
        let req = prompts::asset("annotate")?
            .request(
                TaskKind::Annotate,
                &[("question", &record.question), ("steps", &numbered(&steps))],
            )
            .payload(json!({ "step_count": steps.len() }));
        let reply = registry.chat(provider, &req)?;
        let list = reply
            .structured
            .as_ref()
            .and_then(|v| v.get("annotations"))
            .ok_or_else(|| invalid("unparseable annotation reply"))?;
        let ann = parse_annotations(list)?;
        check_lengths(&steps, &ann)?;
        return Ok((steps, ann));
    }
    let bp = bp.ok_or_else(|| invalid("class B record needs a blueprint"))?;
    let ordered = dependency_order(bp);
    let triples: Vec<_> = ordered.iter().map(|e| e.triple()).collect();
    let req = prompts::asset("linearize")?
        .request(
            TaskKind::Linearize,
            &[
                ("question", &record.question),
                ("answer", record.gold_text()),
                ("edges", &edge_lines(&triples)),
            ],
        )
        .payload(json!({
            "edges": triples.iter().map(|(s, p, o)| [s, p, o]).collect::<Vec<_>>(),
        }));
    let reply = registry.chat(provider, &req)?;
    let v = reply
        .structured
        .ok_or_else(|| invalid("unparseable linearization reply"))?;
    let steps = v
        .get("steps")
        .and_then(clean_steps)
        .ok_or_else(|| invalid("no steps"))?;
    let ann = parse_annotations(v.get("annotations").unwrap_or(&Value::Null))?;
    check_lengths(&steps, &ann)?;
    Ok((steps, ann))
}

fn check_lengths(steps: &[String], ann: &[StepAnnotation]) -> Result<()> {
    if steps.len() != ann.len() {
        return Err(ForgeError::LengthMismatch {
            what: "steps vs annotations",
            left: steps.len(),
            right: ann.len(),
        });
    }
    Ok(())
}

/// Step criticality: the highest BNC among nodes named in the step text.
pub fn step_bnc(bp: &Blueprint, steps: &[String]) -> Vec<f64> {
    steps
        .iter()
        .map(|s| {
            let lower = s.to_lowercase();
            bp.bnc
                .iter()
                .filter(|(n, _)| !n.is_empty() && lower.contains(&n.to_lowercase()))
                .map(|(_, b)| *b)
                .fold(0.0, f64::max)
        })
        .collect()
}

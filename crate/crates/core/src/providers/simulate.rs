//! Seeded stand-in for a chat model.
//!
//! Replies are a pure function of `(seed, provider id, request digest)`.
//! The simulator reads the request payload rather than the prompt text and
//! produces replies in the same JSON shapes a real model is asked for,
//! including a controlled rate of wrong, malformed, or unhelpful output so
//! the error paths of every stage get exercised.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, ProviderError, TaskKind};
use crate::corpus::{AnswerOption, DatasetClass, QuestionRecord, SourceSplit};
use crate::diff::{OpKind, SequenceMatcher};

const FINDINGS: &[&str] = &[
    "fever and productive cough",
    "crushing chest pain",
    "elevated serum creatinine",
    "pitting leg edema",
    "sudden unilateral weakness",
    "polyuria and polydipsia",
    "jaundice with pale stools",
    "wheezing after exercise",
    "low serum sodium",
    "new heart murmur",
];

const MECHANISMS: &[&str] = &[
    "bacterial lobar consolidation",
    "coronary plaque rupture",
    "reduced glomerular filtration",
    "right heart volume overload",
    "cerebral arterial occlusion",
    "insulin deficiency",
    "biliary obstruction",
    "reversible airway narrowing",
    "inappropriate antidiuretic hormone release",
    "valvular vegetation",
];

const PREDICATES: &[&str] = &["suggests", "leads to", "indicates", "requires", "supports"];

const WRONG_FACTS: &[&str] = &[
    "which is typically caused by vitamin C excess",
    "since this drug class lowers potassium in all patients",
    "because this finding rules out any infection",
    "as the condition is always hereditary",
];

#[derive(Debug, Clone)]
pub struct SimulatedProvider {
    id: String,
    seed: u64,
}

fn unit_hash(parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

fn str_field<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or_default()
}

fn strings(v: &Value, key: &str) -> Vec<String> {
    v.get(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|x| x.as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

fn indices(v: &Value, key: &str) -> Vec<usize> {
    v.get(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|x| x.as_u64().map(|n| n as usize)).collect())
        .unwrap_or_default()
}

/// Chance that a probe answers a question correctly; fixed per question.
pub fn simulated_solve_rate(instance_id: &str) -> f64 {
    unit_hash(&["solve-rate", instance_id])
}

impl SimulatedProvider {
    pub fn new(id: &str, seed: u64) -> Self {
        SimulatedProvider {
            id: id.to_string(),
            seed,
        }
    }

    fn rng(&self, req: &ChatRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.id.as_bytes());
        h.update(req.digest().as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn wrong_option(&self, p: &Value, rng: &mut ChaCha8Rng) -> String {
        let gold = str_field(p, "gold_answer");
        let others: Vec<String> = strings(p, "option_labels").into_iter().filter(|l| l != gold).collect();
        if others.is_empty() {
            "unsure".to_string()
        } else {
            others[rng.random_range(0..others.len())].clone()
        }
    }

    fn probe(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        let p = &req.payload;
        let rate = simulated_solve_rate(str_field(p, "instance_id"));
        let answer = if rng.random::<f64>() < rate {
            str_field(p, "gold_answer").to_string()
        } else {
            self.wrong_option(p, rng)
        };
        format!("Weighing the findings against each option. The answer is {answer}")
    }

    fn reason(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        let p = &req.payload;
        let roll = rng.random::<f64>();
        if roll < 0.08 {
            return "{\"steps\": [\"The patient".to_string();
        }
        let gold = str_field(p, "gold_answer").to_string();
        let answer_text = p.get("gold_text").and_then(Value::as_str).unwrap_or(&gold).to_string();
        let answer = if roll < 0.35 {
            self.wrong_option(p, rng)
        } else {
            gold.clone()
        };
        let steps = synthetic_chain(str_field(p, "instance_id"), &answer_text, &answer);
        json!({"steps": steps, "answer": answer}).to_string()
    }

    fn triplets(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        if rng.random::<f64>() < 0.03 {
            return "I could not find any relations.".to_string();
        }
        let steps = strings(&req.payload, "steps");
        let mut out: Vec<Value> = Vec::new();
        for t in chain_triplets(&steps) {
            let keep = unit_hash(&[&self.id, "keep", &t[0], &t[1], &t[2]]);
            if keep < 0.12 {
                continue;
            }
            out.push(json!(t));
        }
        if rng.random::<f64>() < 0.4 {
            let f = FINDINGS[rng.random_range(0..FINDINGS.len())];
            out.push(json!([f, "is unrelated to", format!("{} artifact", self.id)]));
        }
        if rng.random::<f64>() < 0.1 {
            out.push(json!(["incomplete", "entry"]));
        }
        json!({ "triplets": out }).to_string()
    }

    fn sufficiency(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        let edges = req.payload.get("edge_count").and_then(Value::as_u64).unwrap_or(0);
        let sufficient = edges >= 3 && rng.random::<f64>() < 0.9;
        json!({"sufficient": sufficient, "missing": if sufficient { "" } else { "link to answer" }}).to_string()
    }

    fn supplement(&self, req: &ChatRequest) -> String {
        let n = req.payload.get("candidate_count").and_then(Value::as_u64).unwrap_or(0);
        let selected: Vec<u64> = (1..=n.min(3)).collect();
        json!({ "selected": selected }).to_string()
    }

    fn annotations(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Value> {
        (0..n)
            .map(|_| {
                let r = rng.random::<f64>();
                let level = if r < 0.15 {
                    "Critical"
                } else if r < 0.45 {
                    "Major"
                } else if r < 0.8 {
                    "Moderate"
                } else {
                    "Minor"
                };
                json!({"safety_level": level, "is_prerequisite_of_next": rng.random::<f64>() < 0.35})
            })
            .collect()
    }

    fn linearize(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        let edges = req
            .payload
            .get("edges")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        let steps: Vec<String> = edges
            .iter()
            .filter_map(|e| {
                let parts: Vec<&str> = e.as_array()?.iter().filter_map(Value::as_str).collect();
                (parts.len() == 3).then(|| format!("The {} {} {}.", parts[0], parts[1], parts[2]))
            })
            .collect();
        let mut annotations = self.annotations(steps.len(), rng);
        if rng.random::<f64>() < 0.03 {
            annotations.pop();
        }
        json!({"steps": steps, "annotations": annotations}).to_string()
    }

    fn annotate(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        let n = req.payload.get("step_count").and_then(Value::as_u64).unwrap_or(0) as usize;
        json!({ "annotations": self.annotations(n, rng) }).to_string()
    }

    fn applicability(&self, rng: &mut ChaCha8Rng) -> String {
        let r = rng.random::<f64>();
        if r < 0.03 {
            return "{\"applicable\": [1, 0".to_string();
        }
        let len = if r < 0.06 { 13 } else { 14 };
        let bits: Vec<u8> = (0..len).map(|_| u8::from(rng.random::<f64>() < 0.6)).collect();
        json!({ "applicable": bits }).to_string()
    }

    fn inject(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        let p = &req.payload;
        let steps = strings(p, "steps");
        let code = str_field(p, "code").to_string();
        let edit = str_field(p, "edit");
        let mut targets = indices(p, "targets");
        targets.retain(|t| *t >= 1 && *t <= steps.len().max(1));
        if targets.is_empty() {
            targets.push(1);
        }
        let roll = rng.random::<f64>();
        if roll < 0.04 {
            return "Here is the corrupted chain: 1. ...".to_string();
        }
        if roll < 0.08 {
            return json!({
                "corrupted_steps": steps,
                "modified_steps": targets,
                "error_steps": [],
                "error_step_indices": targets,
                "error_description": "no change",
                "reason": "none",
            })
            .to_string();
        }
        let (corrupted, mut reported) = apply_edit(&steps, &targets, edit, &code, rng);
        if rng.random::<f64>() < 0.12 && !reported.is_empty() {
            // misreported index, corrected later by diff reconciliation
            let extra = (reported[0] % corrupted.len().max(1)) + 1;
            if !reported.contains(&extra) {
                reported.push(extra);
                reported.sort_unstable();
            }
        }
        let error_steps: Vec<String> = reported.iter().filter_map(|i| corrupted.get(i - 1).cloned()).collect();
        json!({
            "corrupted_steps": corrupted,
            "modified_steps": reported,
            "error_steps": error_steps,
            "error_step_indices": reported,
            "error_description": format!("{code} planted by {}", self.id),
            "reason": format!("exercise {code}"),
        })
        .to_string()
    }

    fn composite(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        if rng.random::<f64>() < 0.05 {
            return "{\"corrupted_steps\": ".to_string();
        }
        let p = &req.payload;
        let original = strings(p, "steps");
        let members = p.get("variants").and_then(Value::as_array).cloned().unwrap_or_default();
        // replacement blocks keyed by original start position
        let mut edits: Vec<(usize, usize, Vec<String>, String)> = Vec::new();
        for m in &members {
            let code = str_field(m, "code").to_string();
            let corrupted = strings(m, "corrupted_steps");
            let sm = SequenceMatcher::new(&original, &corrupted);
            for op in sm.opcodes() {
                if op.kind != OpKind::Equal {
                    let block = corrupted[op.corrupted_range.clone()].to_vec();
                    edits.push((op.original_range.start, op.original_range.end, block, code.clone()));
                }
            }
        }
        edits.sort_by_key(|e| (e.0, e.1));
        let mut merged: Vec<String> = Vec::new();
        let mut by_code: std::collections::BTreeMap<String, Vec<usize>> = Default::default();
        let mut cursor = 0;
        for (start, end, block, code) in edits {
            if start < cursor {
                continue;
            }
            merged.extend(original[cursor..start].iter().cloned());
            let first_new = merged.len() + 1;
            for s in &block {
                merged.push(s.clone());
                by_code.entry(code.clone()).or_default().push(merged.len());
            }
            if block.is_empty() {
                // deletion: flag the step that now follows
                by_code.entry(code.clone()).or_default().push(first_new);
            }
            cursor = end;
        }
        merged.extend(original[cursor..].iter().cloned());
        for v in by_code.values_mut() {
            for i in v.iter_mut() {
                *i = (*i).min(merged.len()).max(1);
            }
            v.sort_unstable();
            v.dedup();
        }
        json!({
            "corrupted_steps": merged,
            "error_step_indices": by_code,
            "error_description": format!("merged by {}", self.id),
            "reason": "combined errors",
        })
        .to_string()
    }

    fn answer_impact(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        let r = rng.random::<f64>();
        if r < 0.08 {
            return "The reasoning is inconclusive.".to_string();
        }
        let answer = if r < 0.3 {
            self.wrong_option(&req.payload, rng)
        } else {
            str_field(&req.payload, "gold_answer").to_string()
        };
        json!({ "answer": answer }).to_string()
    }

    fn vote(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        if rng.random::<f64>() < 0.03 {
            return "approve?".to_string();
        }
        let key = str_field(&req.payload, "variant_id");
        let approve = unit_hash(&[&self.id, "vote", key, &req.task.to_string()]) < 0.8;
        json!({"approve": approve, "why": "simulated judgment"}).to_string()
    }

    fn rewrite(&self, req: &ChatRequest) -> String {
        let p = &req.payload;
        let mut steps = strings(p, "steps");
        if let Some(map) = p.get("corrections").and_then(Value::as_object) {
            for (k, v) in map {
                if let (Ok(i), Some(text)) = (k.parse::<usize>(), v.as_str()) {
                    if i >= 1 && i <= steps.len() {
                        steps[i - 1] = text.to_string();
                    }
                }
            }
        }
        json!({ "steps": steps }).to_string()
    }

    fn evaluate(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        let n = req.payload.get("step_count").and_then(Value::as_u64).unwrap_or(1) as usize;
        let symbols: Vec<&str> = (0..n)
            .map(|_| if rng.random::<f64>() < 0.8 { "+" } else { "-" })
            .collect();
        symbols.join(" ")
    }
}

impl ChatProvider for SimulatedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let mut rng = self.rng(req);
        Ok(match req.task {
            TaskKind::ProbeAnswer => self.probe(req, &mut rng),
            TaskKind::Reason => self.reason(req, &mut rng),
            TaskKind::ExtractTriplets => self.triplets(req, &mut rng),
            TaskKind::Sufficiency => self.sufficiency(req, &mut rng),
            TaskKind::Supplement => self.supplement(req),
            TaskKind::Linearize => self.linearize(req, &mut rng),
            TaskKind::Annotate => self.annotate(req, &mut rng),
            TaskKind::Applicability => self.applicability(&mut rng),
            TaskKind::Inject => self.inject(req, &mut rng),
            TaskKind::Composite => self.composite(req, &mut rng),
            TaskKind::AnswerImpact => self.answer_impact(req, &mut rng),
            TaskKind::VoteReason | TaskKind::VoteAnnotation => self.vote(req, &mut rng),
            TaskKind::Rewrite => self.rewrite(req),
            TaskKind::Evaluate => self.evaluate(req, &mut rng),
        })
    }
}

/// Deterministic reasoning chain for a question id, ending in the answer.
pub fn synthetic_chain(instance_id: &str, answer_text: &str, answer_label: &str) -> Vec<String> {
    let n = 3 + (unit_hash(&["chain-len", instance_id]) * 4.0) as usize;
    let pick = |salt: &str, list: &'static [&'static str]| -> &'static str {
        list[(unit_hash(&[salt, instance_id]) * list.len() as f64) as usize % list.len()]
    };
    let mut nodes: Vec<String> = Vec::with_capacity(n + 1);
    nodes.push(pick("finding", FINDINGS).to_string());
    for i in 1..n {
        let m = MECHANISMS
            [(unit_hash(&["mech", instance_id, &i.to_string()]) * MECHANISMS.len() as f64) as usize % MECHANISMS.len()];
        nodes.push(m.to_string());
    }
    nodes.dedup();
    nodes.push(answer_text.to_lowercase());
    let mut steps: Vec<String> = nodes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let pred = PREDICATES[i % PREDICATES.len()];
            format!("The {} {} {}.", w[0], pred, w[1])
        })
        .collect();
    steps.push(format!("Therefore the answer is \\boxed{{{answer_label}}}."));
    steps
}

const DIAGNOSES: &[&str] = &[
    "community acquired pneumonia",
    "acute myocardial infarction",
    "acute kidney injury",
    "right heart failure",
    "ischemic stroke",
    "diabetes mellitus",
    "obstructive jaundice",
    "exercise induced asthma",
    "hyponatremia",
    "infective endocarditis",
];

const DATASETS: &[(&str, DatasetClass)] = &[
    ("MedQA-USMLE", DatasetClass::B),
    ("MedMCQA", DatasetClass::B),
    ("PubMedQA", DatasetClass::A),
    ("HeadQA", DatasetClass::B),
    ("MedExpQA", DatasetClass::A),
];

/// A seeded multiple-choice corpus for offline runs. Class A records carry
/// numbered reasoning; sources rotate over five datasets and both splits.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<QuestionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let id = format!("syn-{seed}-{i:04}");
            let (dataset, class) = DATASETS[i % DATASETS.len()];
            let mut picks: Vec<usize> = (0..DIAGNOSES.len()).collect();
            for k in 0..4 {
                let j = rng.random_range(k..picks.len());
                picks.swap(k, j);
            }
            let options: Vec<AnswerOption> = picks[..4]
                .iter()
                .enumerate()
                .map(|(k, &d)| AnswerOption {
                    label: ((b'A' + k as u8) as char).to_string(),
                    text: DIAGNOSES[d].to_string(),
                })
                .collect();
            let gold = &options[rng.random_range(0..4usize)];
            let finding = FINDINGS[rng.random_range(0..FINDINGS.len())];
            let reasoning_text = (class == DatasetClass::A).then(|| {
                synthetic_chain(&id, &gold.text, &gold.label)
                    .iter()
                    .enumerate()
                    .map(|(k, s)| format!("{}. {s}", k + 1))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
            QuestionRecord {
                instance_id: id,
                question: format!("A patient presents with {finding}. What is the most likely diagnosis?"),
                gold_answer: gold.label.clone(),
                options,
                dataset_class: class,
                dataset_name: dataset.to_string(),
                source_split: if rng.random::<f64>() < 0.6 {
                    SourceSplit::Train
                } else {
                    SourceSplit::Test
                },
                long_answer: None,
                reasoning_text,
            }
        })
        .collect()
}

/// Triplets implied by `The <subject> <predicate> <object>.` steps.
pub fn chain_triplets(steps: &[String]) -> Vec<[String; 3]> {
    let mut out = Vec::new();
    for s in steps {
        let body = s.trim().trim_start_matches("The ").trim_end_matches('.');
        for pred in PREDICATES {
            let pat = format!(" {pred} ");
            if let Some(pos) = body.find(&pat) {
                let subj = body[..pos].trim();
                let obj = body[pos + pat.len()..].trim();
                if !subj.is_empty() && !obj.is_empty() {
                    out.push([subj.to_string(), pred.to_string(), obj.to_string()]);
                }
                break;
            }
        }
    }
    out
}

fn apply_edit(
    steps: &[String],
    targets: &[usize],
    edit: &str,
    code: &str,
    rng: &mut ChaCha8Rng,
) -> (Vec<String>, Vec<usize>) {
    let mut out = steps.to_vec();
    match edit {
        "insert" => {
            let at = targets[0].min(out.len());
            let count = if code == "S-1" { 2 } else { 1 };
            let mut reported = Vec::new();
            for k in 0..count {
                let text = match code {
                    "S-2" => format!(
                        "This holds because, as already established, {}",
                        lower_first(&steps[at.saturating_sub(1)])
                    ),
                    "R-4" => "This conclusion is certain and needs no further consideration.".to_string(),
                    "E-2" => format!(
                        "Notably, the {} points strongly toward an alternative option.",
                        FINDINGS[rng.random_range(0..FINDINGS.len())]
                    ),
                    _ => format!(
                        "An additional confirmatory study ({}) would further support this.",
                        k + 1
                    ),
                };
                out.insert(at + k, text);
                reported.push(at + k + 1);
            }
            (out, reported)
        }
        "delete" if out.len() > 1 => {
            let t = targets[0].min(out.len());
            out.remove(t - 1);
            (out.clone(), vec![t.min(out.len())])
        }
        _ => {
            let mut reported = Vec::new();
            for &t in targets.iter().take(2) {
                let i = t.min(out.len()) - 1;
                let replaced = match code {
                    "E-4" => alter_number(&out[i]),
                    "R-7" if i + 1 < out.len() => {
                        out.swap(i, i + 1);
                        reported.push(i + 2);
                        out[i].clone()
                    }
                    "R-2" => format!("{} However, this contradicts the earlier findings.", out[i]),
                    _ => {
                        format!(
                            "{} {}",
                            out[i].trim_end_matches('.'),
                            WRONG_FACTS[rng.random_range(0..WRONG_FACTS.len())]
                        ) + "."
                    }
                };
                out[i] = replaced;
                reported.push(i + 1);
            }
            reported.sort_unstable();
            reported.dedup();
            (out, reported)
        }
    }
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn alter_number(s: &str) -> String {
    let re = regex::Regex::new(r"\d+").expect("static regex");
    if let Some(m) = re.find(s) {
        let n: u64 = m.as_str().parse().unwrap_or(1);
        format!("{}{}{}", &s[..m.start()], n * 10 + 5, &s[m.end()..])
    } else {
        format!("{} The required dose is 500 mg.", s)
    }
}

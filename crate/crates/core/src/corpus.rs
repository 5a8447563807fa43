//! Question ingestion, difficulty probing, verified reasoning generation,
//! and step segmentation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{ForgeError, Result};
use crate::io;
use crate::providers::prompts::{self, options_block};
use crate::providers::{ProviderPool, ProviderRegistry, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetClass {
    /// Ships with expert-written reasoning steps.
    A,
    /// Answer only; reasoning is generated.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceSplit {
    Train,
    Test,
    Val,
    Dev,
}

impl fmt::Display for SourceSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceSplit::Train => "train",
            SourceSplit::Test => "test",
            SourceSplit::Val => "val",
            SourceSplit::Dev => "dev",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub instance_id: String,
    pub question: String,
    #[serde(default)]
    pub options: Vec<AnswerOption>,
    pub gold_answer: String,
    pub dataset_class: DatasetClass,
    pub dataset_name: String,
    pub source_split: SourceSplit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub long_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_text: Option<String>,
}

impl QuestionRecord {
    pub fn option_labels(&self) -> Vec<String> {
        self.options.iter().map(|o| o.label.clone()).collect()
    }

    /// Text of the gold option, or the gold answer itself without options.
    pub fn gold_text(&self) -> &str {
        self.options
            .iter()
            .find(|o| o.label == self.gold_answer)
            .map(|o| o.text.as_str())
            .unwrap_or(&self.gold_answer)
    }

    pub fn options_tuples(&self) -> Vec<(String, String)> {
        self.options.iter().map(|o| (o.label.clone(), o.text.clone())).collect()
    }
}

/// Maps canonical field names to source keys, with constant fallbacks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaMap {
    /// canonical name -> key in the source line
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
    /// canonical name -> value used when the source has none
    #[serde(default)]
    pub defaults: BTreeMap<String, Value>,
}

impl SchemaMap {
    fn lookup<'a>(&'a self, obj: &'a Map<String, Value>, field: &str) -> Option<&'a Value> {
        let key = self.fields.get(field).map(String::as_str).unwrap_or(field);
        obj.get(key)
            .filter(|v| !v.is_null())
            .or_else(|| self.defaults.get(field))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Duplicate {
    pub line: usize,
    pub instance_id: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub records: Vec<QuestionRecord>,
    pub rejections: Vec<Rejection>,
    pub duplicates: Vec<Duplicate>,
}

fn text_of(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()).filter(|s| !s.is_empty()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_options(v: &Value) -> std::result::Result<Vec<AnswerOption>, String> {
    let letter = |i: usize| ((b'A' + (i % 26) as u8) as char).to_string();
    match v {
        Value::Object(map) => Ok(map
            .iter()
            .map(|(k, t)| AnswerOption {
                label: k.clone(),
                text: text_of(t).unwrap_or_default(),
            })
            .collect()),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, item)| match item {
                Value::String(s) => Ok(AnswerOption {
                    label: letter(i),
                    text: s.clone(),
                }),
                Value::Array(pair) if pair.len() == 2 => Ok(AnswerOption {
                    label: text_of(&pair[0]).ok_or("option label not text")?,
                    text: text_of(&pair[1]).unwrap_or_default(),
                }),
                Value::Object(o) => Ok(AnswerOption {
                    label: o.get("label").and_then(text_of).ok_or("option without label")?,
                    text: o.get("text").and_then(text_of).unwrap_or_default(),
                }),
                _ => Err("unrecognized option entry".to_string()),
            })
            .collect(),
        _ => Err("options must be a list or a map".to_string()),
    }
}

fn parse_enum<T: for<'de> Deserialize<'de>>(v: &Value, field: &str) -> std::result::Result<T, String> {
    let s = text_of(v).ok_or_else(|| format!("{field} is not text"))?;
    let candidates = [s.clone(), s.to_lowercase(), s.to_uppercase()];
    candidates
        .iter()
        .find_map(|c| serde_json::from_value(Value::String(c.clone())).ok())
        .ok_or_else(|| format!("invalid {field} '{s}'"))
}

/// Converts one source object into a record, or a rejection reason.
pub fn map_record(obj: &Map<String, Value>, schema: &SchemaMap) -> std::result::Result<QuestionRecord, String> {
    let required = |f: &str| -> std::result::Result<&Value, String> {
        schema.lookup(obj, f).ok_or_else(|| format!("missing {f}"))
    };
    let req_text = |f: &str| -> std::result::Result<String, String> {
        text_of(required(f)?).ok_or_else(|| format!("missing {f}"))
    };
    let instance_id = req_text("instance_id")?;
    let question = req_text("question")?;
    let gold_answer = req_text("gold_answer")?;
    let dataset_class: DatasetClass = parse_enum(required("dataset_class")?, "dataset_class")?;
    let dataset_name = req_text("dataset_name")?;
    let source_split: SourceSplit = parse_enum(required("source_split")?, "source_split")?;
    let options = match schema.lookup(obj, "options") {
        Some(v) => parse_options(v)?,
        None => Vec::new(),
    };
    let long_answer = schema.lookup(obj, "long_answer").and_then(text_of);
    let reasoning_text = schema.lookup(obj, "reasoning_text").and_then(text_of);

    if !options.is_empty() {
        let hits = options.iter().filter(|o| o.label == gold_answer).count();
        if hits != 1 {
            return Err(format!("gold_answer '{gold_answer}' matches {hits} option labels"));
        }
    }
    if dataset_class == DatasetClass::A && reasoning_text.is_none() {
        return Err("class A record without reasoning_text".to_string());
    }
    Ok(QuestionRecord {
        instance_id,
        question,
        options,
        gold_answer,
        dataset_class,
        dataset_name,
        source_split,
        long_answer,
        reasoning_text,
    })
}

/// Reads a JSONL corpus. Bad lines are rejected individually; the first
/// occurrence of an id wins.
pub fn ingest_corpus(path: &Path, schema: &SchemaMap) -> Result<IngestReport> {
    let (lines, bad) = io::read_jsonl_lenient::<Value>(path)?;
    let mut report = IngestReport::default();
    for e in bad {
        report.rejections.push(Rejection {
            line: e.line,
            reason: format!("malformed line: {}", e.message),
        });
    }
    let mut seen: HashSet<String> = HashSet::new();
    for (line, value) in lines {
        let Value::Object(obj) = value else {
            report.rejections.push(Rejection {
                line,
                reason: "line is not an object".into(),
            });
            continue;
        };
        match map_record(&obj, schema) {
            Ok(rec) => {
                if seen.insert(rec.instance_id.clone()) {
                    report.records.push(rec);
                } else {
                    tracing::warn!(line, id = %rec.instance_id, "duplicate instance id");
                    report.duplicates.push(Duplicate {
                        line,
                        instance_id: rec.instance_id,
                    });
                }
            }
            Err(reason) => report.rejections.push(Rejection { line, reason }),
        }
    }
    report.rejections.sort_by_key(|r| r.line);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DifficultyConfig {
    pub samples_k: u32,
    pub temperature: f64,
    pub pass_threshold: f64,
    /// Probe records that already carry reasoning (class A) as well.
    pub probe_class_a: bool,
}

impl Default for DifficultyConfig {
    fn default() -> Self {
        DifficultyConfig {
            samples_k: 8,
            temperature: 0.7,
            pass_threshold: 0.5,
            probe_class_a: true,
        }
    }
}

impl DifficultyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_k < 1 {
            return Err(ForgeError::Config("samples_k must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ForgeError::Config("temperature must lie in [0, 2]".into()));
        }
        if !(0.0..=1.0).contains(&self.pass_threshold) {
            return Err(ForgeError::Config("pass threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Case-folded alphanumerics only.
pub fn normalize_answer(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn boxed_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\\boxed\{([^{}]*)\}").expect("static regex"))
}

fn answer_is_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer\s*(?:is|:)\s*:?\s*([^\n]+)").expect("static regex"))
}

/// Final answer in a free-text reply: the last `\boxed{..}`, else the last
/// "answer is ..." phrase.
pub fn extract_answer(text: &str) -> Option<String> {
    if let Some(c) = boxed_re().captures_iter(text).last() {
        return Some(c[1].trim().to_string()).filter(|s| !s.is_empty());
    }
    let c = answer_is_re().captures_iter(text).last()?;
    let raw = c[1].trim().trim_end_matches(['.', '!']).trim();
    Some(raw.to_string()).filter(|s| !s.is_empty())
}

/// Resolves an extracted answer to an option label when options exist.
pub fn resolve_answer(answer: &str, options: &[AnswerOption]) -> String {
    let norm = normalize_answer(answer);
    if options.is_empty() {
        return norm;
    }
    if let Some(o) = options.iter().find(|o| normalize_answer(&o.label) == norm) {
        return normalize_answer(&o.label);
    }
    if let Some(o) = options
        .iter()
        .find(|o| !o.text.is_empty() && normalize_answer(&o.text) == norm)
    {
        return normalize_answer(&o.label);
    }
    // "B) text" or "(B) text"
    let head: String = answer
        .trim()
        .trim_start_matches('(')
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or_default()
        .to_string();
    if let Some(o) = options
        .iter()
        .find(|o| normalize_answer(&o.label) == normalize_answer(&head))
    {
        return normalize_answer(&o.label);
    }
    norm
}

pub fn answer_matches(answer: &str, record: &QuestionRecord) -> bool {
    resolve_answer(answer, &record.options) == resolve_answer(&record.gold_answer, &record.options)
}

/// Empirical pass rate over exactly `samples_k` probe calls. A failed call
/// counts as an incorrect sample.
pub fn estimate_pass_rate(
    record: &QuestionRecord,
    cfg: &DifficultyConfig,
    registry: &ProviderRegistry,
    probe: &str,
) -> Result<f64> {
    cfg.validate()?;
    let asset = prompts::asset("probe_answer")?;
    let options = options_block(&record.options_tuples());
    let base = asset
        .request(
            TaskKind::ProbeAnswer,
            &[("question", &record.question), ("options", &options)],
        )
        .temperature(cfg.temperature)
        .structured(false)
        .payload(json!({
            "instance_id": record.instance_id,
            "gold_answer": record.gold_answer,
            "option_labels": record.option_labels(),
        }));
    let mut correct = 0u32;
    for k in 0..cfg.samples_k {
        let req = base.clone().sample(k);
        match registry.chat(probe, &req) {
            Ok(reply) => {
                if extract_answer(&reply.text).is_some_and(|a| answer_matches(&a, record)) {
                    correct += 1;
                }
            }
            Err(e) => tracing::warn!(id = %record.instance_id, sample = k, "probe failed: {e}"),
        }
    }
    Ok(f64::from(correct) / f64::from(cfg.samples_k))
}

/// Pass rates for many records, computed in parallel.
pub fn estimate_pass_rates(
    records: &[QuestionRecord],
    cfg: &DifficultyConfig,
    registry: &ProviderRegistry,
    probe: &str,
) -> Result<BTreeMap<String, f64>> {
    records
        .par_iter()
        .filter(|r| cfg.probe_class_a || r.dataset_class == DatasetClass::B)
        .map(|r| Ok((r.instance_id.clone(), estimate_pass_rate(r, cfg, registry, probe)?)))
        .collect()
}

/// Keeps records with pass rate at most the threshold, in input order.
pub fn difficulty_filter(
    records: &[QuestionRecord],
    rates: &HashMap<String, f64>,
    cfg: &DifficultyConfig,
) -> Result<Vec<QuestionRecord>> {
    let mut kept = Vec::new();
    for r in records {
        if r.dataset_class == DatasetClass::A && !cfg.probe_class_a {
            kept.push(r.clone());
            continue;
        }
        let p = *rates
            .get(&r.instance_id)
            .ok_or_else(|| ForgeError::MissingRate(r.instance_id.clone()))?;
        if p <= cfg.pass_threshold {
            kept.push(r.clone());
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub steps: Vec<String>,
    pub producer: String,
    /// 1-based attempt that succeeded.
    pub attempt_index: u32,
}

fn trace_steps(v: &Value) -> Option<Vec<String>> {
    let steps: Vec<String> = match v.get("steps")? {
        Value::Array(a) => a
            .iter()
            .filter_map(Value::as_str)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        Value::String(s) => segment_steps(s),
        _ => return None,
    };
    Some(steps).filter(|s| !s.is_empty())
}

/// Cycles through the pool until a reply parses and reaches the gold
/// answer. Attempt `t` uses member `((t-1) mod |pool|) + 1`.
pub fn rejection_sample_reasoning(
    record: &QuestionRecord,
    pool: &ProviderPool,
    registry: &ProviderRegistry,
    max_attempts: u32,
) -> Result<ReasoningTrace> {
    if record.dataset_class != DatasetClass::B {
        return Err(ForgeError::invalid(format!(
            "{}: reasoning is generated only for class B records",
            record.instance_id
        )));
    }
    pool.validate()?;
    let asset = prompts::asset("reason")?;
    let options = options_block(&record.options_tuples());
    let mut last_failure = String::from("no attempts made");
    for t in 1..=max_attempts {
        let provider = pool.member_for_attempt(t as usize);
        let req = asset
            .request(
                TaskKind::Reason,
                &[("question", &record.question), ("options", &options)],
            )
            .temperature(0.7)
            .sample(t)
            .payload(json!({
                "instance_id": record.instance_id,
                "gold_answer": record.gold_answer,
                "gold_text": record.gold_text(),
                "option_labels": record.option_labels(),
            }));
        let reply = match registry.chat(provider, &req) {
            Ok(r) => r,
            Err(e) => {
                last_failure = format!("attempt {t} ({provider}): {e}");
                continue;
            }
        };
        let Some(parsed) = reply.structured.filter(|_| !reply.parse_failed) else {
            last_failure = format!("attempt {t} ({provider}): unparseable output");
            continue;
        };
        let Some(steps) = trace_steps(&parsed) else {
            last_failure = format!("attempt {t} ({provider}): no steps");
            continue;
        };
        let answer = parsed
            .get("answer")
            .and_then(text_of)
            .or_else(|| steps.last().and_then(|s| extract_answer(s)));
        match answer {
            Some(a) if answer_matches(&a, record) => {
                return Ok(ReasoningTrace {
                    steps,
                    producer: provider.to_string(),
                    attempt_index: t,
                })
            }
            Some(a) => last_failure = format!("attempt {t} ({provider}): wrong answer '{a}'"),
            None => last_failure = format!("attempt {t} ({provider}): no final answer"),
        }
    }
    Err(ForgeError::Unverifiable {
        id: record.instance_id.clone(),
        reason: last_failure,
    })
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?mi)^[ \t]*(?:step[ \t]+\d+[ \t]*[:.)][ \t]*|\d+[.)][ \t]+)").expect("static regex")
    })
}

/// Splits reasoning text on enumerated markers ("1." / "2)" / "Step 3:")
/// at line starts. Text before the first marker becomes its own step;
/// text without markers is a single step.
pub fn segment_steps(text: &str) -> Vec<String> {
    let marks: Vec<(usize, usize)> = marker_re().find_iter(text).map(|m| (m.start(), m.end())).collect();
    if marks.is_empty() {
        let t = text.trim();
        return if t.is_empty() { Vec::new() } else { vec![t.to_string()] };
    }
    let mut steps = Vec::with_capacity(marks.len() + 1);
    let preamble = text[..marks[0].0].trim();
    if !preamble.is_empty() {
        steps.push(preamble.to_string());
    }
    for (i, &(_, body_start)) in marks.iter().enumerate() {
        let end = marks.get(i + 1).map_or(text.len(), |m| m.0);
        let body = text[body_start..end].trim();
        if !body.is_empty() {
            steps.push(body.to_string());
        }
    }
    steps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::{FnProvider, ScriptedProvider};
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    fn record() -> QuestionRecord {
        QuestionRecord {
            instance_id: "q1".into(),
            question: "Which?".into(),
            options: vec![
                AnswerOption {
                    label: "A".into(),
                    text: "Asthma".into(),
                },
                AnswerOption {
                    label: "B".into(),
                    text: "Pneumonia".into(),
                },
            ],
            gold_answer: "B".into(),
            dataset_class: DatasetClass::B,
            dataset_name: "Demo".into(),
            source_split: SourceSplit::Train,
            long_answer: None,
            reasoning_text: None,
        }
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(segment_steps("1. A\n2. B"), vec!["A", "B"]);
        assert_eq!(segment_steps("Step 1: A\nStep 2: B\nStep 3: C").len(), 3);
        assert_eq!(segment_steps("just prose here"), vec!["just prose here"]);
        assert_eq!(segment_steps("Intro\n1) x\n2) y"), vec!["Intro", "x", "y"]);
        assert_eq!(segment_steps("Dose is\n1.5 mg daily"), vec!["Dose is\n1.5 mg daily"]);
    }

    #[test]
    fn answer_extraction() {
        assert_eq!(extract_answer("so \\boxed{A} then \\boxed{C}").as_deref(), Some("C"));
        assert_eq!(extract_answer("The answer is B.").as_deref(), Some("B"));
        assert_eq!(extract_answer("no idea"), None);
        let r = record();
        assert!(answer_matches("b", &r));
        assert!(answer_matches("Pneumonia", &r));
        assert!(answer_matches("(B) Pneumonia", &r));
        assert!(!answer_matches("A", &r));
    }

    fn always(answer: &'static str) -> ProviderRegistry {
        ProviderRegistry::new().with(Arc::new(FnProvider::new("probe", move |_| {
            Ok(format!("The answer is {answer}"))
        })))
    }

    #[test]
    fn pass_rate_counts_correct_samples() {
        let cfg = DifficultyConfig::default();
        assert_eq!(estimate_pass_rate(&record(), &cfg, &always("B"), "probe").unwrap(), 1.0);
        assert_eq!(estimate_pass_rate(&record(), &cfg, &always("A"), "probe").unwrap(), 0.0);
        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let reg = ProviderRegistry::new().with(Arc::new(FnProvider::new("probe", move |req| {
            c.fetch_add(1, Ordering::SeqCst);
            Ok(if req.sample_index % 2 == 0 {
                "The answer is B"
            } else {
                "The answer is A"
            }
            .into())
        })));
        assert_eq!(estimate_pass_rate(&record(), &cfg, &reg, "probe").unwrap(), 0.5);
        assert_eq!(calls.load(Ordering::SeqCst), 8);
    }

    #[test]
    fn probe_failure_counts_as_incorrect() {
        let reg = ProviderRegistry::new()
            .with_retries(0)
            .with(Arc::new(FnProvider::new("probe", |req| {
                if req.sample_index == 0 {
                    Err(crate::providers::ProviderError::Transport("down".into()))
                } else {
                    Ok("The answer is B".into())
                }
            })));
        let p = estimate_pass_rate(&record(), &DifficultyConfig::default(), &reg, "probe").unwrap();
        assert_eq!(p, 7.0 / 8.0);
    }

    #[test]
    fn filter_boundaries() {
        let cfg = DifficultyConfig::default();
        let mut recs = vec![record(), record(), record()];
        recs[1].instance_id = "q2".into();
        recs[2].instance_id = "q3".into();
        let rates: HashMap<String, f64> = [("q1".into(), 0.5), ("q2".into(), 0.625), ("q3".into(), 0.0)].into();
        let kept = difficulty_filter(&recs, &rates, &cfg).unwrap();
        let ids: Vec<_> = kept.iter().map(|r| r.instance_id.as_str()).collect();
        assert_eq!(ids, vec!["q1", "q3"]);
        let partial: HashMap<String, f64> = [("q1".into(), 0.5)].into();
        assert!(matches!(
            difficulty_filter(&recs, &partial, &cfg),
            Err(ForgeError::MissingRate(id)) if id == "q2"
        ));
    }

    fn reply(answer: &str) -> String {
        json!({"steps": ["x leads to y", format!("so \\boxed{{{answer}}}")], "answer": answer}).to_string()
    }

    #[test]
    fn rejection_sampling_cycles_the_pool() {
        let pool = ProviderPool::new(["m1", "m2", "m3"]).unwrap();
        let reg = ProviderRegistry::new()
            .with(Arc::new(ScriptedProvider::replying("m1", [reply("A")])))
            .with(Arc::new(ScriptedProvider::replying("m2", ["not json".to_string()])))
            .with(Arc::new(ScriptedProvider::replying("m3", [reply("B")])));
        let t = rejection_sample_reasoning(&record(), &pool, &reg, 5).unwrap();
        assert_eq!((t.attempt_index, t.producer.as_str()), (3, "m3"));
        assert_eq!(t.steps.len(), 2);
    }

    #[test]
    fn rejection_sampling_gives_up() {
        let pool = ProviderPool::new(["m1"]).unwrap();
        let reg = ProviderRegistry::new().with(Arc::new(FnProvider::new("m1", |_| Ok(reply("A")))));
        match rejection_sample_reasoning(&record(), &pool, &reg, 5) {
            Err(ForgeError::Unverifiable { reason, .. }) => assert!(reason.contains("attempt 5")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_and_dedups() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let line = |id: &str| {
            json!({"instance_id": id, "question": "q", "gold_answer": "A",
                   "options": {"A": "x", "B": "y"}, "dataset_class": "B",
                   "dataset_name": "D", "source_split": "train"})
            .to_string()
        };
        let missing = json!({"instance_id": "z", "question": "q", "dataset_class": "B",
                             "dataset_name": "D", "source_split": "train"});
        std::fs::write(
            &p,
            format!("{}\n{}\n{}\n{}\n{{oops\n", line("a"), line("b"), line("a"), missing),
        )
        .unwrap();
        let rep = ingest_corpus(&p, &SchemaMap::default()).unwrap();
        assert_eq!(rep.records.len(), 2);
        assert_eq!(
            rep.duplicates,
            vec![Duplicate {
                line: 3,
                instance_id: "a".into()
            }]
        );
        assert_eq!(rep.rejections.len(), 2);
        assert_eq!(rep.rejections[0].reason, "missing gold_answer");
        assert_eq!(rep.rejections[0].line, 4);
        assert_eq!(rep.rejections[1].line, 5);
    }

    #[test]
    fn schema_map_renames_and_defaults() {
        let schema = SchemaMap {
            fields: [("question".to_string(), "stem".to_string())].into(),
            defaults: [
                ("dataset_name".to_string(), json!("Demo")),
                ("dataset_class".to_string(), json!("B")),
                ("source_split".to_string(), json!("test")),
            ]
            .into(),
        };
        let obj = json!({"instance_id": "1", "stem": "why", "gold_answer": "yes"});
        let rec = map_record(obj.as_object().unwrap(), &schema).unwrap();
        assert_eq!(rec.question, "why");
        assert_eq!(rec.source_split, SourceSplit::Test);
    }

    proptest::proptest! {
        #[test]
        fn segmentation_round_trips(steps in proptest::collection::vec("[a-z][a-z ,]{0,30}[a-z]", 1..8)) {
            let text: String = steps
                .iter()
                .enumerate()
                .map(|(i, s)| format!("{}. {}\n", i + 1, s))
                .collect();
            proptest::prop_assert_eq!(segment_steps(&text), steps);
        }

        #[test]
        fn raising_threshold_never_shrinks(rates in proptest::collection::vec(0u32..=8, 1..20), lo in 0u32..=8, hi in 0u32..=8) {
            let (lo, hi) = (lo.min(hi) as f64 / 8.0, lo.max(hi) as f64 / 8.0);
            let recs: Vec<QuestionRecord> = (0..rates.len())
                .map(|i| QuestionRecord { instance_id: format!("q{i}"), ..record() })
                .collect();
            let map: HashMap<String, f64> = rates
                .iter()
                .enumerate()
                .map(|(i, r)| (format!("q{i}"), *r as f64 / 8.0))
                .collect();
            let a = difficulty_filter(&recs, &map, &DifficultyConfig { pass_threshold: lo, ..Default::default() }).unwrap();
            let b = difficulty_filter(&recs, &map, &DifficultyConfig { pass_threshold: hi, ..Default::default() }).unwrap();
            proptest::prop_assert!(a.iter().all(|r| b.contains(r)));
        }
    }
}

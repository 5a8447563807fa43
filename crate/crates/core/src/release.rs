//! Canonical export records, per-type statistics, and the train/test split.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blueprint::StepAnnotation;
use crate::corpus::{AnswerOption, DatasetClass, QuestionRecord, SourceSplit};
use crate::error::{ForgeError, Result};
use crate::inject::{SeverityLevel, Variant};
use crate::taxonomy::ErrorCode;
use crate::verify::AnswerChanged;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Train stays train; test, val, and dev become test.
    pub fn from_source(s: SourceSplit) -> Self {
        match s {
            SourceSplit::Train => Split::Train,
            SourceSplit::Test | SourceSplit::Val | SourceSplit::Dev => Split::Test,
        }
    }
}

/// One released variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub instance_id: String,
    pub variant_id: String,
    pub dataset_name: String,
    pub dataset_class: DatasetClass,
    pub split: Split,
    pub source_split: SourceSplit,
    #[serde(default)]
    pub pass_rate: Option<f64>,
    pub question: String,
    #[serde(default)]
    pub options: Vec<AnswerOption>,
    pub gold_answer: String,
    pub original_steps: Vec<String>,
    pub step_annotations: Vec<StepAnnotation>,
    pub corrupted_steps: Vec<String>,
    pub error_codes: Vec<ErrorCode>,
    pub error_step_indices: BTreeMap<ErrorCode, Vec<usize>>,
    pub severity_score: f64,
    pub severity_level: SeverityLevel,
    pub is_composite: bool,
    pub sample_weight: f64,
    pub answer_changed: AnswerChanged,
    pub producer: String,
}

impl CanonicalRecord {
    pub fn assemble(
        question: &QuestionRecord,
        pass_rate: Option<f64>,
        original_steps: &[String],
        annotations: &[StepAnnotation],
        variant: &Variant,
        answer_changed: AnswerChanged,
    ) -> Self {
        CanonicalRecord {
            instance_id: question.instance_id.clone(),
            variant_id: variant.variant_id.clone(),
            dataset_name: question.dataset_name.clone(),
            dataset_class: question.dataset_class,
            split: Split::from_source(question.source_split),
            source_split: question.source_split,
            pass_rate,
            question: question.question.clone(),
            options: question.options.clone(),
            gold_answer: question.gold_answer.clone(),
            original_steps: original_steps.to_vec(),
            step_annotations: annotations.to_vec(),
            corrupted_steps: variant.corrupted_steps.clone(),
            error_codes: variant.error_codes.iter().copied().collect(),
            error_step_indices: variant
                .error_step_indices
                .iter()
                .map(|(c, s)| (*c, s.iter().copied().collect()))
                .collect(),
            severity_score: variant.severity_score,
            severity_level: variant.severity_level,
            is_composite: variant.is_composite,
            sample_weight: variant.sample_weight,
            answer_changed,
            producer: variant.producer.clone(),
        }
    }

    /// Distinct erroneous positions over all codes.
    pub fn error_positions(&self) -> BTreeSet<usize> {
        self.error_step_indices.values().flatten().copied().collect()
    }

    /// Code used for stratification: the first in taxonomy order.
    pub fn primary_code(&self) -> Option<ErrorCode> {
        self.error_codes.iter().min().copied()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.error_codes.is_empty() {
            return Err("no error codes".into());
        }
        let keys: Vec<ErrorCode> = self.error_step_indices.keys().copied().collect();
        let mut codes = self.error_codes.clone();
        codes.sort();
        if keys != codes {
            return Err("error codes and index map disagree".into());
        }
        let n = self.corrupted_steps.len();
        if self.error_positions().iter().any(|i| !(1..=n).contains(i)) {
            return Err("error index outside the corrupted chain".into());
        }
        if self.is_composite && !(2..=3).contains(&self.error_codes.len()) {
            return Err("composite variants carry two or three codes".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub instances: usize,
    pub test_instances: usize,
    pub avg_steps: f64,
    pub avg_error_steps: f64,
    pub avg_first_error: f64,
    pub avg_question_chars: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub overall: Option<BucketStats>,
    /// A variant counts toward every code it carries; empty buckets are absent.
    pub by_code: BTreeMap<ErrorCode, BucketStats>,
}

fn bucket<'a>(records: impl Iterator<Item = &'a CanonicalRecord>) -> Option<BucketStats> {
    let (mut n, mut test, mut steps, mut errs, mut first, mut qlen) = (0usize, 0usize, 0.0, 0.0, 0.0, 0.0);
    let mut with_first = 0usize;
    for r in records {
        n += 1;
        test += usize::from(r.split == Split::Test);
        steps += r.corrupted_steps.len() as f64;
        let pos = r.error_positions();
        errs += pos.len() as f64;
        if let Some(f) = pos.first() {
            first += *f as f64;
            with_first += 1;
        }
        qlen += r.question.chars().count() as f64;
    }
    (n > 0).then(|| BucketStats {
        instances: n,
        test_instances: test,
        avg_steps: steps / n as f64,
        avg_error_steps: errs / n as f64,
        avg_first_error: if with_first == 0 {
            0.0
        } else {
            first / with_first as f64
        },
        avg_question_chars: qlen / n as f64,
    })
}

pub fn compute_statistics(records: &[CanonicalRecord]) -> DatasetStats {
    let mut by_code = BTreeMap::new();
    for code in crate::taxonomy::ALL_CODES {
        if let Some(b) = bucket(records.iter().filter(|r| r.error_codes.contains(&code))) {
            by_code.insert(code, b);
        }
    }
    DatasetStats {
        overall: bucket(records.iter()),
        by_code,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPolicy {
    pub protected_datasets: BTreeSet<String>,
    pub target_test_fraction: f64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy {
            protected_datasets: ["MedQA-USMLE", "MedMCQA"].map(String::from).into(),
            target_test_fraction: 0.486,
        }
    }
}

impl SplitPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_test_fraction > 0.0 && self.target_test_fraction < 1.0) {
            return Err(ForgeError::Config(
                "test fraction must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }

    pub fn is_protected(&self, r: &CanonicalRecord) -> bool {
        self.protected_datasets.contains(&r.dataset_name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub target_test: usize,
    pub achieved_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub train: Vec<CanonicalRecord>,
    pub test: Vec<CanonicalRecord>,
    /// Records moved from train to test.
    pub reassigned: usize,
    pub shortfall: Option<Shortfall>,
}

/// Per-stratum quotas summing to `need`, proportional to `sizes`, with
/// leftover units going to the largest remainders (ties to the earlier
/// stratum). Quotas never exceed the stratum size.
pub fn largest_remainder(sizes: &[usize], need: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let need = need.min(total);
    let mut quotas: Vec<usize> = sizes.iter().map(|s| s * need / total).collect();
    let mut rem: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, s)| ((s * need) % total, i)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = need - quotas.iter().sum::<usize>();
    for (_, i) in rem {
        if left == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            left -= 1;
        }
    }
    quotas
}

/// Source-split assignment, topped up to the target test share by moving
/// whole questions from non-protected training data, stratified by
/// dataset and primary error code. Protected training records never move.
pub fn split(records: Vec<CanonicalRecord>, policy: &SplitPolicy, seed: u64) -> Result<SplitOutcome> {
    policy.validate()?;
    let n = records.len();
    let mut assigned: Vec<Split> = records.iter().map(|r| Split::from_source(r.source_split)).collect();
    let target = (policy.target_test_fraction * n as f64).round() as usize;
    let current = assigned.iter().filter(|s| **s == Split::Test).count();
    let mut reassigned = 0;

    if current < target {
        let need = target - current;
        // movable questions: every variant non-protected and in train
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            groups.entry(r.instance_id.as_str()).or_default().push(i);
        }
        let mut strata: BTreeMap<(String, String), Vec<Vec<usize>>> = BTreeMap::new();
        for members in groups.into_values() {
            let movable = members
                .iter()
                .all(|&i| assigned[i] == Split::Train && !policy.is_protected(&records[i]));
            if !movable {
                continue;
            }
            let lead = members
                .iter()
                .min_by(|a, b| records[**a].variant_id.cmp(&records[**b].variant_id))
                .copied()
                .expect("groups are non-empty");
            let key = (
                records[lead].dataset_name.clone(),
                records[lead].primary_code().map_or("", ErrorCode::as_str).to_string(),
            );
            strata.entry(key).or_default().push(members);
        }
        let sizes: Vec<usize> = strata.values().map(|gs| gs.iter().map(Vec::len).sum()).collect();
        let quotas = largest_remainder(&sizes, need);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (mut groups, quota) in strata.into_values().zip(quotas) {
            groups.shuffle(&mut rng);
            let mut taken = 0;
            for g in groups {
                if taken >= quota {
                    break;
                }
                taken += g.len();
                for i in g {
                    assigned[i] = Split::Test;
                    reassigned += 1;
                }
            }
        }
    }

    let achieved = assigned.iter().filter(|s| **s == Split::Test).count();
    let shortfall = (achieved < target).then_some(Shortfall {
        target_test: target,
        achieved_test: achieved,
    });
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (mut r, s) in records.into_iter().zip(assigned) {
        r.split = s;
        match s {
            Split::Train => train.push(r),
            Split::Test => test.push(r),
        }
    }
    Ok(SplitOutcome {
        train,
        test,
        reassigned,
        shortfall,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::blueprint::SafetyLevel;

    pub(crate) fn record(id: &str, dataset: &str, source: SourceSplit, code: ErrorCode) -> CanonicalRecord {
        CanonicalRecord {
            instance_id: id.into(),
            variant_id: format!("{id}::v1"),
            dataset_name: dataset.into(),
            dataset_class: DatasetClass::B,
            split: Split::from_source(source),
            source_split: source,
            pass_rate: Some(0.0),
            question: "q".repeat(10),
            options: vec![],
            gold_answer: "A".into(),
            original_steps: vec!["s".into(); 10],
            step_annotations: vec![],
            corrupted_steps: vec!["s".into(); 10],
            error_codes: vec![code],
            error_step_indices: BTreeMap::from([(code, vec![3, 5])]),
            severity_score: 0.5,
            severity_level: SafetyLevel::Major,
            is_composite: false,
            sample_weight: 1.0,
            answer_changed: AnswerChanged::False,
            producer: "m".into(),
        }
    }

    #[test]
    fn stats_of_one_chain() {
        let s = compute_statistics(&[record("a", "PubMedQA", SourceSplit::Train, ErrorCode::R1)]);
        let o = s.overall.unwrap();
        assert_eq!((o.avg_steps, o.avg_error_steps, o.avg_first_error), (10.0, 2.0, 3.0));
        assert!(s.by_code.contains_key(&ErrorCode::R1));
        assert!(!s.by_code.contains_key(&ErrorCode::E5));
        assert!(compute_statistics(&[]).overall.is_none());
    }

    #[test]
    fn quotas_sum_and_respect_sizes() {
        assert_eq!(largest_remainder(&[5, 3, 2], 5), vec![3, 1, 1]);
        assert_eq!(largest_remainder(&[1, 1], 5), vec![1, 1]);
        assert_eq!(largest_remainder(&[], 3), Vec::<usize>::new());
    }

    #[test]
    fn protection_dominates() {
        let rs: Vec<_> = (0..6)
            .map(|i| record(&format!("p{i}"), "MedQA-USMLE", SourceSplit::Train, ErrorCode::R1))
            .collect();
        let policy = SplitPolicy {
            target_test_fraction: 0.5,
            ..Default::default()
        };
        let out = split(rs, &policy, 1).unwrap();
        assert!(out.test.is_empty());
        assert_eq!(
            out.shortfall,
            Some(Shortfall {
                target_test: 3,
                achieved_test: 0
            })
        );
    }

    #[test]
    fn tops_up_from_unprotected_train() {
        let mut rs = Vec::new();
        for i in 0..10 {
            rs.push(record(&format!("m{i}"), "MedMCQA", SourceSplit::Train, ErrorCode::R1));
            rs.push(record(&format!("u{i}"), "PubMedQA", SourceSplit::Train, ErrorCode::E4));
        }
        rs.push(record("t0", "MedMCQA", SourceSplit::Dev, ErrorCode::R1));
        let policy = SplitPolicy::default();
        let a = split(rs.clone(), &policy, 7).unwrap();
        let b = split(rs, &policy, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.test.len(), (0.486f64 * 21.0).round() as usize);
        assert!(a
            .test
            .iter()
            .all(|r| !(r.dataset_name == "MedMCQA" && r.source_split == SourceSplit::Train)));
        assert_eq!(a.train.len() + a.test.len(), 21);
    }
}

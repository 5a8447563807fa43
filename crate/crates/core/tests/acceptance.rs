//! Acceptance criteria, one line per criterion. Every check compares the
//! library against an oracle written here from first principles.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use forge_core::blueprint::SafetyLevel;
use forge_core::config::{PipelineConfig, ProviderSpec};
use forge_core::corpus::{DatasetClass, SourceSplit};
use forge_core::ern::{vote_fuse, Triplet, VotingConfig};
use forge_core::eval::metrics::Population;
use forge_core::eval::verifier::{run_verifier, Strategy, Trajectory};
use forge_core::eval::{build_hard_subset, compute_metrics, parse_generative, EvalChain, Protocol, StepPrediction};
use forge_core::graph::{bidirectional_reach, transitive_reduction};
use forge_core::inject::sampling::{default_target, l1_distance, SamplingState, DEFAULT_EPSILON};
use forge_core::inject::severity::{discretize, severity_score};
use forge_core::inject::{SeverityConfig, TargetProfile, Variant};
use forge_core::io;
use forge_core::pipeline::run_construction;
use forge_core::providers::mock::{FixtureEntry, FnProvider};
use forge_core::providers::simulate::{synthetic_corpus, SimulatedProvider};
use forge_core::providers::{ChatProvider, ProviderRegistry, SimilarityCache};
use forge_core::release::{compute_statistics, CanonicalRecord, Split, SplitPolicy};
use forge_core::taxonomy::{Category, ErrorCode, ALL_CODES, TAXONOMY};
use forge_core::verify::{
    align_steps, changed_positions, diff_verify, normalize_step, AnswerChanged, DiscardReason, VerifyConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, Check); 11] = [
        ("metric-identity", Duration::from_secs(1), metric_identity),
        ("degenerate-predictor", Duration::from_secs(1), degenerate_predictor),
        ("taxonomy-table", Duration::from_secs(1), taxonomy_table),
        ("severity-table", Duration::from_secs(1), severity_table),
        ("diff-oracle", Duration::from_secs(10), diff_oracle),
        ("graph-oracles", Duration::from_secs(30), graph_oracles),
        ("voting", Duration::from_secs(5), voting),
        ("sampler-convergence", Duration::from_secs(20), sampler_convergence),
        ("end-to-end", Duration::from_secs(60), end_to_end),
        ("verifier-strategies", Duration::from_secs(5), verifier_strategies),
        ("hard-subset", Duration::from_secs(2), hard_subset),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if took <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget {budget:?}")),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!(
            "{} {name:<22} {detail} [{:.3}s / {}s]",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of {} criteria passed", 11 - failed, 11);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- metrics

fn chain(id: &str, erroneous: Vec<bool>) -> EvalChain {
    EvalChain {
        chain_id: id.to_string(),
        erroneous,
        codes: BTreeSet::from([ErrorCode::R1]),
    }
}

fn prediction(id: &str, predicted_erroneous: Vec<bool>) -> StepPrediction {
    StepPrediction {
        chain_id: id.to_string(),
        protocol: Protocol::Generative,
        predicted_erroneous,
    }
}

/// Harmonic mean of precision and recall, 0 when undefined.
fn oracle_f1(hit: f64, false_alarm: f64, miss: f64) -> f64 {
    let precision = if hit + false_alarm > 0.0 {
        hit / (hit + false_alarm)
    } else {
        0.0
    };
    let recall = if hit + miss > 0.0 { hit / (hit + miss) } else { 0.0 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn metric_identity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for config in 0..200 {
        let chains_n = rng.random_range(1..=6);
        let mut chains = Vec::new();
        let mut preds = Vec::new();
        let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
        for c in 0..chains_n {
            let len = rng.random_range(1..=10);
            let mut truth: Vec<bool> = (0..len).map(|_| rng.random_bool(0.3)).collect();
            truth[rng.random_range(0..len)] = true;
            let pred: Vec<bool> = (0..len).map(|_| rng.random_bool(0.4)).collect();
            for (t, p) in truth.iter().zip(&pred) {
                match (t, p) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fn_ += 1.0,
                    (false, false) => tn += 1.0,
                }
            }
            let id = format!("c{c}");
            chains.push(chain(&id, truth));
            preds.push(prediction(&id, pred));
        }
        let r = compute_metrics(&preds, &chains, Population::Erroneous).map_err(|e| e.to_string())?;
        let f1 = oracle_f1(tp, fp, fn_);
        let f1_neg = oracle_f1(tn, fn_, fp);
        ensure!((r.f1 - f1).abs() < 1e-12, "config {config}: F1 {} vs {f1}", r.f1);
        ensure!(
            (r.f1_neg - f1_neg).abs() < 1e-12,
            "config {config}: F1_neg {} vs {f1_neg}",
            r.f1_neg
        );
        ensure!(
            (r.prm_score - (f1 + f1_neg) / 2.0).abs() < 1e-12,
            "config {config}: PRMScore {} vs {}",
            r.prm_score,
            (f1 + f1_neg) / 2.0
        );
    }
    // labels + + - -, predictions + - - -
    let hand = compute_metrics(
        &[prediction("h", vec![false, true, true, true])],
        &[chain("h", vec![false, false, true, true])],
        Population::Erroneous,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        (hand.prm_score - 11.0 / 15.0).abs() < 1e-9,
        "hand case {} != 11/15",
        hand.prm_score
    );
    let rounded = (hand.prm_score * 1e4).round() / 1e4;
    ensure!(rounded == 0.7333, "hand case rounds to {rounded}");
    Ok(format!("200 configurations agree; hand case {:.4}", hand.prm_score))
}

fn degenerate_predictor() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut chains = Vec::new();
    let mut preds = Vec::new();
    for c in 0..40 {
        let len = rng.random_range(3..=12);
        let mut truth = vec![false; len];
        truth[rng.random_range(0..len)] = true;
        let id = format!("c{c}");
        let transcript = vec!["+"; len].join(" ");
        let verdicts = parse_generative(&transcript, len).ok_or("constant transcript did not parse")?;
        chains.push(chain(&id, truth));
        preds.push(prediction(&id, verdicts));
    }
    let r = compute_metrics(&preds, &chains, Population::Erroneous).map_err(|e| e.to_string())?;
    let pct = |x: Option<f64>| x.map(|v| v * 100.0);
    ensure!(pct(r.acc_pos) == Some(100.0), "acc_pos {:?}", pct(r.acc_pos));
    ensure!(pct(r.acc_neg) == Some(0.0), "acc_neg {:?}", pct(r.acc_neg));
    ensure!(pct(r.bias_gap) == Some(100.0), "bias gap {:?}", pct(r.bias_gap));
    ensure!(r.f1 == 0.0, "F1 on erroneous steps {}", r.f1);
    Ok("acc_pos 100.0, acc_neg 0.0, bias +100.0, F1 0".into())
}

// --------------------------------------------------------------- taxonomy

fn taxonomy_table() -> Result<String, String> {
    use Category::*;
    let expected: [(&str, Category, &str, &str, &str, f64); 14] = [
        ("S-1", Simplicity, "Non-Redundancy", "NR", "Insert redundant step", 0.2),
        (
            "S-2",
            Simplicity,
            "Non-Circular Logic",
            "NCL",
            "Inject circular argument",
            0.3,
        ),
        (
            "R-1",
            Soundness,
            "Evidence-Based Soundness",
            "EBS",
            "Replace medical fact",
            0.8,
        ),
        (
            "R-2",
            Soundness,
            "Step Consistency",
            "SC",
            "Introduce contradiction",
            0.6,
        ),
        (
            "R-3",
            Soundness,
            "Contextual Applicability",
            "CA",
            "Ignore patient context",
            0.6,
        ),
        (
            "R-4",
            Soundness,
            "Confidence Invariance",
            "CI",
            "Insert overconfident claim",
            0.7,
        ),
        ("R-5", Soundness, "Safety Awareness", "SA", "Remove safety check", 1.0),
        (
            "R-6",
            Soundness,
            "Information Grounding Compliance",
            "IGC",
            "Fabricate entity",
            0.7,
        ),
        (
            "R-7",
            Soundness,
            "Trajectory Reasoning",
            "TR",
            "Reverse causal/temporal order",
            0.6,
        ),
        (
            "E-1",
            Sensitivity,
            "Prerequisite Sensitivity",
            "PS",
            "Delete prerequisite step",
            0.7,
        ),
        (
            "E-2",
            Sensitivity,
            "Deception Resistance",
            "DR",
            "Insert distractor",
            0.5,
        ),
        (
            "E-3",
            Sensitivity,
            "Multi-Solution Consistency",
            "MSC",
            "Dismiss alternatives",
            0.4,
        ),
        (
            "E-4",
            Sensitivity,
            "Quantitative Correctness",
            "QC",
            "Alter numerical value",
            0.5,
        ),
        (
            "E-5",
            Sensitivity,
            "Differential Diagnosis Coverage",
            "DDC",
            "Narrow differential",
            0.7,
        ),
    ];
    let universal = ["R-1", "R-6", "E-2"];
    ensure!(
        TAXONOMY.len() == 14 && ALL_CODES.len() == 14,
        "table has {} rows",
        TAXONOMY.len()
    );
    for (row, exp) in TAXONOMY.iter().zip(&expected) {
        let (code, category, name, abbr, op, w) = *exp;
        ensure!(
            row.code.as_str() == code,
            "row order: {} where {code} expected",
            row.code.as_str()
        );
        ensure!(row.category == category, "{code} category {:?}", row.category);
        ensure!(row.name == name, "{code} name {}", row.name);
        ensure!(row.abbreviation == abbr, "{code} abbreviation {}", row.abbreviation);
        ensure!(
            row.blueprint_operation == op,
            "{code} operation {}",
            row.blueprint_operation
        );
        ensure!(row.w_type == w, "{code} w_type {}", row.w_type);
        ensure!(row.universal == universal.contains(&code), "{code} universal flag");
        let prefix = match category {
            Simplicity => 'S',
            Soundness => 'R',
            Sensitivity => 'E',
        };
        ensure!(code.starts_with(prefix), "{code} prefix disagrees with category");
        ensure!(row.code.info().code == row.code, "{code} lookup");
    }
    Ok("14 rows match".into())
}

// --------------------------------------------------------------- severity

fn severity_table() -> Result<String, String> {
    use SafetyLevel::*;
    let cases: [(f64, SafetyLevel, SafetyLevel); 12] = [
        (0.7, Critical, Critical),
        (0.7, Major, Critical),
        (0.69, Critical, Major),
        (0.9, Moderate, Major),
        (0.4, Minor, Major),
        (0.39, Minor, Moderate),
        (0.1, Major, Major),
        (0.05, Critical, Major),
        (0.2, Minor, Moderate),
        (0.19, Minor, Minor),
        (0.1, Moderate, Moderate),
        (0.0, Minor, Minor),
    ];
    for (fraction, safety, want) in cases {
        let got = discretize(fraction, safety);
        ensure!(got == want, "({fraction}, {safety:?}) gave {got:?}, expected {want:?}");
    }
    let cfg = SeverityConfig::default();
    let score = severity_score(0.5, cfg.w_major, ErrorCode::R5.w_type(), &cfg);
    ensure!((score - 0.72).abs() <= 2.0 * f64::EPSILON, "worked score {score}");
    Ok(format!("12 cases; worked score {score}"))
}

// ------------------------------------------------------------ diff oracle

/// Matched index pairs of the longest common subsequence.
fn lcs_pairs(a: &[String], b: &[String]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i][j] = if a[i] == b[j] {
                dp[i + 1][j + 1] + 1
            } else {
                dp[i + 1][j].max(dp[i][j + 1])
            };
        }
    }
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < n && j < m {
        if a[i] == b[j] {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if dp[i + 1][j] >= dp[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Unmatched corrupted steps, plus the step after every pure deletion.
fn oracle_changes(original: &[String], corrupted: &[String]) -> BTreeSet<usize> {
    let a: Vec<String> = original.iter().map(|s| normalize_step(s)).collect();
    let b: Vec<String> = corrupted.iter().map(|s| normalize_step(s)).collect();
    let m = b.len();
    let mut pairs = lcs_pairs(&a, &b);
    pairs.push((a.len(), m));
    let mut out = BTreeSet::new();
    let (mut next_a, mut next_b) = (0, 0);
    for (i, j) in pairs {
        if j > next_b {
            out.extend(next_b + 1..=j);
        } else if i > next_a && m > 0 {
            out.insert((j + 1).min(m));
        }
        next_a = i + 1;
        next_b = j + 1;
    }
    out
}

fn variant_for(corrupted: Vec<String>, reported: BTreeSet<usize>) -> Variant {
    Variant {
        variant_id: "v".into(),
        parent_instance_id: "q".into(),
        corrupted_steps: corrupted,
        error_codes: BTreeSet::from([ErrorCode::R1]),
        error_step_indices: BTreeMap::from([(ErrorCode::R1, reported)]),
        severity_score: 0.0,
        severity_level: SafetyLevel::Minor,
        is_composite: false,
        producer: "oracle".into(),
        sample_weight: 1.0,
        targets: vec![1],
        target_profile: TargetProfile {
            safety_level: SafetyLevel::Moderate,
            bnc: None,
        },
        fallback_target: false,
        error_description: String::new(),
        reason: String::new(),
    }
}

fn perturb(rng: &mut ChaCha8Rng, trial: usize, original: &[String]) -> Vec<String> {
    let mut steps = original.to_vec();
    if rng.random_bool(0.1) {
        // whitespace-only edits are not changes
        if rng.random_bool(0.5) {
            let k = rng.random_range(0..steps.len());
            steps[k] = format!("  {}\t", steps[k].replace(' ', "   "));
        }
        return steps;
    }
    for op in 0..rng.random_range(1..=3) {
        let novel = format!("Novel claim {trial}.{op} that the chain never made");
        match rng.random_range(0..3) {
            0 => {
                let k = rng.random_range(0..steps.len());
                steps[k] = novel;
            }
            1 => {
                let k = rng.random_range(0..=steps.len());
                steps.insert(k, novel);
            }
            _ if steps.len() > 1 => {
                let k = rng.random_range(0..steps.len());
                steps.remove(k);
            }
            _ => steps.push(novel),
        }
    }
    steps
}

fn diff_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (vcfg, scfg) = (VerifyConfig::default(), SeverityConfig::default());
    let (mut unchanged, mut kept, mut low_fidelity) = (0, 0, 0);
    for trial in 0..1000 {
        let n = rng.random_range(1..=15);
        let original: Vec<String> = (0..n)
            .map(|k| format!("Step {k} of case {trial} weighs finding {}", k * 7 + trial))
            .collect();
        let corrupted = perturb(&mut rng, trial, &original);
        let len = corrupted.len();
        let reported: BTreeSet<usize> = (1..=len).filter(|_| rng.random_bool(0.3)).collect();
        let expected = oracle_changes(&original, &corrupted);
        let fast = changed_positions(&align_steps(&original, &corrupted), len);
        ensure!(
            fast == expected,
            "trial {trial}: matcher {fast:?} vs oracle {expected:?}"
        );

        let (out, report) = diff_verify(&original, &variant_for(corrupted, reported.clone()), &vcfg, &scfg);
        if expected.is_empty() {
            unchanged += 1;
            ensure!(
                out.is_none() && report.quality.discard_reason == Some(DiscardReason::NoTextualChange),
                "trial {trial}: unchanged chain not discarded"
            );
            continue;
        }
        ensure!(
            report.verified == expected,
            "trial {trial}: verified {:?} vs {expected:?}",
            report.verified
        );
        let fps: BTreeSet<usize> = reported.difference(&expected).copied().collect();
        ensure!(report.false_positives == fps, "trial {trial}: false positive report");
        match out {
            Some(v) => {
                kept += 1;
                ensure!(
                    v.error_positions() == expected,
                    "trial {trial}: released indices {:?}",
                    v.error_positions()
                );
            }
            None => {
                low_fidelity += 1;
                ensure!(
                    report.quality.discard_reason == Some(DiscardReason::LowFidelity)
                        && report.quality.text_fidelity < vcfg.tf_threshold,
                    "trial {trial}: unexpected discard {:?}",
                    report.quality.discard_reason
                );
            }
        }
    }
    Ok(format!(
        "{kept} verified, {unchanged} unchanged discarded, {low_fidelity} low fidelity, 0 false positives"
    ))
}

// ----------------------------------------------------------------- graphs

fn closure(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for (u, row) in r.iter_mut().enumerate() {
        row[u] = true;
    }
    for &(u, v) in edges {
        r[u][v] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    r
}

fn graph_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut total_edges = 0;
    let mut dropped = 0;
    for g in 0..500 {
        let n = rng.random_range(1..=12);
        let p = rng.random_range(0.05..0.5);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && rng.random_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        edges.shuffle(&mut rng);
        let full = closure(n, &edges);
        let root = rng.random_range(0..n);
        let reach = bidirectional_reach(n, &edges, root);
        for v in 0..n {
            ensure!(
                reach[v] == (full[root][v] || full[v][root]),
                "graph {g}: node {v} from root {root}"
            );
        }

        let exempt: Vec<bool> = edges.iter().map(|_| rng.random_bool(0.1)).collect();
        let keep = transitive_reduction(n, &edges, &exempt, &vec![false; edges.len()]);
        let kept: Vec<(usize, usize)> = edges.iter().zip(&keep).filter(|(_, k)| **k).map(|(e, _)| *e).collect();
        ensure!(closure(n, &kept) == full, "graph {g}: reduction changed reachability");
        for (i, e) in edges.iter().enumerate() {
            ensure!(!exempt[i] || keep[i], "graph {g}: exempt edge {e:?} dropped");
            if !keep[i] || exempt[i] {
                continue;
            }
            let without: Vec<(usize, usize)> = kept.iter().copied().filter(|k| k != e).collect();
            ensure!(
                !closure(n, &without)[e.0][e.1],
                "graph {g}: kept edge {e:?} is removable"
            );
        }
        total_edges += edges.len();
        dropped += keep.iter().filter(|k| !**k).count();
    }
    Ok(format!("500 graphs, {dropped} of {total_edges} edges reduced"))
}

// ----------------------------------------------------------------- voting

/// Two spellings for each of four concepts; spellings of one concept are
/// token-identical, different concepts share no tokens.
fn surface(concept: usize, spelling: usize) -> Triplet {
    const FORMS: [[&str; 3]; 4] = [
        ["chest pain", "suggests", "myocardial infarction"],
        ["fever", "indicates", "bacterial infection"],
        ["warfarin", "raises", "bleeding risk"],
        ["hypokalemia", "causes", "arrhythmia"],
    ];
    let [s, p, o] = FORMS[concept];
    if spelling == 0 {
        Triplet::new(s, p, o, "")
    } else {
        Triplet::new(
            &s.to_uppercase(),
            &format!(" {}", p.to_uppercase()),
            &o.to_uppercase(),
            "",
        )
    }
}

/// Support per concept counted directly; surviving concepts appear in
/// order of their first candidate, spelled as that candidate.
fn oracle_vote(lists: &[Vec<(usize, usize)>], min_support: usize) -> Vec<([String; 3], BTreeSet<usize>)> {
    let mut providers_of: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (p, list) in lists.iter().enumerate() {
        for &(c, _) in list {
            providers_of.entry(c).or_default().insert(p);
        }
    }
    let mut out: Vec<([String; 3], BTreeSet<usize>)> = Vec::new();
    let mut placed = BTreeSet::new();
    for list in lists {
        for &(c, s) in list {
            if providers_of[&c].len() >= min_support && placed.insert(c) {
                let t = surface(c, s);
                out.push(([t.subject, t.predicate, t.object], providers_of[&c].clone()));
            }
        }
    }
    out
}

/// Every split of `total` items over three providers, each item drawn
/// from `alphabet` (concept, spelling) pairs.
fn configurations(total: usize, alphabet: &[(usize, usize)]) -> Vec<Vec<Vec<(usize, usize)>>> {
    fn words(len: usize, alphabet: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new()];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|w| {
                    alphabet.iter().map(move |a| {
                        let mut w = w.clone();
                        w.push(*a);
                        w
                    })
                })
                .collect();
        }
        out
    }
    let mut out = Vec::new();
    for a in 0..=total {
        for b in 0..=total - a {
            let c = total - a - b;
            for wa in words(a, alphabet) {
                for wb in words(b, alphabet) {
                    for wc in words(c, alphabet) {
                        out.push(vec![wa.clone(), wb.clone(), wc]);
                    }
                }
            }
        }
    }
    out
}

fn voting() -> Result<String, String> {
    let sim = SimilarityCache::token_set();
    let names = ["m1", "m2", "m3"];
    let mut cases = 0;
    let narrow = [(0, 0), (1, 0)];
    let wide = [(0, 0), (0, 1), (1, 0), (1, 1)];
    let mut all = Vec::new();
    for total in 0..=6 {
        all.extend(configurations(total, &narrow));
    }
    for total in 0..=4 {
        all.extend(configurations(total, &wide));
    }
    for lists in &all {
        let input: Vec<(String, Vec<Triplet>)> = lists
            .iter()
            .zip(names)
            .map(|(l, name)| {
                let ts = l
                    .iter()
                    .map(|&(c, s)| {
                        let mut t = surface(c, s);
                        t.supporters = BTreeSet::from([name.to_string()]);
                        t
                    })
                    .collect();
                (name.to_string(), ts)
            })
            .collect();
        for min_support in 1..=3 {
            let cfg = VotingConfig {
                min_support,
                ..VotingConfig::default()
            };
            let ern = vote_fuse("x", &input, &cfg, &sim).map_err(|e| e.to_string())?;
            let want = oracle_vote(lists, min_support);
            let got: Vec<([String; 3], BTreeSet<usize>)> = ern
                .edges
                .iter()
                .map(|e| {
                    let by: BTreeSet<usize> = e
                        .supporters
                        .iter()
                        .map(|s| names.iter().position(|n| n == s).unwrap())
                        .collect();
                    ([e.subject.clone(), e.predicate.clone(), e.object.clone()], by)
                })
                .collect();
            ensure!(
                got == want,
                "lists {lists:?}, support {min_support}: {got:?} vs {want:?}"
            );
            ensure!(
                ern.edges.iter().all(|e| e.supporter_count == e.supporters.len()),
                "supporter count"
            );
            let total: usize = lists.iter().map(Vec::len).sum();
            ensure!(
                ern.candidate_count == total,
                "candidate count {} vs {total}",
                ern.candidate_count
            );
            cases += 1;
        }
    }

    // 10 claims backed by two providers, 16 backed by one
    let word = |k: usize| format!("term{k}");
    let claim = |k: usize, by: &str| Triplet::new(&word(3 * k), &word(3 * k + 1), &word(3 * k + 2), by);
    let mut lists: Vec<Vec<Triplet>> = vec![Vec::new(); 3];
    for k in 0..10 {
        lists[k % 3].push(claim(k, names[k % 3]));
        lists[(k + 1) % 3].push(claim(k, names[(k + 1) % 3]));
    }
    for k in 10..26 {
        lists[k % 3].push(claim(k, names[k % 3]));
    }
    let input: Vec<(String, Vec<Triplet>)> = names.iter().map(|n| n.to_string()).zip(lists).collect();
    let ern = vote_fuse("fixture", &input, &VotingConfig::default(), &sim).map_err(|e| e.to_string())?;
    let rate = (ern.acceptance_rate() * 100.0).round() / 100.0;
    ensure!(
        ern.candidate_count == 36 && ern.edges.len() == 10 && rate == 27.78,
        "{} in, {} out, {rate}%",
        ern.candidate_count,
        ern.edges.len()
    );
    Ok(format!("{cases} exhaustive cases; fixture 36 in, 10 out, {rate}%"))
}

// ---------------------------------------------------------------- sampler

fn sampler_convergence() -> Result<String, String> {
    let target = default_target();
    let mut state = SamplingState::new(target, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let all = [true; 14];
    for _ in 0..20_000 {
        state.sample_instance(&all, &mut rng);
    }
    let l1 = l1_distance(&state.empirical(), &target);
    ensure!(l1 <= 0.02, "L1 distance {l1:.5}");
    Ok(format!("L1 {l1:.5} after {} draws", state.drawn()))
}

// ------------------------------------------------------------- end to end

fn recording_registry(cfg: &PipelineConfig, log: Arc<Mutex<Vec<FixtureEntry>>>) -> ProviderRegistry {
    let mut reg = ProviderRegistry::new().with_retries(cfg.retries);
    for id in cfg.providers.keys() {
        let sim = SimulatedProvider::new(id, cfg.seed);
        let log = log.clone();
        let owner = id.clone();
        reg.register(Arc::new(FnProvider::new(id, move |req| {
            let response = sim.complete(req)?;
            log.lock().expect("log lock").push(FixtureEntry {
                digest: req.digest(),
                response: response.clone(),
                provider: Some(owner.clone()),
            });
            Ok(response)
        })));
    }
    reg
}

fn fixture_config(base: &PipelineConfig, path: &Path) -> PipelineConfig {
    let mut cfg = base.clone();
    cfg.providers = base
        .providers
        .keys()
        .map(|id| {
            (
                id.clone(),
                ProviderSpec::Fixture {
                    path: path.to_path_buf(),
                    fallback: false,
                },
            )
        })
        .collect();
    cfg
}

fn released(cfg: &PipelineConfig) -> Result<(Vec<CanonicalRecord>, String), String> {
    let reg = cfg.build_registry().map_err(|e| e.to_string())?;
    let out = run_construction(&synthetic_corpus(50, 21), cfg, &reg).map_err(|e| e.to_string())?;
    let records: Vec<CanonicalRecord> = out.release.train.into_iter().chain(out.release.test).collect();
    let text = io::to_jsonl(&records).map_err(|e| e.to_string())?;
    Ok((records, text))
}

fn end_to_end() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = PipelineConfig::default();

    // record every exchange once, then replay strictly from the fixtures
    let log = Arc::new(Mutex::new(Vec::new()));
    let reg = recording_registry(&base, log.clone());
    let recorded = run_construction(&synthetic_corpus(50, 21), &base, &reg).map_err(|e| e.to_string())?;
    let mut entries = std::mem::take(&mut *log.lock().expect("log lock"));
    entries.sort_by(|a, b| (&a.provider, &a.digest).cmp(&(&b.provider, &b.digest)));
    entries.dedup_by(|a, b| a.provider == b.provider && a.digest == b.digest);
    let fixtures = dir.path().join("fixtures.jsonl");
    io::write_jsonl(&fixtures, &entries).map_err(|e| e.to_string())?;
    let cfg = fixture_config(&base, &fixtures);

    let (records, first) = released(&cfg)?;
    let (_, second) = released(&cfg)?;
    ensure!(first == second, "repeat run differs");
    let recorded_records: Vec<CanonicalRecord> = recorded
        .release
        .train
        .into_iter()
        .chain(recorded.release.test)
        .collect();
    ensure!(records == recorded_records, "replay differs from the recorded run");
    ensure!(!records.is_empty(), "no records released");

    let policy = SplitPolicy::default();
    let mut classes = BTreeSet::new();
    for r in &records {
        r.validate().map_err(|e| format!("{}: {e}", r.variant_id))?;
        let back: CanonicalRecord =
            serde_json::from_str(&serde_json::to_string(r).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure!(&back == r, "{} does not round-trip", r.variant_id);
        let actual = changed_positions(
            &align_steps(&r.original_steps, &r.corrupted_steps),
            r.corrupted_steps.len(),
        );
        ensure!(
            !r.error_positions().is_empty() && r.error_positions() == actual,
            "{}: indices {:?} vs diff {actual:?}",
            r.variant_id,
            r.error_positions()
        );
        ensure!(
            r.step_annotations.len() == r.original_steps.len(),
            "{}: annotation count",
            r.variant_id
        );
        if policy.is_protected(r) && r.source_split == SourceSplit::Train {
            ensure!(r.split == Split::Train, "{} left protected train data", r.variant_id);
        }
        if r.source_split == SourceSplit::Test {
            ensure!(r.split == Split::Test, "{} left the source test split", r.variant_id);
        }
        classes.insert(r.dataset_class == DatasetClass::A);
    }
    let ids: BTreeSet<&str> = records.iter().map(|r| r.variant_id.as_str()).collect();
    ensure!(ids.len() == records.len(), "duplicate variant ids");
    let stats = compute_statistics(&records);
    let overall = stats.overall.ok_or("statistics are empty")?;
    ensure!(
        overall.instances == records.len(),
        "statistics count {}",
        overall.instances
    );
    Ok(format!(
        "{} records from {} replayed exchanges, both dataset classes: {}, byte-identical repeat",
        records.len(),
        entries.len(),
        classes.len() == 2
    ))
}

// --------------------------------------------------------------- verifier

fn verifier_strategies() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let labels = ["A", "B", "C", "D", "E"];
    let n = 16;
    let mut trajectories = Vec::new();
    for q in 0..100 {
        let count = rng.random_range(1..=24);
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut rng);
        for idx in order {
            let answer = (!rng.random_bool(0.1)).then(|| labels[rng.random_range(0..3 + q % 3)].to_string());
            let steps = rng.random_range(1..=6);
            let step_scores = (0..steps)
                .map(|_| f64::from(rng.random_range(0..=20u8)) / 20.0)
                .collect();
            trajectories.push(Trajectory {
                question_id: format!("q{q:03}"),
                trajectory_index: idx,
                answer,
                step_scores,
            });
        }
    }

    let mut by_q: BTreeMap<&str, Vec<&Trajectory>> = BTreeMap::new();
    for t in &trajectories {
        by_q.entry(&t.question_id).or_default().push(t);
    }
    let weakest = |t: &Trajectory| t.step_scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mut oracle: BTreeMap<Strategy, BTreeMap<String, Option<String>>> = BTreeMap::new();
    for (q, trs) in &by_q {
        let pool: Vec<&Trajectory> = trs
            .iter()
            .copied()
            .filter(|t| t.trajectory_index < n && t.answer.is_some())
            .collect();
        let ans = |t: &Trajectory| t.answer.clone().unwrap();
        // best of n: a trajectory wins when nothing beats it and no equal scores sit earlier
        let bon = pool
            .iter()
            .find(|t| {
                pool.iter().all(|o| {
                    weakest(o) < weakest(t) || (weakest(o) == weakest(t) && o.trajectory_index >= t.trajectory_index)
                })
            })
            .map(|t| ans(t));
        // majority: the label whose count no other label beats, smallest first
        let count = |l: &str| pool.iter().filter(|t| t.answer.as_deref() == Some(l)).count();
        let sc = labels
            .iter()
            .filter(|l| count(l) > 0)
            .find(|l| labels.iter().all(|o| count(o) <= count(l)))
            .map(|l| l.to_string());
        // group max, then group size, then smallest label
        let best_in = |l: &str| {
            pool.iter()
                .filter(|t| t.answer.as_deref() == Some(l))
                .map(|t| weakest(t))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let sc_rm = labels
            .iter()
            .filter(|l| count(l) > 0)
            .find(|l| {
                labels
                    .iter()
                    .filter(|o| count(o) > 0)
                    .all(|o| best_in(o) < best_in(l) || (best_in(o) == best_in(l) && count(o) <= count(l)))
            })
            .map(|l| l.to_string());
        oracle.entry(Strategy::Bon).or_default().insert(q.to_string(), bon);
        oracle.entry(Strategy::Sc).or_default().insert(q.to_string(), sc);
        oracle.entry(Strategy::ScRm).or_default().insert(q.to_string(), sc_rm);
    }

    for (strategy, want) in &oracle {
        let report = run_verifier(*strategy, &trajectories, n, None).map_err(|e| e.to_string())?;
        for (q, expected) in want {
            let got = &report.selections[q].answer;
            ensure!(got == expected, "{strategy:?} on {q}: {got:?} vs {expected:?}");
        }
    }

    let base = run_verifier(Strategy::Bon, &trajectories, n, None).map_err(|e| e.to_string())?;
    let transforms: [fn(f64) -> f64; 3] = [
        |x| x.powi(3),
        |x| (4.0 * x).exp() - 7.0,
        |x| 1.0 / (1.0 + (-9.0 * x).exp()),
    ];
    for f in transforms {
        let moved: Vec<Trajectory> = trajectories
            .iter()
            .map(|t| Trajectory {
                step_scores: t.step_scores.iter().map(|s| f(*s)).collect(),
                ..t.clone()
            })
            .collect();
        let r = run_verifier(Strategy::Bon, &moved, n, None).map_err(|e| e.to_string())?;
        for (q, sel) in &base.selections {
            ensure!(
                r.selections[q].trajectory_index == sel.trajectory_index,
                "bon on {q} changed under a monotone transform"
            );
        }
    }
    Ok(format!(
        "100 questions x 3 strategies agree; bon stable under 3 transforms"
    ))
}

// ------------------------------------------------------------ hard subset

fn hard_record(k: usize, severity: f64) -> CanonicalRecord {
    let steps: Vec<String> = (1..=6).map(|i| format!("step {i}")).collect();
    CanonicalRecord {
        instance_id: format!("q{k:02}"),
        variant_id: format!("q{k:02}-v"),
        dataset_name: "MedQA-USMLE".into(),
        dataset_class: DatasetClass::B,
        split: Split::Test,
        source_split: SourceSplit::Test,
        pass_rate: Some(0.0),
        question: "q".into(),
        options: Vec::new(),
        gold_answer: "A".into(),
        original_steps: steps.clone(),
        step_annotations: Vec::new(),
        corrupted_steps: steps,
        error_codes: vec![ErrorCode::R1, ErrorCode::E4],
        error_step_indices: BTreeMap::from([(ErrorCode::R1, vec![2]), (ErrorCode::E4, vec![4])]),
        severity_score: severity,
        severity_level: SafetyLevel::Minor,
        is_composite: true,
        sample_weight: 1.0,
        answer_changed: AnswerChanged::False,
        producer: "p".into(),
    }
}

fn hard_subset() -> Result<String, String> {
    let mut records = Vec::new();
    let mut qualifying = Vec::new();
    for k in 0..40 {
        let severity = ((k * 37) % 40) as f64 / 40.0;
        let mut r = hard_record(k, severity);
        match k % 5 {
            0 => {
                r.error_step_indices.insert(ErrorCode::E4, vec![2, 5]);
            }
            1 => r.pass_rate = Some(0.125),
            2 if k % 2 == 0 => r.answer_changed = AnswerChanged::True,
            2 => r.answer_changed = AnswerChanged::Unknown,
            3 => r.pass_rate = if k % 2 == 0 { None } else { Some(0.5) },
            _ => qualifying.push((severity, r.variant_id.clone())),
        }
        records.push(r);
    }
    // the size cut keeps only the least severe qualifiers
    let size = 5;
    qualifying.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let qualifier_count = qualifying.len();
    let want: Vec<String> = qualifying.into_iter().take(size).map(|(_, id)| id).collect();
    let subset = build_hard_subset(&records, size);
    let got: Vec<String> = subset.records.iter().map(|r| r.variant_id.clone()).collect();
    ensure!(got == want, "{got:?} vs {want:?}");
    ensure!(subset.qualifying == qualifier_count, "qualifying {}", subset.qualifying);
    ensure!(
        subset
            .records
            .windows(2)
            .all(|w| w[0].severity_score <= w[1].severity_score),
        "not ordered by severity"
    );
    Ok(format!(
        "{} of {} qualify; lowest {size} selected in order",
        qualifier_count,
        records.len()
    ))
}

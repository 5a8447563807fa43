//! Stage orchestration over in-memory artifacts.
//!
//! Per-item work runs on a bounded rayon pool and is collected in input
//! order. The error-type sampler is the one piece of shared state; it runs
//! sequentially between the parallel tagging and injection phases, so a
//! fixed seed reproduces every output byte for byte.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blueprint::{
    annotate_and_linearize, distill, step_bnc, verify_and_enhance, Blueprint, ConclusionHints, StepAnnotation,
};
use crate::config::PipelineConfig;
use crate::corpus::{
    difficulty_filter, estimate_pass_rates, rejection_sample_reasoning, DatasetClass, QuestionRecord, ReasoningTrace,
};
use crate::ern::{extract_triplets, vote_fuse, Ern};
use crate::error::{ForgeError, Result};
use crate::inject::{inject_instance, synthesize_composite, tag_applicability, InjectionContext, Variant};
use crate::providers::ProviderRegistry;
use crate::release::{split, CanonicalRecord, SplitOutcome};
use crate::review::{
    apply_revisions, consensus_filter, vote, ConsensusOutcome, Dimension, ImportReport, ReviewDecision, ReviewRecord,
    VoteContext,
};
use crate::taxonomy::ErrorCode;
use crate::verify::{answer_impact, diff_verify, AnswerChanged, VerificationReport};

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ForgeError::Config(format!("worker pool: {e}")))
}

/// Order-preserving parallel map on a pool of `workers` threads.
pub fn par_map<T, U, F>(workers: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    Ok(pool(workers)?.install(|| items.par_iter().map(f).collect()))
}

/// An item dropped by a stage, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

/// A question after filtering and (for class B) reasoning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub record: QuestionRecord,
    #[serde(default)]
    pub pass_rate: Option<f64>,
    #[serde(default)]
    pub trace: Option<ReasoningTrace>,
}

impl Instance {
    /// The reasoning a network is extracted from.
    pub fn reasoning_text(&self) -> Option<String> {
        match &self.trace {
            Some(t) => Some(crate::providers::prompts::numbered(&t.steps)),
            None => self.record.reasoning_text.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FilterOutcome {
    pub kept: Vec<Instance>,
    pub rates: BTreeMap<String, f64>,
}

pub fn filter(records: &[QuestionRecord], cfg: &PipelineConfig, reg: &ProviderRegistry) -> Result<FilterOutcome> {
    let rates = pool(cfg.workers)?.install(|| estimate_pass_rates(records, &cfg.difficulty, reg, &cfg.roles.probe))?;
    let lookup = rates.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let kept = difficulty_filter(records, &lookup, &cfg.difficulty)?
        .into_iter()
        .map(|r| Instance {
            pass_rate: rates.get(&r.instance_id).copied(),
            record: r,
            trace: None,
        })
        .collect();
    Ok(FilterOutcome { kept, rates })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ReasonOutcome {
    pub instances: Vec<Instance>,
    pub unverifiable: Vec<Skipped>,
}

/// Class B questions get a verified chain; class A passes through.
pub fn reason(instances: &[Instance], cfg: &PipelineConfig, reg: &ProviderRegistry) -> Result<ReasonOutcome> {
    let rs_pool = cfg.roles.reasoner_pool()?;
    let results = par_map(cfg.workers, instances, |inst| {
        if inst.record.dataset_class == DatasetClass::A {
            return Ok(inst.clone());
        }
        let trace = rejection_sample_reasoning(&inst.record, &rs_pool, reg, cfg.max_reason_attempts)?;
        Ok(Instance {
            trace: Some(trace),
            ..inst.clone()
        })
    })?;
    let mut out = ReasonOutcome::default();
    for r in results {
        match r {
            Ok(i) => out.instances.push(i),
            Err(ForgeError::Unverifiable { id, reason }) => out.unverifiable.push(Skipped { id, reason }),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ErnOutcome {
    pub networks: Vec<Ern>,
    pub skipped: Vec<Skipped>,
}

/// Voted networks for every class B instance.
pub fn build_networks(instances: &[Instance], cfg: &PipelineConfig, reg: &ProviderRegistry) -> Result<ErnOutcome> {
    let sim = reg.similarity();
    let results = par_map(
        cfg.workers,
        instances,
        |inst| -> Result<Option<std::result::Result<Ern, Skipped>>> {
            if inst.record.dataset_class == DatasetClass::A {
                return Ok(None);
            }
            let id = &inst.record.instance_id;
            let Some(text) = inst.reasoning_text() else {
                return Ok(Some(Err(Skipped {
                    id: id.clone(),
                    reason: "no reasoning".into(),
                })));
            };
            let mut per_provider = Vec::new();
            for p in &cfg.roles.extractors {
                let ex = extract_triplets(&inst.record.question, &text, p, reg)?;
                per_provider.push((p.clone(), ex.triplets));
            }
            Ok(Some(Ok(vote_fuse(id, &per_provider, &cfg.voting, &sim)?)))
        },
    )?;
    let mut out = ErnOutcome::default();
    for r in results {
        match r? {
            Some(Ok(e)) => out.networks.push(e),
            Some(Err(s)) => out.skipped.push(s),
            None => {}
        }
    }
    Ok(out)
}

/// An instance ready for injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prepared {
    pub record: QuestionRecord,
    #[serde(default)]
    pub pass_rate: Option<f64>,
    pub steps: Vec<String>,
    pub annotations: Vec<StepAnnotation>,
    #[serde(default)]
    pub step_bnc: Option<Vec<f64>>,
    #[serde(default)]
    pub blueprint: Option<Blueprint>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BlueprintOutcome {
    pub prepared: Vec<Prepared>,
    pub skipped: Vec<Skipped>,
}

fn prepare_one(
    inst: &Instance,
    ern: Option<&Ern>,
    cfg: &PipelineConfig,
    reg: &ProviderRegistry,
    sim: &crate::providers::SimilarityCache,
) -> Result<Prepared> {
    let r = &inst.record;
    let annotator = &cfg.roles.annotator;
    let blueprint = if r.dataset_class == DatasetClass::B {
        let ern = ern.ok_or_else(|| ForgeError::invalid("no network"))?;
        let answer = r.gold_text();
        let hints = ConclusionHints {
            long_answer: r.long_answer.as_deref(),
            source_lookup: None,
            question: Some(&r.question),
        };
        let bp = distill(ern, answer, &hints, &cfg.distill, &cfg.bnc, sim)?;
        Some(verify_and_enhance(
            &bp,
            ern,
            &r.question,
            answer,
            &cfg.distill,
            &cfg.bnc,
            reg,
            annotator,
        )?)
    } else {
        None
    };
    let (steps, annotations) = annotate_and_linearize(blueprint.as_ref(), r, reg, annotator)?;
    if steps.is_empty() {
        return Err(ForgeError::invalid("empty chain"));
    }
    Ok(Prepared {
        record: r.clone(),
        pass_rate: inst.pass_rate,
        step_bnc: blueprint.as_ref().map(|bp| step_bnc(bp, &steps)),
        steps,
        annotations,
        blueprint,
    })
}

/// Distills class B networks into blueprints and linearizes them; class A
/// chains are segmented and annotated as given.
pub fn prepare(
    instances: &[Instance],
    networks: &[Ern],
    cfg: &PipelineConfig,
    reg: &ProviderRegistry,
) -> Result<BlueprintOutcome> {
    let sim = reg.similarity();
    let by_id: BTreeMap<&str, &Ern> = networks.iter().map(|e| (e.instance_id.as_str(), e)).collect();
    let results = par_map(cfg.workers, instances, |inst| {
        prepare_one(
            inst,
            by_id.get(inst.record.instance_id.as_str()).copied(),
            cfg,
            reg,
            &sim,
        )
    })?;
    let mut out = BlueprintOutcome::default();
    for (inst, r) in instances.iter().zip(results) {
        match r {
            Ok(p) => out.prepared.push(p),
            Err(ForgeError::Provider(e)) => return Err(ForgeError::Provider(e)),
            Err(e) => out.skipped.push(Skipped {
                id: inst.record.instance_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// One variant with everything later stages read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkItem {
    pub record: QuestionRecord,
    #[serde(default)]
    pub pass_rate: Option<f64>,
    pub original_steps: Vec<String>,
    pub annotations: Vec<StepAnnotation>,
    pub variant: Variant,
    #[serde(default = "unknown")]
    pub answer_changed: AnswerChanged,
}

fn unknown() -> AnswerChanged {
    AnswerChanged::Unknown
}

impl WorkItem {
    pub fn canonical(&self) -> CanonicalRecord {
        CanonicalRecord::assemble(
            &self.record,
            self.pass_rate,
            &self.original_steps,
            &self.annotations,
            &self.variant,
            self.answer_changed,
        )
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct InjectOutcome {
    pub items: Vec<WorkItem>,
    /// Requested codes whose producer reply was unusable.
    pub dropped_singles: usize,
    pub dropped_composites: usize,
    pub applicability_fallbacks: usize,
    /// Drawn code counts over the run.
    pub drawn: BTreeMap<ErrorCode, u64>,
}

pub fn inject(prepared: &[Prepared], cfg: &PipelineConfig, reg: &ProviderRegistry) -> Result<InjectOutcome> {
    let sim = reg.similarity();
    let injectors = cfg.roles.injector_pool()?;
    let applicability = par_map(cfg.workers, prepared, |p| {
        tag_applicability(&p.record.question, &p.steps, reg, &cfg.roles.annotator)
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut out = InjectOutcome::default();
    let mut state = cfg.sampling.state()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plans: Vec<Vec<ErrorCode>> = applicability
        .iter()
        .map(|a| {
            out.applicability_fallbacks += usize::from(a.fallback);
            state.sample_instance(&a.applicable, &mut rng)
        })
        .collect();
    for c in plans.iter().flatten() {
        *out.drawn.entry(*c).or_default() += 1;
    }

    let work: Vec<(&Prepared, &Vec<ErrorCode>)> = prepared.iter().zip(&plans).collect();
    let results = par_map(
        cfg.workers,
        &work,
        |(p, codes)| -> Result<(Vec<Variant>, usize, usize)> {
            let ctx = InjectionContext {
                instance_id: &p.record.instance_id,
                question: &p.record.question,
                steps: &p.steps,
                annotations: &p.annotations,
                step_bnc: p.step_bnc.as_deref(),
            };
            let singles = inject_instance(&ctx, codes, &injectors, reg, &sim, &cfg.inject, &cfg.severity)?;
            let comp = synthesize_composite(
                &ctx,
                &singles.variants,
                &cfg.composite,
                &cfg.roles.composer,
                reg,
                &cfg.inject,
                &cfg.severity,
            )?;
            let dropped = singles.dropped.len();
            let mut vs = singles.variants;
            vs.extend(comp.variants);
            Ok((vs, dropped, comp.dropped))
        },
    )?;
    for ((p, _), r) in work.iter().zip(results) {
        let (variants, ds, dc) = r?;
        out.dropped_singles += ds;
        out.dropped_composites += dc;
        out.items.extend(variants.into_iter().map(|variant| WorkItem {
            record: p.record.clone(),
            pass_rate: p.pass_rate,
            original_steps: p.steps.clone(),
            annotations: p.annotations.clone(),
            variant,
            answer_changed: AnswerChanged::Unknown,
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyOutcome {
    pub items: Vec<WorkItem>,
    pub reports: Vec<VerificationReport>,
    pub discarded: usize,
}

/// Diff verification, then the answer-impact judgment for survivors. A
/// failed judgment leaves the answer status unknown.
pub fn verify(items: &[WorkItem], cfg: &PipelineConfig, reg: &ProviderRegistry) -> Result<VerifyOutcome> {
    let results = par_map(cfg.workers, items, |item| {
        let (kept, mut report) = diff_verify(&item.original_steps, &item.variant, &cfg.verify, &cfg.severity);
        let kept = kept.map(|v| {
            let changed = answer_impact(&item.record, &v.corrupted_steps, reg, &cfg.roles.judge).unwrap_or_else(|e| {
                tracing::warn!(variant = %v.variant_id, "answer impact unavailable: {e}");
                AnswerChanged::Unknown
            });
            report.quality.answer_changed = changed;
            WorkItem {
                variant: v,
                answer_changed: changed,
                ..item.clone()
            }
        });
        (kept, report)
    })?;
    let mut out = VerifyOutcome::default();
    for (kept, report) in results {
        match kept {
            Some(i) => out.items.push(i),
            None => out.discarded += 1,
        }
        out.reports.push(report);
    }
    Ok(out)
}

/// Panel votes for every item. Unreviewed and incomplete items get a
/// decision without votes, which the consensus filter drops.
pub fn review_vote(
    items: &[WorkItem],
    import: &ImportReport,
    cfg: &PipelineConfig,
    reg: &ProviderRegistry,
) -> Result<Vec<ReviewDecision>> {
    let reason_panel = cfg.roles.panel()?;
    let annot_panel = cfg.roles.annot_panel()?;
    let by_id: BTreeMap<&str, &ReviewRecord> = import.records.iter().map(|r| (r.variant_id.as_str(), r)).collect();
    par_map(cfg.workers, items, |item| {
        let id = &item.variant.variant_id;
        let Some(rec) = by_id.get(id.as_str()) else {
            return Ok(ReviewDecision {
                variant_id: id.clone(),
                annotated: false,
                annotation_complete: false,
                reason: None,
                annot: None,
            });
        };
        if !rec.annotation_complete {
            return Ok(ReviewDecision {
                variant_id: id.clone(),
                annotated: true,
                annotation_complete: false,
                reason: None,
                annot: None,
            });
        }
        let ctx = VoteContext {
            question: &item.record.question,
            original_steps: &item.original_steps,
            variant: &item.variant,
        };
        Ok(ReviewDecision {
            variant_id: id.clone(),
            annotated: true,
            annotation_complete: true,
            reason: Some(vote(rec, Dimension::Reason, &ctx, &reason_panel, reg)?),
            annot: Some(vote(rec, Dimension::Annot, &ctx, &annot_panel, reg)?),
        })
    })?
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ReviewOutcome {
    pub items: Vec<WorkItem>,
    pub consensus: ConsensusOutcome,
    /// Retained items whose adopted revision could not be applied.
    pub deferred: Vec<String>,
}

/// Keeps consensus items and applies their adopted revisions.
pub fn review_apply(
    items: &[WorkItem],
    import: &ImportReport,
    decisions: &[ReviewDecision],
    cfg: &PipelineConfig,
    reg: &ProviderRegistry,
) -> Result<ReviewOutcome> {
    let consensus = consensus_filter(decisions);
    let records: BTreeMap<&str, &ReviewRecord> = import.records.iter().map(|r| (r.variant_id.as_str(), r)).collect();
    let decided: BTreeMap<&str, &ReviewDecision> = decisions.iter().map(|d| (d.variant_id.as_str(), d)).collect();
    let retained: Vec<&WorkItem> = items
        .iter()
        .filter(|i| consensus.retained.contains(&i.variant.variant_id))
        .collect();
    let results = par_map(cfg.workers, &retained, |item| -> Result<Option<WorkItem>> {
        let id = item.variant.variant_id.as_str();
        let (Some(rec), Some(d)) = (records.get(id), decided.get(id)) else {
            return Err(ForgeError::invalid(format!("{id}: retained without a record")));
        };
        let (Some(rv), Some(av)) = (&d.reason, &d.annot) else {
            return Err(ForgeError::invalid(format!("{id}: retained without votes")));
        };
        let rev = apply_revisions(
            &item.original_steps,
            &item.variant,
            rec,
            rv,
            av,
            &item.record.question,
            reg,
            &cfg.roles.rewriter,
            &cfg.severity,
        )?;
        Ok((!rev.deferred).then(|| WorkItem {
            original_steps: rev.original_steps,
            variant: rev.variant,
            ..(*item).clone()
        }))
    })?;
    let mut out = ReviewOutcome {
        consensus,
        ..Default::default()
    };
    for (item, r) in retained.iter().zip(results) {
        match r? {
            Some(i) => out.items.push(i),
            None => out.deferred.push(item.variant.variant_id.clone()),
        }
    }
    Ok(out)
}

/// Canonical records, each checked against the schema invariants.
pub fn to_canonical(items: &[WorkItem]) -> Result<Vec<CanonicalRecord>> {
    items
        .iter()
        .map(|i| {
            let c = i.canonical();
            c.validate()
                .map_err(|e| ForgeError::invalid(format!("{}: {e}", c.variant_id)))?;
            Ok(c)
        })
        .collect()
}

/// Everything one offline run produces.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub filter: FilterOutcome,
    pub reason: ReasonOutcome,
    pub networks: ErnOutcome,
    pub blueprints: BlueprintOutcome,
    pub injected: InjectOutcome,
    pub verified: VerifyOutcome,
    pub release: SplitOutcome,
}

/// Construction stages end to end, without expert review.
pub fn run_construction(records: &[QuestionRecord], cfg: &PipelineConfig, reg: &ProviderRegistry) -> Result<RunOutput> {
    let filter_out = filter(records, cfg, reg)?;
    let reason_out = reason(&filter_out.kept, cfg, reg)?;
    let networks = build_networks(&reason_out.instances, cfg, reg)?;
    let blueprints = prepare(&reason_out.instances, &networks.networks, cfg, reg)?;
    let injected = inject(&blueprints.prepared, cfg, reg)?;
    let verified = verify(&injected.items, cfg, reg)?;
    let release = split(to_canonical(&verified.items)?, &cfg.split, cfg.seed)?;
    Ok(RunOutput {
        filter: filter_out,
        reason: reason_out,
        networks,
        blueprints,
        injected,
        verified,
        release,
    })
}

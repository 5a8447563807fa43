use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use forge_core::config::{PipelineConfig, ProviderSpec};
use forge_core::corpus::{ingest_corpus, QuestionRecord, SchemaMap};
use forge_core::ern::Ern;
use forge_core::eval::metrics::Population;
use forge_core::eval::{
    build_hard_subset, compute_metrics, eval_chains, per_error_type_breakdown, run_verifier, score_probability_rows,
    score_transcripts, ProbabilityRow, Strategy, Trajectory, Transcript,
};
use forge_core::inject::SamplingState;
use forge_core::io;
use forge_core::pipeline::{self, Instance, Prepared, WorkItem};
use forge_core::providers::ProviderRegistry;
use forge_core::release::{compute_statistics, split, BucketStats, CanonicalRecord};
use forge_core::review::{import_annotations, ImportReport, ReviewDecision};
use forge_core::ForgeError;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{Cli, Command, Global, PopulationArg, ProtocolArg};
use crate::{serve, CliError, CliResult};

/// Configuration after the file, `--set` overrides, and global flags.
fn load_config(g: &Global) -> CliResult<PipelineConfig> {
    let mut cfg = PipelineConfig::load(g.config.as_deref(), &g.overrides)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(ws) = &g.workspace {
        cfg.paths.workspace = ws.clone();
    }
    if let Some(path) = &g.fixtures {
        for spec in cfg.providers.values_mut() {
            *spec = ProviderSpec::Fixture {
                path: path.clone(),
                fallback: true,
            };
        }
    } else if g.mock {
        for spec in cfg.providers.values_mut() {
            *spec = ProviderSpec::Simulated { seed: None };
        }
    }
    Ok(cfg)
}

fn finish(cfg: &PipelineConfig) -> CliResult<()> {
    cfg.validate()?;
    Ok(())
}

fn registry(cfg: &PipelineConfig) -> CliResult<ProviderRegistry> {
    Ok(cfg.build_registry()?)
}

fn in_workspace(cfg: &PipelineConfig, given: &Option<PathBuf>, name: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.paths.workspace.join(name))
}

/// `corpus.jsonl` + `report.json` -> `corpus.report.json`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Outputs never overwrite inputs.
fn distinct(inputs: &[&Path], outputs: &[&Path]) -> CliResult<()> {
    let key = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    for o in outputs {
        if inputs.iter().any(|i| key(i) == key(o)) {
            return Err(CliError::Usage(format!(
                "output {} would overwrite an input",
                o.display()
            )));
        }
    }
    Ok(())
}

fn read<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    Ok(io::read_jsonl(path)?)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(ForgeError::invalid(format!("{}: {e}", path.display()))))
}

/// TOML or JSON by extension.
fn read_table<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Data(ForgeError::invalid(format!("{}: {e}", path.display()))))
}

fn write<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    Ok(io::write_jsonl(path, items)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    Ok(io::write_json(path, value)?)
}

/// Released records, from either variant work items or canonical lines.
pub(crate) fn load_records(path: &Path) -> CliResult<Vec<CanonicalRecord>> {
    let lines: Vec<Value> = read(path)?;
    if lines.first().is_some_and(|v| v.get("variant").is_some()) {
        let items: Vec<WorkItem> = read(path)?;
        Ok(pipeline::to_canonical(&items)?)
    } else {
        let records: Vec<CanonicalRecord> = read(path)?;
        for r in &records {
            r.validate()
                .map_err(|e| ForgeError::invalid(format!("{}: {e}", r.variant_id)))?;
        }
        Ok(records)
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    match cli.command {
        Command::Ingest(a) => {
            let cfg = load_config(g)?;
            let output = in_workspace(&cfg, &a.output, "corpus.jsonl");
            distinct(&[&a.input], &[&output])?;
            let schema: SchemaMap = match &a.schema_map {
                Some(p) => read_table(p)?,
                None => SchemaMap::default(),
            };
            let report = ingest_corpus(&a.input, &schema)?;
            write(&output, &report.records)?;
            write_json(
                &sidecar(&output, "report.json"),
                &json!({"rejections": report.rejections, "duplicates": report.duplicates}),
            )?;
            println!(
                "ingested {} records; {} rejected, {} duplicate ids",
                report.records.len(),
                report.rejections.len(),
                report.duplicates.len()
            );
        }
        Command::Filter(a) => {
            let mut cfg = load_config(g)?;
            if let Some(k) = a.k {
                cfg.difficulty.samples_k = k;
            }
            if let Some(t) = a.temp {
                cfg.difficulty.temperature = t;
            }
            if let Some(t) = a.theta {
                cfg.difficulty.pass_threshold = t;
            }
            finish(&cfg)?;
            let input = in_workspace(&cfg, &a.input, "corpus.jsonl");
            let output = in_workspace(&cfg, &a.output, "filtered.jsonl");
            distinct(&[&input], &[&output])?;
            let records: Vec<QuestionRecord> = read(&input)?;
            let out = pipeline::filter(&records, &cfg, &registry(&cfg)?)?;
            write(&output, &out.kept)?;
            write_json(&sidecar(&output, "pass_rates.json"), &out.rates)?;
            println!("kept {} of {} questions", out.kept.len(), records.len());
        }
        Command::Reason(a) => {
            let mut cfg = load_config(g)?;
            if let Some(m) = a.max_attempts {
                cfg.max_reason_attempts = m;
            }
            finish(&cfg)?;
            let input = in_workspace(&cfg, &a.input, "filtered.jsonl");
            let output = in_workspace(&cfg, &a.output, "reasoned.jsonl");
            distinct(&[&input], &[&output])?;
            let instances: Vec<Instance> = read(&input)?;
            let out = pipeline::reason(&instances, &cfg, &registry(&cfg)?)?;
            write(&output, &out.instances)?;
            write(&sidecar(&output, "unverifiable.jsonl"), &out.unverifiable)?;
            println!(
                "{} chains ready, {} unverifiable",
                out.instances.len(),
                out.unverifiable.len()
            );
        }
        Command::Ern(a) => {
            let mut cfg = load_config(g)?;
            if let Some(mu) = a.mu {
                cfg.voting.min_support = mu;
            }
            if let Some(d) = a.delta_e {
                cfg.voting.entity_threshold = d;
            }
            if let Some(d) = a.delta_r {
                cfg.voting.relation_threshold = d;
            }
            finish(&cfg)?;
            let input = in_workspace(&cfg, &a.input, "reasoned.jsonl");
            let output = in_workspace(&cfg, &a.output, "networks.jsonl");
            let dump = a.dump.clone().unwrap_or_else(|| sidecar(&output, "edges.jsonl"));
            distinct(&[&input], &[&output, &dump])?;
            let instances: Vec<Instance> = read(&input)?;
            let out = pipeline::build_networks(&instances, &cfg, &registry(&cfg)?)?;
            write(&output, &out.networks)?;
            let edges: Vec<Value> = out.networks.iter().flat_map(Ern::dump_lines).collect();
            write(&dump, &edges)?;
            for s in &out.skipped {
                tracing::warn!(id = %s.id, "no network: {}", s.reason);
            }
            let candidates: usize = out.networks.iter().map(|e| e.candidate_count).sum();
            println!(
                "{} networks, {} of {} candidate triplets accepted, {} skipped",
                out.networks.len(),
                edges.len(),
                candidates,
                out.skipped.len()
            );
        }
        Command::Blueprint(a) => {
            let mut cfg = load_config(g)?;
            if let Some(e) = a.eta_min {
                cfg.distill.min_edges = e;
            }
            if let Some(b) = a.bridge_threshold {
                cfg.distill.bridge_threshold = b;
            }
            finish(&cfg)?;
            let input = in_workspace(&cfg, &a.input, "reasoned.jsonl");
            let networks_path = in_workspace(&cfg, &a.networks, "networks.jsonl");
            let output = in_workspace(&cfg, &a.output, "prepared.jsonl");
            distinct(&[&input, &networks_path], &[&output])?;
            let instances: Vec<Instance> = read(&input)?;
            let networks: Vec<Ern> = if networks_path.exists() {
                read(&networks_path)?
            } else {
                Vec::new()
            };
            let out = pipeline::prepare(&instances, &networks, &cfg, &registry(&cfg)?)?;
            write(&output, &out.prepared)?;
            write(&sidecar(&output, "skipped.jsonl"), &out.skipped)?;
            let blueprints = out.prepared.iter().filter(|p| p.blueprint.is_some()).count();
            println!(
                "{} chains prepared ({} from blueprints), {} skipped",
                out.prepared.len(),
                blueprints,
                out.skipped.len()
            );
        }
        Command::Inject(a) => {
            let mut cfg = load_config(g)?;
            if let Some(p) = &a.pi_config {
                cfg.sampling.target = Some(read_table::<BTreeMap<String, f64>>(p)?);
            }
            if let Some(e) = a.epsilon {
                cfg.sampling.epsilon = e;
            }
            if let Some(k) = a.k_comp {
                cfg.composite.k_comp = k;
            }
            finish(&cfg)?;
            let input = in_workspace(&cfg, &a.input, "prepared.jsonl");
            let output = in_workspace(&cfg, &a.output, "injected.jsonl");
            distinct(&[&input], &[&output])?;
            let prepared: Vec<Prepared> = read(&input)?;
            let out = pipeline::inject(&prepared, &cfg, &registry(&cfg)?)?;
            write(&output, &out.items)?;
            let composites = out.items.iter().filter(|i| i.variant.is_composite).count();
            println!(
                "{} variants ({} composite); dropped {} single and {} composite attempts",
                out.items.len(),
                composites,
                out.dropped_singles,
                out.dropped_composites
            );
            let state: SamplingState = cfg.sampling.state()?;
            let drawn: Vec<String> = out.drawn.iter().map(|(c, n)| format!("{c}={n}")).collect();
            println!("drawn types: {} (floor {})", drawn.join(" "), state.epsilon());
        }
        Command::Verify(a) => {
            let mut cfg = load_config(g)?;
            if let Some(t) = a.tf_threshold {
                cfg.verify.tf_threshold = t;
            }
            finish(&cfg)?;
            let input = in_workspace(&cfg, &a.input, "injected.jsonl");
            let output = in_workspace(&cfg, &a.output, "verified.jsonl");
            let report = a.report.clone().unwrap_or_else(|| sidecar(&output, "reports.jsonl"));
            distinct(&[&input], &[&output, &report])?;
            let items: Vec<WorkItem> = read(&input)?;
            let out = pipeline::verify(&items, &cfg, &registry(&cfg)?)?;
            write(&output, &out.items)?;
            write(&report, &out.reports)?;
            let corrected = out
                .reports
                .iter()
                .filter(|r| !r.quality.discarded && r.reported != r.verified)
                .count();
            println!(
                "verified {} of {} variants; {} discarded; {} label sets corrected",
                out.items.len(),
                items.len(),
                out.discarded,
                corrected
            );
        }
        Command::ReviewImport(a) => {
            let cfg = load_config(g)?;
            let annotations = in_workspace(&cfg, &a.annotations, "annotations.jsonl");
            let variants = in_workspace(&cfg, &a.variants, "verified.jsonl");
            let output = in_workspace(&cfg, &a.output, "review_import.json");
            distinct(&[&annotations, &variants], &[&output])?;
            let known: BTreeSet<String> = load_records(&variants)?.into_iter().map(|r| r.variant_id).collect();
            let report = import_annotations(&annotations, &known)?;
            write_json(&output, &report)?;
            for r in &report.rejections {
                eprintln!("line {}: {}", r.line, r.reason);
            }
            println!(
                "{} annotations imported ({} incomplete), {} rejected",
                report.records.len(),
                report.incomplete,
                report.rejections.len()
            );
        }
        Command::ReviewVote(a) => {
            let cfg = load_config(g)?;
            let variants = in_workspace(&cfg, &a.variants, "verified.jsonl");
            let import = in_workspace(&cfg, &a.import, "review_import.json");
            let output = in_workspace(&cfg, &a.output, "review_votes.jsonl");
            distinct(&[&variants, &import], &[&output])?;
            let items: Vec<WorkItem> = read(&variants)?;
            let report: ImportReport = read_json(&import)?;
            let decisions = pipeline::review_vote(&items, &report, &cfg, &registry(&cfg)?)?;
            write(&output, &decisions)?;
            let voted = decisions.iter().filter(|d| d.reason.is_some()).count();
            println!("{voted} of {} variants voted", decisions.len());
        }
        Command::ReviewApply(a) => {
            let cfg = load_config(g)?;
            let variants = in_workspace(&cfg, &a.variants, "verified.jsonl");
            let import = in_workspace(&cfg, &a.import, "review_import.json");
            let decisions_path = in_workspace(&cfg, &a.decisions, "review_votes.jsonl");
            let output = in_workspace(&cfg, &a.output, "reviewed.jsonl");
            let summary = sidecar(&output, "consensus.json");
            distinct(&[&variants, &import, &decisions_path], &[&output, &summary])?;
            let items: Vec<WorkItem> = read(&variants)?;
            let report: ImportReport = read_json(&import)?;
            let decisions: Vec<ReviewDecision> = read(&decisions_path)?;
            let out = pipeline::review_apply(&items, &report, &decisions, &cfg, &registry(&cfg)?)?;
            write(&output, &out.items)?;
            write_json(&summary, &json!({"consensus": out.consensus, "deferred": out.deferred}))?;
            println!(
                "{} retained, {} dropped, {} deferred",
                out.items.len(),
                out.consensus.dropped.len(),
                out.deferred.len()
            );
        }
        Command::Split(a) => {
            let mut cfg = load_config(g)?;
            if let Some(f) = a.test_fraction {
                cfg.split.target_test_fraction = f;
            }
            finish(&cfg)?;
            let input = a.input.clone().unwrap_or_else(|| {
                let reviewed = cfg.paths.workspace.join("reviewed.jsonl");
                if reviewed.exists() {
                    reviewed
                } else {
                    cfg.paths.workspace.join("verified.jsonl")
                }
            });
            let dir = a.output_dir.clone().unwrap_or_else(|| cfg.paths.workspace.clone());
            let (all, train, test) = (
                dir.join("dataset.jsonl"),
                dir.join("train.jsonl"),
                dir.join("test.jsonl"),
            );
            distinct(&[&input], &[&all, &train, &test])?;
            let records = load_records(&input)?;
            let out = split(records, &cfg.split, cfg.seed)?;
            write(&train, &out.train)?;
            write(&test, &out.test)?;
            let combined: Vec<&CanonicalRecord> = out.train.iter().chain(&out.test).collect();
            write(&all, &combined)?;
            println!(
                "{} train, {} test ({} moved to test)",
                out.train.len(),
                out.test.len(),
                out.reassigned
            );
            if let Some(s) = out.shortfall {
                eprintln!(
                    "warning: test split reached {} of {} targeted",
                    s.achieved_test, s.target_test
                );
            }
        }
        Command::Stats(a) => {
            let cfg = load_config(g)?;
            let input = in_workspace(&cfg, &a.input, "dataset.jsonl");
            let stats = compute_statistics(&load_records(&input)?);
            if a.json {
                println!("{}", serde_json::to_string_pretty(&stats).map_err(ForgeError::from)?);
            } else {
                print_stats_table(&stats.overall, &stats.by_code);
            }
        }
        Command::Eval(a) => {
            let cfg = load_config(g)?;
            let dataset = in_workspace(&cfg, &a.dataset, "dataset.jsonl");
            let records = load_records(&dataset)?;
            let chains = eval_chains(&records, a.include_original);
            let (preds, unscored) = match a.protocol {
                ProtocolArg::Prob => score_probability_rows(&read::<ProbabilityRow>(&a.predictions)?, &chains)?,
                ProtocolArg::Gen => score_transcripts(&read::<Transcript>(&a.predictions)?, &chains),
            };
            let population = match a.population {
                PopulationArg::Erroneous => Population::Erroneous,
                PopulationArg::All => Population::All,
            };
            let overall = compute_metrics(&preds, &chains, population)?;
            let by_type = if a.by_type {
                Some(per_error_type_breakdown(&preds, &chains)?)
            } else {
                None
            };
            let report = json!({
                "overall": overall,
                "by_type": by_type,
                "unscored_chains": unscored,
            });
            match &a.output {
                Some(p) => {
                    distinct(&[&dataset, &a.predictions], &[p])?;
                    write_json(p, &report)?;
                }
                None => println!("{}", serde_json::to_string_pretty(&report).map_err(ForgeError::from)?),
            }
            let pct = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{:.1}", 100.0 * v));
            eprintln!(
                "PRMScore {:.4}  F1 {:.4}  F1_neg {:.4}  acc_pos {}  acc_neg {}  bias {}  first {}  ({} unscored)",
                overall.prm_score,
                overall.f1,
                overall.f1_neg,
                pct(overall.acc_pos),
                pct(overall.acc_neg),
                pct(overall.bias_gap),
                pct(overall.first),
                unscored.len()
            );
        }
        Command::Verifier(a) => {
            let strategy: Strategy = a
                .strategy
                .parse()
                .map_err(|_| CliError::Usage(format!("unknown strategy '{}' (cot, sc, bon, sc_rm)", a.strategy)))?;
            let trajectories: Vec<Trajectory> = read(&a.input)?;
            let gold: Option<BTreeMap<String, String>> = a.gold.as_deref().map(read_json).transpose()?;
            let report = run_verifier(strategy, &trajectories, a.n, gold.as_ref())?;
            match &a.output {
                Some(p) => {
                    distinct(&[&a.input], &[p])?;
                    write_json(p, &report)?;
                }
                None => println!("{}", serde_json::to_string_pretty(&report).map_err(ForgeError::from)?),
            }
            if let Some(acc) = report.accuracy {
                eprintln!(
                    "{} accuracy {:.1}% over {} questions",
                    a.strategy,
                    100.0 * acc,
                    report.selections.len()
                );
            }
        }
        Command::HardSubset(a) => {
            let cfg = load_config(g)?;
            let input = in_workspace(&cfg, &a.input, "dataset.jsonl");
            let output = in_workspace(&cfg, &a.output, "hard.jsonl");
            distinct(&[&input], &[&output])?;
            let subset = build_hard_subset(&load_records(&input)?, a.size);
            write(&output, &subset.records)?;
            println!(
                "{} records selected ({} qualify)",
                subset.records.len(),
                subset.qualifying
            );
            if let Some(short) = subset.shortfall() {
                eprintln!("warning: {short} short of the requested {}", a.size);
            }
        }
        Command::Serve(a) => {
            let cfg = load_config(g)?;
            let variants = in_workspace(&cfg, &a.variants, "verified.jsonl");
            let annotations = in_workspace(&cfg, &a.annotations, "annotations.jsonl");
            distinct(&[&variants], &[&annotations])?;
            serve::run(serve::Settings {
                records: load_records(&variants)?,
                annotations,
                host: a.host,
                port: a.port,
                static_dir: a.static_dir,
            })?;
        }
    }
    Ok(())
}

fn print_stats_table(overall: &Option<BucketStats>, by_code: &BTreeMap<forge_core::taxonomy::ErrorCode, BucketStats>) {
    println!(
        "{:<8} {:>9} {:>6} {:>8} {:>8} {:>8} {:>9}",
        "type", "variants", "test", "steps", "errors", "first", "q chars"
    );
    let row = |label: &str, b: &BucketStats| {
        println!(
            "{:<8} {:>9} {:>6} {:>8.2} {:>8.2} {:>8.2} {:>9.1}",
            label,
            b.instances,
            b.test_instances,
            b.avg_steps,
            b.avg_error_steps,
            b.avg_first_error,
            b.avg_question_chars
        );
    };
    for (code, b) in by_code {
        row(code.as_str(), b);
    }
    match overall {
        Some(b) => row("all", b),
        None => println!("(empty dataset)"),
    }
}

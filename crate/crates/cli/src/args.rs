use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "forge",
    version,
    about = "Build step-level error benchmarks and score verifiers against them"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set verify.tf_threshold=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Replace every provider with a seeded offline simulator.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Replay recorded replies from this fixture file (implies `--mock`
    /// for requests it does not cover).
    #[arg(long, global = true, value_name = "FILE")]
    pub fixtures: Option<PathBuf>,
    /// Workspace directory for default input and output paths.
    #[arg(long, global = true)]
    pub workspace: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a raw corpus into question records.
    Ingest(Ingest),
    /// Keep questions the probe model rarely solves.
    Filter(Filter),
    /// Produce verified reasoning chains for questions without one.
    Reason(Reason),
    /// Extract and vote knowledge networks.
    Ern(Ern),
    /// Distill blueprints, then linearize and annotate chains.
    Blueprint(Blueprint),
    /// Plant typed errors into annotated chains.
    Inject(Inject),
    /// Check every error label against the actual text change.
    Verify(Verify),
    /// Validate an expert annotation file.
    ReviewImport(ReviewImport),
    /// Ask the voter panels about each expert judgment.
    ReviewVote(ReviewVote),
    /// Keep consensus variants and apply adopted revisions.
    ReviewApply(ReviewApply),
    /// Assemble the release and assign train/test splits.
    Split(SplitCmd),
    /// Summary statistics of a released dataset.
    Stats(Stats),
    /// Score step-level predictions against a dataset.
    Eval(Eval),
    /// Select answers from sampled trajectories.
    Verifier(VerifierCmd),
    /// Extract the subtle, answer-preserving subset.
    HardSubset(HardSubset),
    /// Run the review service.
    Serve(Serve),
}

#[derive(Debug, Args)]
pub struct Ingest {
    #[arg(long)]
    pub input: PathBuf,
    /// Field mapping (TOML or JSON with `fields` and `defaults` tables).
    #[arg(long)]
    pub schema_map: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Filter {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long)]
    pub temp: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Reason {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
}

#[derive(Debug, Args)]
pub struct Ern {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Line-per-edge dump of the voted networks.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[arg(long)]
    pub mu: Option<usize>,
    #[arg(long)]
    pub delta_e: Option<f64>,
    #[arg(long)]
    pub delta_r: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Blueprint {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub networks: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub eta_min: Option<usize>,
    #[arg(long)]
    pub bridge_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Inject {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Target type distribution: a `{code: weight}` table (TOML or JSON).
    #[arg(long)]
    pub pi_config: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub k_comp: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Verify {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-variant verification reports.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub tf_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReviewImport {
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub variants: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReviewVote {
    #[arg(long)]
    pub variants: Option<PathBuf>,
    #[arg(long)]
    pub import: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReviewApply {
    #[arg(long)]
    pub variants: Option<PathBuf>,
    #[arg(long)]
    pub import: Option<PathBuf>,
    #[arg(long)]
    pub decisions: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitCmd {
    /// Variants (reviewed or verified) or released records. Defaults to
    /// the reviewed file when present, the verified file otherwise.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory for `dataset.jsonl`, `train.jsonl`, and `test.jsonl`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Stats {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Prob,
    Gen,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PopulationArg {
    Erroneous,
    All,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Probability rows or generative transcripts, one JSON object per line.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum, default_value = "gen")]
    pub protocol: ProtocolArg,
    #[arg(long, value_enum, default_value = "erroneous")]
    pub population: PopulationArg,
    /// Also score each question's original chain (all steps correct).
    #[arg(long)]
    pub include_original: bool,
    #[arg(long)]
    pub by_type: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifierCmd {
    /// Trajectories, one JSON object per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "sc_rm")]
    pub strategy: String,
    #[arg(long, default_value_t = forge_core::eval::verifier::DEFAULT_N)]
    pub n: usize,
    /// Gold answers as a JSON object `{question_id: answer}`.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HardSubset {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = forge_core::eval::hard::DEFAULT_HARD_SIZE)]
    pub size: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Serve {
    /// Variants under review.
    #[arg(long)]
    pub variants: Option<PathBuf>,
    /// Annotation file the service appends to.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Built console assets served under `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

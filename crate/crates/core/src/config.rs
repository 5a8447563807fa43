//! One TOML file configures every stage.
//!
//! String values may reference environment variables as `${NAME}`; an
//! unset variable is a configuration error. Command-line overrides are
//! `dotted.key=value` pairs applied before deserialization, so they pass
//! through the same validation as file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::blueprint::{BncWeights, DistillConfig};
use crate::corpus::DifficultyConfig;
use crate::ern::VotingConfig;
use crate::error::{ForgeError, Result};
use crate::inject::sampling::{default_target, target_from_map, SamplingState};
use crate::inject::{CompositeConfig, InjectConfig, SeverityConfig};
use crate::providers::cache::CachedProvider;
use crate::providers::mock::FixtureProvider;
use crate::providers::simulate::SimulatedProvider;
use crate::providers::{ChatProvider, ProviderPool, ProviderRegistry};
use crate::release::SplitPolicy;
use crate::review::VoterPanel;
use crate::verify::VerifyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    /// Seeded offline stand-in; the seed defaults to the pipeline seed.
    Simulated {
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Recorded replies; unmatched requests fall back to the simulator
    /// when `fallback` is set.
    Fixture {
        path: PathBuf,
        #[serde(default)]
        fallback: bool,
    },
    /// OpenAI-compatible endpoint.
    Http {
        base_url: String,
        model: String,
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderSpec {
    #[default]
    TokenSet,
    Http {
        base_url: String,
        model: String,
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

/// Which provider plays which part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Roles {
    pub probe: String,
    pub reasoners: Vec<String>,
    pub extractors: Vec<String>,
    /// Sufficiency checks, step annotation, applicability tagging.
    pub annotator: String,
    pub injectors: Vec<String>,
    pub composer: String,
    /// Answer-impact judgments.
    pub judge: String,
    pub voters: [String; 3],
    /// Panel for the annotation dimension; the reasoning panel when absent.
    pub annot_voters: Option<[String; 3]>,
    pub rewriter: String,
}

impl Default for Roles {
    fn default() -> Self {
        let all = || vec!["sim-a".to_string(), "sim-b".into(), "sim-c".into()];
        Roles {
            probe: "sim-a".into(),
            reasoners: all(),
            extractors: all(),
            annotator: "sim-a".into(),
            injectors: all(),
            composer: "sim-b".into(),
            judge: "sim-c".into(),
            voters: ["sim-a".into(), "sim-b".into(), "sim-c".into()],
            annot_voters: None,
            rewriter: "sim-a".into(),
        }
    }
}

impl Roles {
    fn all_ids(&self) -> impl Iterator<Item = &String> {
        [
            &self.probe,
            &self.annotator,
            &self.composer,
            &self.judge,
            &self.rewriter,
        ]
        .into_iter()
        .chain(&self.reasoners)
        .chain(&self.extractors)
        .chain(&self.injectors)
        .chain(&self.voters)
        .chain(self.annot_voters.iter().flatten())
    }

    pub fn reasoner_pool(&self) -> Result<ProviderPool> {
        Ok(ProviderPool::new(&self.reasoners)?)
    }

    pub fn injector_pool(&self) -> Result<ProviderPool> {
        Ok(ProviderPool::new(&self.injectors)?)
    }

    pub fn panel(&self) -> Result<VoterPanel> {
        let p = VoterPanel(self.voters.clone());
        p.validate()?;
        Ok(p)
    }

    pub fn annot_panel(&self) -> Result<VoterPanel> {
        let p = VoterPanel(self.annot_voters.clone().unwrap_or_else(|| self.voters.clone()));
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub epsilon: f64,
    /// Code -> weight; all fourteen codes when present.
    pub target: Option<BTreeMap<String, f64>>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            epsilon: crate::inject::sampling::DEFAULT_EPSILON,
            target: None,
        }
    }
}

impl SamplingConfig {
    pub fn state(&self) -> Result<SamplingState> {
        let target = match &self.target {
            Some(m) => target_from_map(m)?,
            None => default_target(),
        };
        SamplingState::new(target, self.epsilon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub workspace: PathBuf,
    /// Response cache shared by every provider; off when absent.
    pub cache_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            workspace: PathBuf::from("workspace"),
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    /// Transport retries per provider call.
    pub retries: u32,
    pub max_reason_attempts: u32,
    pub paths: Paths,
    pub providers: BTreeMap<String, ProviderSpec>,
    pub embedder: EmbedderSpec,
    pub roles: Roles,
    pub difficulty: DifficultyConfig,
    pub voting: VotingConfig,
    pub distill: DistillConfig,
    pub bnc: BncWeights,
    pub inject: InjectConfig,
    pub composite: CompositeConfig,
    pub severity: SeverityConfig,
    pub sampling: SamplingConfig,
    pub verify: VerifyConfig,
    pub split: SplitPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let providers = ["sim-a", "sim-b", "sim-c"]
            .into_iter()
            .map(|id| (id.to_string(), ProviderSpec::Simulated { seed: None }))
            .collect();
        PipelineConfig {
            seed: 7,
            workers: 4,
            retries: 2,
            max_reason_attempts: 5,
            paths: Paths::default(),
            providers,
            embedder: EmbedderSpec::default(),
            roles: Roles::default(),
            difficulty: DifficultyConfig::default(),
            voting: VotingConfig::default(),
            distill: DistillConfig::default(),
            bnc: BncWeights::default(),
            inject: InjectConfig::default(),
            composite: CompositeConfig::default(),
            severity: SeverityConfig::default(),
            sampling: SamplingConfig::default(),
            verify: VerifyConfig::default(),
            split: SplitPolicy::default(),
        }
    }
}

fn var_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex"))
}

/// Replaces `${NAME}` in one string using `lookup`.
pub fn interpolate(s: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut last = 0;
    for cap in var_re().captures_iter(s) {
        let m = cap.get(0).expect("whole match");
        let name = &cap[1];
        let value =
            lookup(name).ok_or_else(|| ForgeError::Config(format!("environment variable {name} is not set")))?;
        out.push_str(&s[last..m.start()]);
        out.push_str(&value);
        last = m.end();
    }
    out.push_str(&s[last..]);
    Ok(out)
}

fn interpolate_tree(v: &mut toml::Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<()> {
    match v {
        toml::Value::String(s) => *s = interpolate(s, lookup)?,
        toml::Value::Array(a) => {
            for x in a {
                interpolate_tree(x, lookup)?;
            }
        }
        toml::Value::Table(t) => {
            for (_, x) in t.iter_mut() {
                interpolate_tree(x, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Sets `dotted.key` to `raw`, read as a TOML value when it parses as one
/// and as a plain string otherwise.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ForgeError::Config(format!("override '{assignment}' is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ForgeError::Config(format!("bad override key '{key}'")));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| ForgeError::Config(format!("override '{key}' crosses a non-table value")))?;
        node = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| ForgeError::Config(format!("override '{key}' crosses a non-table value")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parses, interpolates, applies overrides, then validates.
    pub fn from_toml_str(text: &str, overrides: &[String], lookup: &dyn Fn(&str) -> Option<String>) -> Result<Self> {
        let mut root: toml::Value = toml::from_str::<toml::Table>(text)
            .map(toml::Value::Table)
            .map_err(|e| ForgeError::Config(e.to_string()))?;
        interpolate_tree(&mut root, lookup)?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: PipelineConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| ForgeError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or starts from the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ForgeError::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides, &|k| std::env::var(k).ok())
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=256).contains(&self.workers) {
            return Err(ForgeError::Config("workers must lie in [1, 256]".into()));
        }
        if self.max_reason_attempts < 1 {
            return Err(ForgeError::Config("max_reason_attempts must be at least 1".into()));
        }
        if self.retries > 10 {
            return Err(ForgeError::Config("retries must lie in [0, 10]".into()));
        }
        let b = &self.bnc;
        if [b.alpha, b.beta, b.gamma].iter().any(|w| !(0.0..=1.0).contains(w))
            || (b.alpha + b.beta + b.gamma - 1.0).abs() > 1e-9
        {
            return Err(ForgeError::Config("bnc weights must lie in [0, 1] and sum to 1".into()));
        }
        if !(0.0..=2.0).contains(&self.inject.temperature) {
            return Err(ForgeError::Config("inject temperature must lie in [0, 2]".into()));
        }
        if self.inject.parse_retries > 5 {
            return Err(ForgeError::Config("inject parse_retries must lie in [0, 5]".into()));
        }
        if self.composite.k_comp > 10 {
            return Err(ForgeError::Config("k_comp must lie in [0, 10]".into()));
        }
        self.difficulty.validate()?;
        self.voting.validate()?;
        self.distill.validate()?;
        self.severity.validate()?;
        self.verify.validate()?;
        self.split.validate()?;
        self.sampling.state()?;
        self.roles.panel()?;
        self.roles.annot_panel()?;
        if self.roles.reasoners.is_empty() || self.roles.injectors.is_empty() || self.roles.extractors.is_empty() {
            return Err(ForgeError::Config(
                "reasoner, extractor, and injector lists must be non-empty".into(),
            ));
        }
        if let Some(id) = self.roles.all_ids().find(|id| !self.providers.contains_key(*id)) {
            return Err(ForgeError::Config(format!("role refers to undefined provider '{id}'")));
        }
        Ok(())
    }

    fn chat_backend(&self, id: &str, spec: &ProviderSpec) -> Result<Arc<dyn ChatProvider>> {
        Ok(match spec {
            ProviderSpec::Simulated { seed } => Arc::new(SimulatedProvider::new(id, seed.unwrap_or(self.seed))),
            ProviderSpec::Fixture { path, fallback } => {
                Arc::new(FixtureProvider::load(id, path, fallback.then_some(self.seed))?)
            }
            #[cfg(feature = "http")]
            ProviderSpec::Http {
                base_url,
                model,
                auth_env,
                timeout_secs,
            } => Arc::new(crate::providers::http::HttpChatProvider::new(
                id,
                crate::providers::http::HttpConfig {
                    base_url: base_url.clone(),
                    auth_env: auth_env.clone(),
                    model: model.clone(),
                    timeout_secs: *timeout_secs,
                },
            )),
            #[cfg(not(feature = "http"))]
            ProviderSpec::Http { .. } => {
                return Err(ForgeError::Config(format!("provider '{id}' needs the http feature")))
            }
        })
    }

    /// Every configured provider, wrapped in the response cache when one
    /// is configured.
    pub fn build_registry(&self) -> Result<ProviderRegistry> {
        let mut reg = ProviderRegistry::new().with_retries(self.retries);
        for (id, spec) in &self.providers {
            let backend = self.chat_backend(id, spec)?;
            let backend: Arc<dyn ChatProvider> = match &self.paths.cache_dir {
                Some(dir) => Arc::new(CachedProvider::new(backend, dir.clone())),
                None => backend,
            };
            reg.register(backend);
        }
        match &self.embedder {
            EmbedderSpec::TokenSet => {}
            #[cfg(feature = "http")]
            EmbedderSpec::Http {
                base_url,
                model,
                auth_env,
                timeout_secs,
            } => reg.set_embedder(Arc::new(crate::providers::http::HttpEmbedder::new(
                "embedder",
                crate::providers::http::HttpConfig {
                    base_url: base_url.clone(),
                    auth_env: auth_env.clone(),
                    model: model.clone(),
                    timeout_secs: *timeout_secs,
                },
            ))),
            #[cfg(not(feature = "http"))]
            EmbedderSpec::Http { .. } => return Err(ForgeError::Config("http embedder needs the http feature".into())),
        }
        Ok(reg)
    }
}

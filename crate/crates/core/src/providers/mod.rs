//! Chat-completion and embedding backends behind one contract.
//!
//! Every pipeline stage talks to models through [`ProviderRegistry`], which
//! resolves a provider id, retries transport failures, and parses
//! structured replies. Offline runs register mock providers instead of
//! HTTP ones; nothing downstream can tell the difference.

pub mod cache;
pub mod embed;
#[cfg(feature = "http")]
pub mod http;
pub mod mock;
pub mod prompts;
pub mod simulate;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use embed::{cosine_sim, Embedder, EmbeddingVector, SimilarityCache, TokenSetEmbedder};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    /// Retryable network/transport failure.
    #[error("transport error: {0}")]
    Transport(String),

    #[error("provider {provider} unavailable after {attempts} attempts: {last}")]
    Unavailable {
        provider: String,
        attempts: u32,
        last: String,
    },

    #[error("unknown provider '{0}'")]
    Unknown(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("backend error: {0}")]
    Backend(String),
}

/// What a request is for. Carried for logging, caching and offline simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ProbeAnswer,
    Reason,
    ExtractTriplets,
    Sufficiency,
    Supplement,
    Linearize,
    Annotate,
    Applicability,
    Inject,
    Composite,
    AnswerImpact,
    VoteReason,
    VoteAnnotation,
    Rewrite,
    Evaluate,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(v.as_str().unwrap_or("task"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub task: TaskKind,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output: u32,
    pub expect_structured: bool,
    /// Distinguishes repeated samples of the same prompt.
    #[serde(default)]
    pub sample_index: u32,
    /// Structured copy of the prompt inputs. HTTP backends ignore it.
    #[serde(default)]
    pub payload: Value,
}

impl ChatRequest {
    pub fn new(task: TaskKind, system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        ChatRequest {
            task,
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            top_p: 1.0,
            max_output: 2048,
            expect_structured: true,
            sample_index: 0,
            payload: Value::Null,
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn top_p(mut self, p: f64) -> Self {
        self.top_p = p;
        self
    }

    pub fn sample(mut self, index: u32) -> Self {
        self.sample_index = index;
        self
    }

    pub fn structured(mut self, yes: bool) -> Self {
        self.expect_structured = yes;
        self
    }

    pub fn payload(mut self, payload: Value) -> Self {
        self.payload = payload;
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} < 0",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ProviderError::InvalidRequest(format!(
                "top_p {} outside (0,1]",
                self.top_p
            )));
        }
        Ok(())
    }

    /// Stable hex digest of the full request.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub provider: String,
    pub text: String,
    pub structured: Option<Value>,
    /// Set when a structured reply was expected but could not be parsed.
    pub parse_failed: bool,
}

/// A chat backend. Implementations must be shareable across threads.
pub trait ChatProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError>;
}

/// Ordered, duplicate-free list of provider ids used for rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderPool {
    pub members: Vec<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_retries() -> u32 {
    2
}

fn default_timeout() -> u64 {
    120
}

impl ProviderPool {
    pub fn new<I, S>(members: I) -> Result<Self, ProviderError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let pool = ProviderPool {
            members: members.into_iter().map(Into::into).collect(),
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
        };
        pool.validate()?;
        Ok(pool)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.members.is_empty() {
            return Err(ProviderError::InvalidRequest("empty provider pool".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.members {
            if !seen.insert(m) {
                return Err(ProviderError::InvalidRequest(format!("duplicate pool member '{m}'")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Member used by 1-based attempt `t`: index `((t-1) mod |pool|) + 1`.
    pub fn member_for_attempt(&self, t: usize) -> &str {
        assert!(t >= 1, "attempts are 1-based");
        &self.members[rotation_index(t, self.members.len()) - 1]
    }
}

/// 1-based pool index for 1-based attempt `t`.
pub fn rotation_index(t: usize, pool_len: usize) -> usize {
    ((t - 1) % pool_len) + 1
}

/// Resolves provider ids, retries transport errors, and parses replies.
#[derive(Clone, Default)]
pub struct ProviderRegistry {
    chat: BTreeMap<String, Arc<dyn ChatProvider>>,
    embedder: Option<Arc<dyn Embedder>>,
    max_retries: u32,
}

impl fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderRegistry")
            .field("chat", &self.chat.keys().collect::<Vec<_>>())
            .field("has_embedder", &self.embedder.is_some())
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl ProviderRegistry {
    pub fn new() -> Self {
        ProviderRegistry {
            chat: BTreeMap::new(),
            embedder: None,
            max_retries: default_retries(),
        }
    }

    pub fn with_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn register(&mut self, provider: Arc<dyn ChatProvider>) {
        self.chat.insert(provider.id().to_string(), provider);
    }

    pub fn with(mut self, provider: Arc<dyn ChatProvider>) -> Self {
        self.register(provider);
        self
    }

    pub fn set_embedder(&mut self, embedder: Arc<dyn Embedder>) {
        self.embedder = Some(embedder);
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.set_embedder(embedder);
        self
    }

    pub fn embedder(&self) -> Option<&dyn Embedder> {
        self.embedder.as_deref()
    }

    /// Similarity oracle over the registered embedder, or the token-set
    /// embedder when none is registered.
    pub fn similarity(&self) -> SimilarityCache {
        match &self.embedder {
            Some(e) => SimilarityCache::new(Arc::clone(e)),
            None => SimilarityCache::token_set(),
        }
    }

    pub fn provider_ids(&self) -> impl Iterator<Item = &str> {
        self.chat.keys().map(String::as_str)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.chat.contains_key(id)
    }

    /// Sends `req` to `provider`. Parse failures are reported in the reply,
    /// never as errors.
    pub fn chat(&self, provider: &str, req: &ChatRequest) -> Result<ChatReply, ProviderError> {
        req.validate()?;
        let backend = self
            .chat
            .get(provider)
            .ok_or_else(|| ProviderError::Unknown(provider.to_string()))?;
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match backend.complete(req) {
                Ok(text) => {
                    let (structured, parse_failed) = if req.expect_structured {
                        match extract_json(&text) {
                            Some(v) => (Some(v), false),
                            None => (None, true),
                        }
                    } else {
                        (None, false)
                    };
                    return Ok(ChatReply {
                        provider: provider.to_string(),
                        text,
                        structured,
                        parse_failed,
                    });
                }
                Err(ProviderError::Transport(msg)) => {
                    tracing::debug!(provider, attempt, "transport error: {msg}");
                    last = msg;
                }
                Err(other) => return Err(other),
            }
        }
        Err(ProviderError::Unavailable {
            provider: provider.to_string(),
            attempts,
            last,
        })
    }
}

/// Pulls the first JSON object or array out of a model reply.
///
/// Accepts bare JSON, fenced code blocks, or JSON surrounded by prose.
pub fn extract_json(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return None;
    }
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        if v.is_object() || v.is_array() {
            return Some(v);
        }
    }
    if let Some(start) = trimmed.find("```") {
        let rest = &trimmed[start + 3..];
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        if let Some(end) = rest.find("```") {
            if let Ok(v) = serde_json::from_str::<Value>(rest[..end].trim()) {
                return Some(v);
            }
        }
    }
    for (open, close) in [('{', '}'), ('[', ']')] {
        if let (Some(s), Some(e)) = (trimmed.find(open), trimmed.rfind(close)) {
            if s < e {
                if let Ok(v) = serde_json::from_str::<Value>(&trimmed[s..=e]) {
                    return Some(v);
                }
            }
        }
    }
    None
}

//! Offline chat providers: scripted queues, closures, and fixture replay.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::simulate::SimulatedProvider;
use super::{ChatProvider, ChatRequest, ProviderError};
use crate::error::{ForgeError, Result};
use crate::io;

/// Pops replies from a fixed queue; an exhausted queue is a backend error.
pub struct ScriptedProvider {
    id: String,
    replies: Mutex<VecDeque<Result<String, ProviderError>>>,
}

impl ScriptedProvider {
    pub fn new(id: &str, replies: Vec<Result<String, ProviderError>>) -> Self {
        ScriptedProvider {
            id: id.to_string(),
            replies: Mutex::new(replies.into()),
        }
    }

    pub fn replying<I, S>(id: &str, replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(id, replies.into_iter().map(|r| Ok(r.into())).collect())
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("script lock").len()
    }
}

impl ChatProvider for ScriptedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, _req: &ChatRequest) -> Result<String, ProviderError> {
        self.replies
            .lock()
            .expect("script lock")
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::Backend(format!("{}: script exhausted", self.id))))
    }
}

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync;

/// Replies computed by a closure over the request.
pub struct FnProvider {
    id: String,
    f: Box<ReplyFn>,
}

impl FnProvider {
    pub fn new<F>(id: &str, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync + 'static,
    {
        FnProvider {
            id: id.to_string(),
            f: Box::new(f),
        }
    }
}

impl ChatProvider for FnProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        (self.f)(req)
    }
}

/// One line of a fixture file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub digest: String,
    pub response: String,
    /// Restricts the entry to one provider id; absent means any.
    #[serde(default)]
    pub provider: Option<String>,
}

/// Replays recorded responses keyed by request digest.
///
/// Requests without a recorded response go to a seeded simulator, so a
/// fixture set only needs to pin the replies a test cares about.
pub struct FixtureProvider {
    id: String,
    entries: HashMap<String, String>,
    fallback: Option<SimulatedProvider>,
}

impl FixtureProvider {
    pub fn new(id: &str, entries: Vec<FixtureEntry>, seed: Option<u64>) -> Self {
        let entries = entries
            .into_iter()
            .filter(|e| e.provider.as_deref().is_none_or(|p| p == id))
            .map(|e| (e.digest, e.response))
            .collect();
        FixtureProvider {
            id: id.to_string(),
            entries,
            fallback: seed.map(|s| SimulatedProvider::new(id, s)),
        }
    }

    pub fn load(id: &str, path: &Path, seed: Option<u64>) -> Result<Self> {
        let entries: Vec<FixtureEntry> = io::read_jsonl(path)?;
        Ok(Self::new(id, entries, seed))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatProvider for FixtureProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        if let Some(r) = self.entries.get(&req.digest()) {
            return Ok(r.clone());
        }
        match &self.fallback {
            Some(sim) => sim.complete(req),
            None => Err(ProviderError::Backend(format!(
                "{}: no fixture for digest {}",
                self.id,
                req.digest()
            ))),
        }
    }
}

/// Writes fixture entries for a set of recorded exchanges.
pub fn write_fixtures(path: &Path, entries: &[FixtureEntry]) -> Result<()> {
    if entries.iter().any(|e| e.digest.is_empty()) {
        return Err(ForgeError::invalid("fixture entry with empty digest"));
    }
    io::write_jsonl(path, entries)
}

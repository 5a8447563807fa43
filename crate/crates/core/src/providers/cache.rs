//! Content-addressed response cache wrapping any chat provider.
//!
//! Layout: `<dir>/<first two hex chars>/<digest>.json`, where the digest
//! covers the provider id and the full request. Writes go through a temp
//! file and a rename, so concurrent readers never see a partial entry.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, ProviderError};
use crate::io::write_atomic;

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    provider: String,
    request_digest: String,
    response: String,
}

pub struct CachedProvider {
    inner: Arc<dyn ChatProvider>,
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl CachedProvider {
    pub fn new(inner: Arc<dyn ChatProvider>, dir: impl Into<PathBuf>) -> Self {
        CachedProvider {
            inner,
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn key(provider: &str, req: &ChatRequest) -> String {
        let mut h = Sha256::new();
        h.update(provider.as_bytes());
        h.update([0u8]);
        h.update(req.digest().as_bytes());
        hex::encode(h.finalize())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    fn read(path: &Path) -> Option<CacheEntry> {
        let bytes = fs::read(path).ok()?;
        serde_json::from_slice(&bytes).ok()
    }
}

impl ChatProvider for CachedProvider {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let key = Self::key(self.inner.id(), req);
        let path = self.path_for(&key);
        if let Some(entry) = Self::read(&path) {
            return Ok(entry.response);
        }
        let response = self.inner.complete(req)?;
        let entry = CacheEntry {
            provider: self.inner.id().to_string(),
            request_digest: req.digest(),
            response: response.clone(),
        };
        let _guard = self.write_lock.lock().expect("cache write lock");
        if !path.exists() {
            let bytes = serde_json::to_vec(&entry).expect("cache entry serializes");
            if let Err(e) = write_atomic(&path, &bytes) {
                tracing::warn!("response cache write failed: {e}");
            }
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::super::mock::ScriptedProvider;
    use super::super::TaskKind;
    use super::*;

    #[test]
    fn second_call_is_served_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let inner = Arc::new(ScriptedProvider::replying("m1", ["first"]));
        let cached = CachedProvider::new(inner.clone(), dir.path());
        let req = ChatRequest::new(TaskKind::Reason, "s", "u");
        assert_eq!(cached.complete(&req).unwrap(), "first");
        assert_eq!(inner.remaining(), 0);
        // the script is exhausted, so this can only come from the cache
        assert_eq!(cached.complete(&req).unwrap(), "first");
        let other = req.clone().sample(1);
        assert!(cached.complete(&other).is_err());
    }
}

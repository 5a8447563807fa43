//! OpenAI-compatible HTTP backends (chat completions and embeddings).

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, Embedder, EmbeddingVector, ProviderError};

/// Connection settings for one remote model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .build()
        .into()
}

fn bearer(cfg: &HttpConfig) -> Result<Option<String>, ProviderError> {
    match &cfg.auth_env {
        None => Ok(None),
        Some(var) => std::env::var(var)
            .map(|k| Some(format!("Bearer {k}")))
            .map_err(|_| ProviderError::InvalidRequest(format!("environment variable {var} not set"))),
    }
}

fn classify(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            ProviderError::Transport(format!("http status {code}"))
        }
        ureq::Error::StatusCode(code) => ProviderError::Backend(format!("http status {code}")),
        other => ProviderError::Transport(other.to_string()),
    }
}

fn post(cfg: &HttpConfig, agent: &ureq::Agent, path: &str, body: &Value) -> Result<Value, ProviderError> {
    let url = format!("{}/{}", cfg.base_url.trim_end_matches('/'), path);
    let mut req = agent.post(&url);
    if let Some(auth) = bearer(cfg)? {
        req = req.header("Authorization", &auth);
    }
    let mut resp = req.send_json(body).map_err(classify)?;
    resp.body_mut()
        .read_json::<Value>()
        .map_err(|e| ProviderError::Backend(format!("bad response body: {e}")))
}

pub struct HttpChatProvider {
    id: String,
    cfg: HttpConfig,
    agent: ureq::Agent,
}

impl HttpChatProvider {
    pub fn new(id: &str, cfg: HttpConfig) -> Self {
        let agent = agent(cfg.timeout_secs);
        HttpChatProvider {
            id: id.to_string(),
            cfg,
            agent,
        }
    }
}

impl ChatProvider for HttpChatProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_output,
        });
        if req.expect_structured {
            body["response_format"] = json!({"type": "json_object"});
        }
        let v = post(&self.cfg, &self.agent, "chat/completions", &body)?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Backend("response has no message content".into()))
    }
}

pub struct HttpEmbedder {
    id: String,
    cfg: HttpConfig,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(id: &str, cfg: HttpConfig) -> Self {
        let agent = agent(cfg.timeout_secs);
        HttpEmbedder {
            id: id.to_string(),
            cfg,
            agent,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("empty embedding batch".into()));
        }
        let body = json!({"model": self.cfg.model, "input": texts});
        let v = post(&self.cfg, &self.agent, "embeddings", &body)?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| ProviderError::Backend("embedding response has no data".into()))?;
        if data.len() != texts.len() {
            return Err(ProviderError::Backend(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        data.iter()
            .map(|item| {
                let values: Vec<f64> = item["embedding"]
                    .as_array()
                    .ok_or_else(|| ProviderError::Backend("missing embedding array".into()))?
                    .iter()
                    .map(|x| x.as_f64().unwrap_or(f64::NAN))
                    .collect();
                EmbeddingVector::from_dense(&values)
            })
            .collect()
    }
}

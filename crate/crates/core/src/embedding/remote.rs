use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{check_text, Embedder, Embedding, ProviderKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_ms: u64,
    pub dimension: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-3-small".into(),
            api_key: None,
            timeout_ms: 30_000,
            dimension: 1536,
            max_retries: 3,
            backoff_base_ms: 500,
            max_in_flight: 4,
        }
    }
}

impl RemoteConfig {
    /// Overlay `EMBED_ENDPOINT`, `EMBED_MODEL`, `EMBED_API_KEY` and `EMBED_TIMEOUT_MS`.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_vars(|name| std::env::var(name).ok())
    }

    pub(crate) fn apply_vars(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = var("EMBED_ENDPOINT") {
            self.endpoint = v;
        }
        if let Some(v) = var("EMBED_MODEL") {
            self.model = v;
        }
        if let Some(v) = var("EMBED_API_KEY") {
            self.api_key = Some(v);
        }
        if let Some(v) = var("EMBED_TIMEOUT_MS") {
            self.timeout_ms = v.trim().parse().map_err(|_| {
                Error::InvalidParams(format!("EMBED_TIMEOUT_MS is not an integer: {v:?}"))
            })?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.freed.notify_one();
    }
}

/// JSON-over-HTTP embedding client: `{model, input: [text]}` in,
/// `{data: [{embedding: [...]}]}` out.
pub struct RemoteEmbedder {
    config: RemoteConfig,
    agent: ureq::Agent,
    permits: Permits,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let permits = Permits::new(config.max_in_flight);
        Self {
            config,
            agent,
            permits,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn request_once(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, String> {
        let body = EmbeddingRequest {
            model: &self.config.model,
            input: texts,
        };
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {}", status.as_u16()));
        }
        let parsed: EmbeddingResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        if parsed.data.len() != texts.len() {
            return Err(format!(
                "response carried {} embeddings for {} inputs",
                parsed.data.len(),
                texts.len()
            ));
        }
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let _permit = self.permits.acquire();
        let mut delay = Duration::from_millis(self.config.backoff_base_ms);
        let mut attempt = 0;
        loop {
            match self.request_once(texts) {
                Ok(vectors) => return Ok(vectors),
                Err(reason) if attempt < self.config.max_retries => {
                    attempt += 1;
                    warn!(
                        "embedding request failed (attempt {attempt}/{}): {reason}; retrying in {delay:?}",
                        self.config.max_retries + 1
                    );
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(reason) => {
                    return Err(Error::ProviderUnavailable(format!(
                        "{} after {} attempts: {reason}",
                        self.config.endpoint,
                        attempt + 1
                    )))
                }
            }
        }
    }

    fn finish(&self, raw: Vec<f64>) -> Result<Embedding> {
        if raw.len() != self.config.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.config.dimension,
                actual: raw.len(),
            });
        }
        Embedding::normalized(raw)
    }
}

impl Embedder for RemoteEmbedder {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Remote
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        check_text(text)?;
        let mut vectors = self.request(&[text])?;
        self.finish(vectors.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        for t in texts {
            check_text(t)?;
        }
        self.request(texts)?
            .into_iter()
            .map(|v| self.finish(v))
            .collect()
    }
}

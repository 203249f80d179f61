//! Provider-neutral HTTP clients for embedding and text generation.
//!
//! Wire contract:
//!
//! * `POST {base_url}/embed` with `{model, texts: [...]}` returns
//!   `{vectors: [[f32, ...], ...]}`.
//! * `POST {base_url}/generate` with `{model, prompt, max_tokens}` returns
//!   `{text}`.
//!
//! Both send `Authorization: Bearer <key>` when `api_key_env` names a set
//! environment variable. Transport errors and 5xx responses are retried with
//! exponential backoff; any 4xx is terminal.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::embedding::{Embedder, EmbeddingVector};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("environment variable {0} holding the provider key is not set")]
    MissingApiKey(String),
    #[error("provider unreachable after {attempts} attempts: {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("provider rejected request with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("provider response violates contract: {0}")]
    Contract(String),
}

impl ProviderError {
    /// Whether a later identical call could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Exhausted { .. })
    }
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_batch_size() -> usize {
    32
}
fn default_max_concurrency() -> usize {
    4
}
fn default_backoff_base_ms() -> u64 {
    500
}
fn default_max_tokens() -> u32 {
    2048
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Upper bound on outstanding requests per client.
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

impl ProviderConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            batch_size: default_batch_size(),
            max_concurrency: default_max_concurrency(),
            backoff_base_ms: default_backoff_base_ms(),
            max_tokens: default_max_tokens(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.timeout_ms == 0 {
            return Err(ProviderError::InvalidConfig("timeout_ms must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(ProviderError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.max_concurrency == 0 {
            return Err(ProviderError::InvalidConfig(
                "max_concurrency must be >= 1".into(),
            ));
        }
        if self.base_url.trim().is_empty() {
            return Err(ProviderError::InvalidConfig("base_url is empty".into()));
        }
        Ok(())
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// Shared request machinery: auth, timeout, retry with backoff, and a
/// semaphore bounding concurrent requests.
#[derive(Debug)]
struct HttpCore {
    config: ProviderConfig,
    client: reqwest::Client,
    permits: Semaphore,
    retries: AtomicU64,
}

impl HttpCore {
    fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| ProviderError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            permits: Semaphore::new(config.max_concurrency),
            config,
            client,
            retries: AtomicU64::new(0),
        })
    }

    fn api_key(&self) -> Result<Option<String>, ProviderError> {
        match &self.config.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ProviderError::MissingApiKey(var.clone())),
        }
    }

    async fn post_json<B: Serialize + Sync, R: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, ProviderError> {
        let key = self.api_key()?;
        let url = self.config.endpoint(path);
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|e| ProviderError::InvalidConfig(e.to_string()))?;

        let mut attempt: u32 = 0;
        loop {
            let mut request = self.client.post(&url).json(body);
            if let Some(key) = &key {
                request = request.bearer_auth(key);
            }
            let failure = match request.send().await {
                Ok(resp) if resp.status().is_success() => {
                    if attempt > 0 {
                        tracing::info!(url = %url, retries = attempt, "provider call succeeded after retries");
                    }
                    return resp
                        .json::<R>()
                        .await
                        .map_err(|e| ProviderError::Contract(format!("undecodable body: {e}")));
                }
                Ok(resp) if resp.status().is_server_error() => {
                    format!("status {}", resp.status().as_u16())
                }
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let message = resp.text().await.unwrap_or_default();
                    return Err(ProviderError::Rejected {
                        status,
                        message: message.chars().take(200).collect(),
                    });
                }
                Err(e) => e.to_string(),
            };
            if attempt >= self.config.max_retries {
                return Err(ProviderError::Exhausted {
                    attempts: attempt + 1,
                    message: failure,
                });
            }
            let delay = self.config.backoff_base_ms.saturating_mul(1 << attempt.min(16));
            attempt += 1;
            self.retries.fetch_add(1, Ordering::Relaxed);
            tracing::warn!(url = %url, attempt, delay_ms = delay, error = %failure, "retrying provider call");
            tokio::time::sleep(Duration::from_millis(delay)).await;
        }
    }

    async fn probe(&self) -> bool {
        self.client
            .get(&self.config.base_url)
            .timeout(Duration::from_millis(self.config.timeout_ms.min(2_000)))
            .send()
            .await
            .is_ok()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Remote embedder speaking the `/embed` contract.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    core: Arc<HttpCore>,
}

impl HttpEmbedder {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self {
            core: Arc::new(HttpCore::new(config)?),
        })
    }

    /// Total retries performed by this client so far.
    pub fn retries(&self) -> u64 {
        self.core.retries.load(Ordering::Relaxed)
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let body = EmbedRequest {
            model: &self.core.config.model_name,
            texts,
        };
        let resp: EmbedResponse = self.core.post_json("embed", &body).await?;
        if resp.vectors.len() != texts.len() {
            return Err(ProviderError::Contract(format!(
                "count mismatch: {} texts, {} vectors",
                texts.len(),
                resp.vectors.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| EmbeddingVector::new(v).map_err(|e| ProviderError::Contract(e.to_string())))
            .collect()
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}", self.core.config.model_name)
    }

    async fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidInput("no texts to embed".into()));
        }
        if let Some(idx) = texts.iter().position(|t| t.is_empty()) {
            return Err(ProviderError::InvalidInput(format!("text {idx} is empty")));
        }
        let batches = texts
            .chunks(self.core.config.batch_size)
            .map(|batch| self.embed_batch(batch));
        let mut out = Vec::with_capacity(texts.len());
        for batch in futures::future::try_join_all(batches).await? {
            out.extend(batch);
        }
        if let Some(first) = out.first() {
            let dim = first.dim();
            if let Some(bad) = out.iter().find(|v| v.dim() != dim) {
                return Err(ProviderError::Contract(format!(
                    "dimension mismatch: {dim} vs {}",
                    bad.dim()
                )));
            }
        }
        Ok(out)
    }

    async fn probe(&self) -> bool {
        self.core.probe().await
    }
}

/// Anything that turns a prompt into raw model output.
#[async_trait]
pub trait TextGenerator: Send + Sync {
    fn id(&self) -> String;

    async fn complete(&self, prompt: &str) -> Result<String, ProviderError>;

    async fn probe(&self) -> bool {
        true
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// Remote text generator speaking the `/generate` contract.
#[derive(Debug, Clone)]
pub struct HttpTextGenerator {
    core: Arc<HttpCore>,
}

impl HttpTextGenerator {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self {
            core: Arc::new(HttpCore::new(config)?),
        })
    }

    pub fn retries(&self) -> u64 {
        self.core.retries.load(Ordering::Relaxed)
    }
}

#[async_trait]
impl TextGenerator for HttpTextGenerator {
    fn id(&self) -> String {
        format!("http:{}", self.core.config.model_name)
    }

    async fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = GenerateRequest {
            model: &self.core.config.model_name,
            prompt,
            max_tokens: self.core.config.max_tokens,
        };
        let resp: GenerateResponse = self.core.post_json("generate", &body).await?;
        Ok(resp.text)
    }

    async fn probe(&self) -> bool {
        self.core.probe().await
    }
}

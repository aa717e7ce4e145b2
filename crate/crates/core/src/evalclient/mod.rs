//! Chat-completions client for evaluation runs.
//!
//! Requests are `POST {base_url}/chat/completions` with a system message and
//! a user message (`instruction + "\n\n" + input`). 429, 5xx, timeouts and
//! connection failures are retried with exponential backoff and full jitter.
//! Successful completions are cached on disk by prompt hash, so a rerun with
//! a warm cache makes no network calls.

mod cache;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{bit, TaskInstance};
use crate::instruct::{render_instruction, InstructionRecord};

pub use cache::ResponseCache;

/// Environment variable holding the endpoint API key.
pub const API_KEY_ENV: &str = "DEVASSIST_API_KEY";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("endpoint returned HTTP {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("corrupt cache entry {0}")]
    CacheCorrupt(PathBuf),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response body: {0}")]
    InvalidResponse(String),
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("all {0} requests failed")]
    AllRequestsFailed(usize),
    #[error("evaluation instances must share one task")]
    MixedTasks,
}

#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        ApiKey(key.into())
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .map(ApiKey)
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key: Option<ApiKey>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub max_parallel: usize,
    pub max_retries: u32,
    /// First backoff window; doubles on every retry.
    pub backoff_base: Duration,
    /// Sent with every request.
    pub extra_headers: Vec<(String, String)>,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key: ApiKey::from_env(),
            temperature: 0.0,
            max_tokens: 512,
            timeout: Duration::from_secs(60),
            max_parallel: 4,
            max_retries: 5,
            backoff_base: Duration::from_secs(1),
            extra_headers: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let url = reqwest::Url::parse(&self.base_url)
            .map_err(|e| ClientError::InvalidConfig(format!("base_url `{}`: {e}", self.base_url)))?;
        if url.cannot_be_a_base() {
            return Err(ClientError::InvalidConfig(format!(
                "base_url `{}` is not absolute",
                self.base_url
            )));
        }
        if self.max_parallel < 1 {
            return Err(ClientError::InvalidConfig("max_parallel must be >= 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ClientError::InvalidConfig("temperature must be >= 0".into()));
        }
        Ok(())
    }

    fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// SHA-256 over the length-prefixed prompt fields, model name and temperature.
pub fn prompt_hash(
    system: &str,
    instruction: &str,
    input: &str,
    model_name: &str,
    temperature: f64,
) -> String {
    let mut h = Sha256::new();
    let temp = format!("{temperature:?}");
    for field in [system, instruction, input, model_name, temp.as_str()] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn record_hash(record: &InstructionRecord, cfg: &EndpointConfig) -> String {
    prompt_hash(
        &record.system,
        &record.instruction,
        &record.input,
        &cfg.model_name,
        cfg.temperature,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub id: String,
    pub prompt_hash: String,
    pub raw: String,
    pub latency_ms: u64,
    #[serde(with = "bit")]
    pub from_cache: bool,
    pub attempt_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ChatMessage<'a> {
    pub role: &'a str,
    pub content: &'a str,
}

#[derive(Debug, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: Vec<ChatMessage<'a>>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(ClientError),
    Fail(ClientError),
}

/// Outcome of [`EvalClient::run_eval`]; `results` is in input order.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub results: Vec<(TaskInstance, CompletionRecord)>,
    pub failed: usize,
    pub cached: usize,
}

pub struct EvalClient {
    cfg: EndpointConfig,
    http: reqwest::Client,
    cache: Option<ResponseCache>,
    network_calls: AtomicUsize,
}

impl EvalClient {
    pub fn new(cfg: EndpointConfig, cache: Option<ResponseCache>) -> Result<Self, ClientError> {
        cfg.validate()?;
        let http = reqwest::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| ClientError::InvalidConfig(e.to_string()))?;
        Ok(EvalClient {
            cfg,
            http,
            cache,
            network_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub async fn complete(&self, record: &InstructionRecord) -> Result<CompletionRecord, ClientError> {
        let start = Instant::now();
        let hash = record_hash(record, &self.cfg);
        if let Some(cache) = &self.cache {
            if let Some(raw) = cache.get(&hash)? {
                return Ok(CompletionRecord {
                    id: record.id.clone(),
                    prompt_hash: hash,
                    raw,
                    latency_ms: start.elapsed().as_millis() as u64,
                    from_cache: true,
                    attempt_count: 0,
                    error: None,
                });
            }
        }

        let user = record.user_message();
        let body = ChatRequest {
            model: &self.cfg.model_name,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &record.system,
                },
                ChatMessage {
                    role: "user",
                    content: &user,
                },
            ],
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
        };

        let mut attempts = 0u32;
        let raw = loop {
            attempts += 1;
            match self.attempt(&body).await {
                Attempt::Done(raw) => break raw,
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => {
                    if attempts > self.cfg.max_retries {
                        return Err(e);
                    }
                    let sleep = self.backoff(attempts - 1);
                    log::debug!("{}: {e}; retry {attempts} in {sleep:?}", record.id);
                    tokio::time::sleep(sleep).await;
                }
            }
        };

        if let Some(cache) = &self.cache {
            cache.put(&hash, &raw)?;
        }
        Ok(CompletionRecord {
            id: record.id.clone(),
            prompt_hash: hash,
            raw,
            latency_ms: start.elapsed().as_millis() as u64,
            from_cache: false,
            attempt_count: attempts,
            error: None,
        })
    }

    /// Full jitter: uniform in `[0, base * 2^retry]`.
    fn backoff(&self, retry: u32) -> Duration {
        let window = self.cfg.backoff_base.saturating_mul(1u32 << retry.min(16));
        let nanos = window.as_nanos().min(u64::MAX as u128) as u64;
        Duration::from_nanos(rand::rng().random_range(0..=nanos))
    }

    async fn attempt(&self, body: &ChatRequest<'_>) -> Attempt {
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let mut req = self.http.post(self.cfg.completions_url()).json(body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key.expose());
        }
        for (k, v) in &self.cfg.extra_headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(ClientError::Timeout),
            Err(e) if e.is_connect() || e.is_request() => {
                return Attempt::Retry(ClientError::Transport(e.to_string()))
            }
            Err(e) => return Attempt::Fail(ClientError::Transport(e.to_string())),
        };
        let status = resp.status();
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(ClientError::Timeout),
            Err(e) => return Attempt::Retry(ClientError::Transport(e.to_string())),
        };
        if status.is_success() {
            return match serde_json::from_str::<ChatResponse>(&text) {
                Ok(parsed) => match parsed.choices.into_iter().next() {
                    Some(choice) => Attempt::Done(choice.message.content.unwrap_or_default()),
                    None => Attempt::Fail(ClientError::InvalidResponse("no choices".into())),
                },
                Err(e) => Attempt::Fail(ClientError::InvalidResponse(e.to_string())),
            };
        }
        let err = ClientError::Endpoint {
            status: status.as_u16(),
            body: text,
        };
        if status.as_u16() == 429 || status.is_server_error() {
            Attempt::Retry(err)
        } else {
            Attempt::Fail(err)
        }
    }

    async fn complete_or_note(&self, instance: &TaskInstance) -> CompletionRecord {
        let failed = |hash: String, e: String| CompletionRecord {
            id: instance.id().to_string(),
            prompt_hash: hash,
            raw: String::new(),
            latency_ms: 0,
            from_cache: false,
            attempt_count: 0,
            error: Some(e),
        };
        let record = match render_instruction(instance, "") {
            Ok(r) => r,
            Err(e) => return failed(String::new(), e.to_string()),
        };
        match self.complete(&record).await {
            Ok(c) => c,
            Err(e) => {
                log::warn!("{}: {e}", instance.id());
                failed(record_hash(&record, &self.cfg), e.to_string())
            }
        }
    }

    /// One completion per instance, at most `max_parallel` in flight, results
    /// in input order. Failed instances get an empty `raw` and an error note;
    /// the run only fails when every request failed.
    pub async fn run_eval(&self, instances: &[TaskInstance]) -> Result<EvalRun, ClientError> {
        if let Some(first) = instances.first() {
            if instances.iter().any(|i| i.task() != first.task()) {
                return Err(ClientError::MixedTasks);
            }
        }
        let total = instances.len();
        let done = AtomicUsize::new(0);
        let completions: Vec<CompletionRecord> = stream::iter(instances)
            .map(|inst| async {
                let c = self.complete_or_note(inst).await;
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if n % 100 == 0 || n == total {
                    log::info!("completed {n}/{total}");
                }
                c
            })
            .buffered(self.cfg.max_parallel)
            .collect()
            .await;
        let failed = completions.iter().filter(|c| c.error.is_some()).count();
        let cached = completions.iter().filter(|c| c.from_cache).count();
        if total > 0 && failed == total {
            return Err(ClientError::AllRequestsFailed(total));
        }
        if failed > 0 {
            log::warn!("{failed}/{total} requests failed");
        }
        Ok(EvalRun {
            results: instances.iter().cloned().zip(completions).collect(),
            failed,
            cached,
        })
    }
}

//! Rule-based stand-in model served over the chat-completions wire protocol.
//!
//! Answers come from a gold table keyed by prompt hash. Modes:
//!
//! * `Oracle`: the gold output verbatim.
//! * `Adversarial`: a well-formed but wrong answer (disjoint entities,
//!   flipped bit, gold-best ranked last, another relation label).
//! * `Noisy(p)`: adversarial with probability `p`, otherwise gold.
//! * `Malformed(q)`: with probability `q`, text that violates the output format.
//!
//! Per-prompt draws are a deterministic function of `(seed, prompt_hash)`.
//!
//! Tests can script failures: a request carrying `x-mock-fail: 429,429` gets
//! those statuses on its first attempts (counted per prompt hash), and
//! [`MockServer::push_failures`] queues statuses for the next requests.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::corpus::labels::RELATION_LABELS;
use crate::corpus::Task;
use crate::evalclient::{prompt_hash, EndpointConfig};
use crate::instruct::InstructionRecord;
use crate::parse::{format_ranking, parse_entities, parse_ranking, serialize_entities, Prediction};

/// Header used to script per-prompt failure statuses.
pub const FAIL_HEADER: &str = "x-mock-fail";

const ADVERSARIAL_ENTITY: &str = "adversarial placeholder entity";
const ADVERSARIAL_ANSWER: &str = "xyzzy plugh quux";
const MALFORMED_PROSE: &str = "Sorry I cannot follow the requested output format for this request";

#[derive(Debug, Error, PartialEq)]
pub enum MockError {
    #[error("no gold output for prompt {0}")]
    MissingGold(String),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MockKind {
    Oracle,
    Adversarial,
    Noisy(f64),
    Malformed(f64),
}

impl std::str::FromStr for MockKind {
    type Err = String;

    /// `oracle`, `adversarial`, `noisy:<p>` or `malformed:<p>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, p) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let prob = || -> Result<f64, String> {
            let p = p.ok_or_else(|| format!("`{name}` needs a probability, e.g. `{name}:0.3`"))?;
            p.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad probability `{p}`: {e}"))
        };
        match (name.trim().to_ascii_lowercase().as_str(), p) {
            ("oracle", None) => Ok(MockKind::Oracle),
            ("adversarial", None) => Ok(MockKind::Adversarial),
            ("noisy", _) => Ok(MockKind::Noisy(prob()?)),
            ("malformed", _) => Ok(MockKind::Malformed(prob()?)),
            _ => Err(format!(
                "unknown mock kind `{s}` (expected oracle, adversarial, noisy:<p>, malformed:<p>)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldEntry {
    pub task: Task,
    pub output: String,
}

#[derive(Debug, Clone)]
pub struct MockMode {
    kind: MockKind,
    seed: u64,
    gold: HashMap<String, GoldEntry>,
}

impl MockMode {
    pub fn new(kind: MockKind, seed: u64) -> Result<Self, MockError> {
        if let MockKind::Noisy(p) | MockKind::Malformed(p) = kind {
            if !(0.0..=1.0).contains(&p) {
                return Err(MockError::InvalidProbability(p));
            }
        }
        Ok(MockMode {
            kind,
            seed,
            gold: HashMap::new(),
        })
    }

    pub fn kind(&self) -> MockKind {
        self.kind
    }

    pub fn insert_gold(&mut self, prompt_hash: String, entry: GoldEntry) {
        self.gold.insert(prompt_hash, entry);
    }

    /// Registers each record's gold output under the hash the client will
    /// compute for `model_name` and `temperature`.
    pub fn with_records<'a>(
        mut self,
        records: impl IntoIterator<Item = &'a InstructionRecord>,
        model_name: &str,
        temperature: f64,
    ) -> Self {
        for r in records {
            let h = prompt_hash(&r.system, &r.instruction, &r.input, model_name, temperature);
            self.insert_gold(
                h,
                GoldEntry {
                    task: r.task,
                    output: r.output.clone(),
                },
            );
        }
        self
    }

    pub fn with_records_for<'a>(
        self,
        records: impl IntoIterator<Item = &'a InstructionRecord>,
        cfg: &EndpointConfig,
    ) -> Self {
        self.with_records(records, &cfg.model_name, cfg.temperature)
    }

    pub fn gold_len(&self) -> usize {
        self.gold.len()
    }
}

/// Deterministic uniform draw in `[0, 1)` for a prompt.
fn unit_draw(seed: u64, prompt_hash: &str, salt: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(prompt_hash.as_bytes());
    h.update(salt.as_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

/// The model's answer for a prompt under `mode`.
pub fn respond(prompt_hash: &str, mode: &MockMode) -> Result<String, MockError> {
    let gold = mode
        .gold
        .get(prompt_hash)
        .ok_or_else(|| MockError::MissingGold(prompt_hash.to_string()))?;
    Ok(match mode.kind {
        MockKind::Oracle => gold.output.clone(),
        MockKind::Adversarial => adversarial(gold.task, &gold.output),
        MockKind::Noisy(p) => {
            if unit_draw(mode.seed, prompt_hash, "noisy") < p {
                adversarial(gold.task, &gold.output)
            } else {
                gold.output.clone()
            }
        }
        MockKind::Malformed(q) => {
            if unit_draw(mode.seed, prompt_hash, "malformed") < q {
                malformed(gold.task)
            } else {
                gold.output.clone()
            }
        }
    })
}

/// A structurally valid answer that is maximally wrong for `gold_output`.
pub fn adversarial(task: Task, gold_output: &str) -> String {
    match task {
        Task::Ner => {
            let gold = match parse_entities(gold_output) {
                Prediction::EntityList(items) => items,
                _ => Vec::new(),
            };
            let lowered: Vec<String> = gold.iter().map(|g| g.to_lowercase()).collect();
            let mut candidate = ADVERSARIAL_ENTITY.to_string();
            let mut k = 0;
            while lowered.contains(&candidate) {
                k += 1;
                candidate = format!("{ADVERSARIAL_ENTITY} {k}");
            }
            serialize_entities(&[candidate])
        }
        Task::Lp => if gold_output.trim() == "1" { "0" } else { "1" }.to_string(),
        Task::Far => {
            let n = gold_output.lines().filter(|l| !l.trim().is_empty()).count();
            match parse_ranking(gold_output, n) {
                Prediction::Ranking(ranks) => {
                    let flipped: Vec<u32> = ranks
                        .iter()
                        .map(|&r| if r == 1 { n as u32 } else { r - 1 })
                        .collect();
                    format_ranking(&flipped)
                }
                _ => gold_output.to_string(),
            }
        }
        Task::Re => {
            let pos = RELATION_LABELS
                .iter()
                .position(|l| l.eq_ignore_ascii_case(gold_output.trim()))
                .unwrap_or(0);
            RELATION_LABELS[(pos + 1) % RELATION_LABELS.len()].to_string()
        }
        Task::Qa => ADVERSARIAL_ANSWER.to_string(),
    }
}

/// Output that breaks the task's format contract.
pub fn malformed(task: Task) -> String {
    match task {
        // longer than the undelimited-entity limit, with no list structure
        Task::Ner => std::iter::repeat_n(MALFORMED_PROSE, 10)
            .collect::<Vec<_>>()
            .join(" and "),
        Task::Qa => String::new(),
        _ => MALFORMED_PROSE.to_string(),
    }
}

#[derive(Debug, Default)]
pub struct MockStats {
    requests: AtomicUsize,
    answered: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl MockStats {
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Requests answered with HTTP 200.
    pub fn answered(&self) -> usize {
        self.answered.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

struct InFlight<'a>(&'a MockStats);

impl<'a> InFlight<'a> {
    fn enter(stats: &'a MockStats) -> Self {
        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        stats.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(stats)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Sleep before answering, so concurrency is observable.
    pub delay: Duration,
    /// When set, requests must carry `Authorization: Bearer <key>`.
    pub required_api_key: Option<String>,
}

struct AppState {
    mode: MockMode,
    options: ServerOptions,
    stats: Arc<MockStats>,
    queued_failures: Mutex<VecDeque<u16>>,
    attempts: Mutex<HashMap<String, usize>>,
}

#[derive(Debug, Deserialize)]
struct IncomingMessage {
    role: String,
    content: String,
}

#[derive(Debug, Deserialize)]
struct IncomingRequest {
    model: String,
    messages: Vec<IncomingMessage>,
    #[serde(default)]
    temperature: Option<f64>,
}

fn error(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({"error": {"message": message}}))).into_response()
}

fn scripted_status(headers: &HeaderMap, attempt: usize) -> Option<u16> {
    let script = headers.get(FAIL_HEADER)?.to_str().ok()?;
    script
        .split(',')
        .filter_map(|s| s.trim().parse::<u16>().ok())
        .nth(attempt)
}

async fn chat_completions(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: axum::body::Bytes,
) -> Response {
    let stats = &state.stats;
    stats.requests.fetch_add(1, Ordering::SeqCst);
    let _guard = InFlight::enter(stats);

    if let Some(key) = &state.options.required_api_key {
        let expected = format!("Bearer {key}");
        let ok = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v == expected);
        if !ok {
            return error(StatusCode::UNAUTHORIZED, "invalid api key");
        }
    }

    let req: IncomingRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, &e.to_string()),
    };
    let find = |role: &str| {
        req.messages
            .iter()
            .find(|m| m.role == role)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    };
    let system = find("system");
    let user = find("user");
    let (instruction, input) = user.split_once("\n\n").unwrap_or((user, ""));
    let hash = prompt_hash(
        system,
        instruction,
        input,
        &req.model,
        req.temperature.unwrap_or(0.0),
    );

    let attempt = {
        let mut attempts = state.attempts.lock().expect("attempt map poisoned");
        let n = attempts.entry(hash.clone()).or_insert(0);
        *n += 1;
        *n - 1
    };
    let queued = state
        .queued_failures
        .lock()
        .expect("failure queue poisoned")
        .pop_front();
    if let Some(status) = queued.or_else(|| scripted_status(&headers, attempt)) {
        let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        return error(status, "scripted failure");
    }

    if !state.options.delay.is_zero() {
        tokio::time::sleep(state.options.delay).await;
    }

    match respond(&hash, &state.mode) {
        Ok(content) => {
            stats.answered.fetch_add(1, Ordering::SeqCst);
            Json(json!({
                "id": format!("mock-{}", &hash[..16]),
                "object": "chat.completion",
                "model": req.model,
                "choices": [{
                    "index": 0,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": "stop"
                }]
            }))
            .into_response()
        }
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, &e.to_string()),
    }
}

/// A running mock endpoint on loopback. Shuts down on drop.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl MockServer {
    /// Binds `127.0.0.1` on an ephemeral port. Must be called inside a Tokio runtime.
    pub async fn start(mode: MockMode, options: ServerOptions) -> std::io::Result<MockServer> {
        Self::bind("127.0.0.1:0".parse().expect("valid addr"), mode, options).await
    }

    pub async fn bind(
        addr: SocketAddr,
        mode: MockMode,
        options: ServerOptions,
    ) -> std::io::Result<MockServer> {
        let state = Arc::new(AppState {
            mode,
            options,
            stats: Arc::new(MockStats::default()),
            queued_failures: Mutex::new(VecDeque::new()),
            attempts: Mutex::new(HashMap::new()),
        });
        let app = Router::new()
            .route("/chat/completions", post(chat_completions))
            .route("/v1/chat/completions", post(chat_completions))
            .with_state(state.clone());
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let served = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
            if let Err(e) = served {
                log::error!("mock server stopped: {e}");
            }
        });
        Ok(MockServer {
            addr,
            state,
            shutdown: Some(tx),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL for [`EndpointConfig`], e.g. `http://127.0.0.1:4321/v1`.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn stats(&self) -> Arc<MockStats> {
        self.state.stats.clone()
    }

    /// Answers the next `statuses.len()` requests with these statuses.
    pub fn push_failures(&self, statuses: &[u16]) {
        self.state
            .queued_failures
            .lock()
            .expect("failure queue poisoned")
            .extend(statuses);
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

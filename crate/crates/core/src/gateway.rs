//! Uniform access to chat-completion backends: a live OpenAI-compatible
//! HTTP endpoint, a recording proxy, and a deterministic replay store.
//!
//! Requests are identified by a stable digest over their canonical form
//! (model, temperature, top_p, max_tokens, seed, messages). Record mode
//! persists `hash -> completion` as JSON lines and serves repeats from
//! the store without re-issuing HTTP; replay mode never touches the
//! network and errors on a store miss.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::{GenerationParams, Message};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited{}", retry_after_ms.map(|ms| format!(" (retry after {ms} ms)")).unwrap_or_default())]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("no fixture for request hash {hash}")]
    FixtureMiss { hash: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture store at {path}: {reason}")]
    FixtureStore { path: PathBuf, reason: String },
}

impl GatewayError {
    fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::Transport(_) | GatewayError::RateLimited { .. }
        )
    }
}

/// One completion request: decoding parameters plus the rendered messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub params: GenerationParams,
    pub messages: Vec<Message>,
}

impl CompletionRequest {
    pub fn new(params: GenerationParams, messages: Vec<Message>) -> Self {
        Self { params, messages }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        self.params
            .validate()
            .map_err(GatewayError::InvalidRequest)?;
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        Ok(())
    }
}

/// Completion text plus usage metadata when the backend reports it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// Canonical request form: field order is fixed so the serialized JSON,
/// and therefore the digest, is stable across runs and platforms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanonicalRequest {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub messages: Vec<Message>,
}

impl CanonicalRequest {
    pub fn of(req: &CompletionRequest) -> Self {
        Self {
            model: req.params.model_id.clone(),
            temperature: req.params.temperature,
            top_p: req.params.top_p,
            max_tokens: req.params.max_tokens,
            seed: req.params.effective_seed(),
            messages: req.messages.clone(),
        }
    }
}

/// Stable hex digest of the canonical request form.
pub fn request_hash(req: &CompletionRequest) -> String {
    let canonical =
        serde_json::to_string(&CanonicalRequest::of(req)).expect("canonical request serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hex_encode(&hasher.finalize())
}

fn hex_encode(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// One persisted fixture line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub hash: String,
    pub request: CanonicalRequest,
    pub completion: String,
    pub recorded_at: String,
}

/// Append-only JSONL store mapping request hashes to completions.
#[derive(Debug)]
pub struct FixtureStore {
    path: PathBuf,
    entries: HashMap<String, String>,
}

impl FixtureStore {
    /// Loads an existing store; errors if the file is missing or malformed.
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| GatewayError::FixtureStore {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut entries = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord =
                serde_json::from_str(line).map_err(|e| GatewayError::FixtureStore {
                    path: path.to_path_buf(),
                    reason: format!("line {}: {e}", lineno + 1),
                })?;
            entries.insert(record.hash, record.completion);
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    /// Opens for recording: loads existing entries when the file exists,
    /// starts empty otherwise.
    pub fn open_or_create(path: &Path) -> Result<Self, GatewayError> {
        if path.exists() {
            Self::open(path)
        } else {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent).map_err(|e| GatewayError::FixtureStore {
                        path: path.to_path_buf(),
                        reason: e.to_string(),
                    })?;
                }
            }
            Ok(Self {
                path: path.to_path_buf(),
                entries: HashMap::new(),
            })
        }
    }

    pub fn get(&self, hash: &str) -> Option<&String> {
        self.entries.get(hash)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts and appends one record to the backing file.
    pub fn insert(
        &mut self,
        req: &CompletionRequest,
        completion: &str,
    ) -> Result<(), GatewayError> {
        let hash = request_hash(req);
        if self.entries.contains_key(&hash) {
            return Ok(());
        }
        let record = FixtureRecord {
            hash: hash.clone(),
            request: CanonicalRequest::of(req),
            completion: completion.to_string(),
            recorded_at: chrono::Utc::now().to_rfc3339(),
        };
        let line = serde_json::to_string(&record).expect("fixture record serializes");
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| GatewayError::FixtureStore {
                path: self.path.clone(),
                reason: e.to_string(),
            })?;
        writeln!(file, "{line}").map_err(|e| GatewayError::FixtureStore {
            path: self.path.clone(),
            reason: e.to_string(),
        })?;
        self.entries.insert(hash, completion.to_string());
        Ok(())
    }
}

/// Low-level completion transport. The HTTP client implements this; tests
/// and fixture-authoring tools plug in scripted implementations.
pub trait Transport: Send + Sync {
    fn send(&self, req: &CompletionRequest) -> Result<Completion, GatewayError>;
}

/// Retry policy for transient transport failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 250,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    fn delay_for(&self, attempt: usize, err: &GatewayError) -> Duration {
        if let GatewayError::RateLimited {
            retry_after_ms: Some(ms),
        } = err
        {
            return Duration::from_millis(*ms);
        }
        let exp = self.base_delay_ms.saturating_mul(1u64 << attempt.min(16));
        Duration::from_millis(exp.min(self.max_delay_ms))
    }
}

// --- OpenAI-compatible wire types ---

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

/// Counting semaphore bounding concurrent in-flight HTTP requests.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}

/// Blocking client for `POST {endpoint}/v1/chat/completions`.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    bearer_token: Option<String>,
    semaphore: Semaphore,
}

impl HttpTransport {
    pub fn new(
        endpoint: impl Into<String>,
        bearer_token: Option<String>,
        max_in_flight: usize,
    ) -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            bearer_token,
            semaphore: Semaphore::new(max_in_flight.max(1)),
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        let _permit = self.semaphore.acquire();
        let body = ChatBody {
            model: &req.params.model_id,
            messages: &req.messages,
            temperature: req.params.temperature,
            top_p: req.params.top_p,
            max_tokens: req.params.max_tokens,
            seed: req.params.effective_seed(),
        };
        let url = format!("{}/v1/chat/completions", self.endpoint);
        let mut builder = self.client.post(&url).json(&body);
        if let Some(token) = &self.bearer_token {
            builder = builder.bearer_auth(token);
        }
        let response = builder
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;

        let status = response.status();
        if status.as_u16() == 429 {
            let retry_after_ms = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
                .map(|secs| secs * 1_000);
            return Err(GatewayError::RateLimited { retry_after_ms });
        }
        if status.is_server_error() {
            return Err(GatewayError::Transport(format!("server returned {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(GatewayError::MalformedResponse(format!(
                "status {status}: {text}"
            )));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
        let first = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
        let content = first
            .message
            .content
            .ok_or_else(|| GatewayError::MalformedResponse("choice has no content".into()))?;
        let (prompt_tokens, completion_tokens) = parsed
            .usage
            .map(|u| (u.prompt_tokens, u.completion_tokens))
            .unwrap_or((None, None));
        Ok(Completion {
            content,
            prompt_tokens,
            completion_tokens,
        })
    }
}

type ScriptFn = dyn Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync;

/// Scripted transport for tests and fixture authoring: answers every
/// request through a closure and counts what it sees.
pub struct ScriptedTransport {
    script: Box<ScriptFn>,
    calls: AtomicUsize,
}

impl ScriptedTransport {
    pub fn new(
        script: impl Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            script: Box::new(script),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(Completion {
            content: (self.script)(req)?,
            prompt_tokens: None,
            completion_tokens: None,
        })
    }
}

enum Mode {
    /// Pass-through to the transport with retry.
    Live,
    /// Serve from the store only; miss is an error.
    Replay,
    /// Serve from the store when present, otherwise call the transport and persist.
    Record,
}

/// Point-in-time snapshot of the gateway's call counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounters {
    /// Completions served to callers, from any source.
    pub completions_served: usize,
    /// Requests that reached the transport (network or scripted).
    pub transport_calls: usize,
    /// Requests answered from the fixture store.
    pub store_hits: usize,
}

impl CallCounters {
    pub fn delta_since(&self, earlier: &CallCounters) -> CallCounters {
        CallCounters {
            completions_served: self.completions_served - earlier.completions_served,
            transport_calls: self.transport_calls - earlier.transport_calls,
            store_hits: self.store_hits - earlier.store_hits,
        }
    }
}

/// Shared handle to one configured backend. Cheap to share by reference
/// across workers; fixture writes are serialized internally.
pub struct Gateway {
    mode: Mode,
    transport: Option<Box<dyn Transport>>,
    store: Option<Mutex<FixtureStore>>,
    retry: RetryPolicy,
    completions_served: AtomicUsize,
    transport_calls: AtomicUsize,
    store_hits: AtomicUsize,
}

impl Gateway {
    /// Live HTTP backend against an OpenAI-compatible endpoint.
    pub fn http(
        endpoint: impl Into<String>,
        bearer_token: Option<String>,
        max_in_flight: usize,
    ) -> Self {
        Self::live(HttpTransport::new(endpoint, bearer_token, max_in_flight))
    }

    /// Live backend over an arbitrary transport.
    pub fn live(transport: impl Transport + 'static) -> Self {
        Self {
            mode: Mode::Live,
            transport: Some(Box::new(transport)),
            store: None,
            retry: RetryPolicy::default(),
            completions_served: AtomicUsize::new(0),
            transport_calls: AtomicUsize::new(0),
            store_hits: AtomicUsize::new(0),
        }
    }

    /// Deterministic replay from an existing fixture file.
    pub fn replay(fixture_path: &Path) -> Result<Self, GatewayError> {
        let store = FixtureStore::open(fixture_path)?;
        Ok(Self {
            mode: Mode::Replay,
            transport: None,
            store: Some(Mutex::new(store)),
            retry: RetryPolicy::default(),
            completions_served: AtomicUsize::new(0),
            transport_calls: AtomicUsize::new(0),
            store_hits: AtomicUsize::new(0),
        })
    }

    /// Recording proxy: serves known requests from the fixture file and
    /// forwards the rest to the transport, persisting what comes back.
    pub fn record(
        transport: impl Transport + 'static,
        fixture_path: &Path,
    ) -> Result<Self, GatewayError> {
        let store = FixtureStore::open_or_create(fixture_path)?;
        Ok(Self {
            mode: Mode::Record,
            transport: Some(Box::new(transport)),
            store: Some(Mutex::new(store)),
            retry: RetryPolicy::default(),
            completions_served: AtomicUsize::new(0),
            transport_calls: AtomicUsize::new(0),
            store_hits: AtomicUsize::new(0),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn counters(&self) -> CallCounters {
        CallCounters {
            completions_served: self.completions_served.load(Ordering::SeqCst),
            transport_calls: self.transport_calls.load(Ordering::SeqCst),
            store_hits: self.store_hits.load(Ordering::SeqCst),
        }
    }

    /// Resolves one completion request according to the backend mode.
    pub fn complete(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        req.validate()?;
        let hash = request_hash(req);

        if matches!(self.mode, Mode::Replay | Mode::Record) {
            let store = self.store.as_ref().unwrap().lock().unwrap();
            if let Some(content) = store.get(&hash) {
                let completion = Completion {
                    content: content.clone(),
                    prompt_tokens: None,
                    completion_tokens: None,
                };
                self.store_hits.fetch_add(1, Ordering::SeqCst);
                self.completions_served.fetch_add(1, Ordering::SeqCst);
                return Ok(completion);
            }
            if matches!(self.mode, Mode::Replay) {
                return Err(GatewayError::FixtureMiss { hash });
            }
        }

        let completion = self.send_with_retry(req)?;
        if let Some(store) = &self.store {
            store.lock().unwrap().insert(req, &completion.content)?;
        }
        self.completions_served.fetch_add(1, Ordering::SeqCst);
        Ok(completion)
    }

    fn send_with_retry(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        let transport = self
            .transport
            .as_ref()
            .expect("live/record gateway has a transport");
        let mut attempt = 0;
        loop {
            self.transport_calls.fetch_add(1, Ordering::SeqCst);
            match transport.send(req) {
                Ok(completion) => return Ok(completion),
                Err(err) if err.is_retryable() && attempt + 1 < self.retry.max_attempts => {
                    let delay = self.retry.delay_for(attempt, &err);
                    log::warn!(
                        "attempt {}/{} failed ({err}); retrying in {:?}",
                        attempt + 1,
                        self.retry.max_attempts,
                        delay
                    );
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }

    /// Measures wall time around `complete`, for transcript latency fields.
    pub fn complete_timed(
        &self,
        req: &CompletionRequest,
    ) -> Result<(Completion, u64), GatewayError> {
        let start = Instant::now();
        let completion = self.complete(req)?;
        Ok((completion, start.elapsed().as_millis() as u64))
    }
}

//! Chat-completion clients, HTTP transport, and record/replay stubs.
//!
//! Everything that talks to a remote model goes through [`JsonTransport`],
//! so tests can substitute an in-process fake for the network.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const LLM_API_KEY: &str = "LLM_API_KEY";
pub const LLM_API_BASE: &str = "LLM_API_BASE";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("server returned status {0}")]
    Status(u16),
    #[error("transport failure: {0}")]
    Io(String),
    #[error("malformed response: {0}")]
    Decode(String),
}

impl TransportError {
    /// Throttling, server errors and connection failures are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Status(code) => *code == 429 || *code >= 500,
            TransportError::Io(_) => true,
            TransportError::Decode(_) => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("request failed after {attempts} attempt(s): {source}")]
    Transport {
        attempts: usize,
        #[source]
        source: TransportError,
    },
    #[error("no recorded response for prompt {0}")]
    NotRecorded(String),
    #[error("stub file {path}: {message}")]
    Stub { path: PathBuf, message: String },
}

/// POSTs a JSON body and returns the decoded JSON response.
pub trait JsonTransport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, TransportError>;
}

/// Blocking HTTP(S) transport.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl JsonTransport for HttpTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        let mut req = self.agent.post(url);
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) => TransportError::Status(code),
            other => TransportError::Io(other.to_string()),
        })?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| TransportError::Decode(e.to_string()))
    }
}

/// Exponential backoff: `base`, `base * factor`, ... for at most `max_attempts` tries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_delay_ms: u64,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
            factor: 2,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: usize) -> Duration {
        let mult = (self.factor as u64).saturating_pow(attempt as u32);
        Duration::from_millis(self.base_delay_ms.saturating_mul(mult))
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, TransportError>,
    ) -> Result<T, (usize, TransportError)> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) => {
                    attempt += 1;
                    if attempt >= attempts || !e.is_retryable() {
                        return Err((attempt, e));
                    }
                    let wait = self.delay(attempt - 1);
                    log::debug!("retrying after {wait:?}: {e}");
                    std::thread::sleep(wait);
                }
            }
        }
    }
}

/// A model that answers a single-turn prompt.
pub trait ChatModel: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;

    /// Identifier recorded in index provenance.
    fn id(&self) -> String;
}

impl<M: ChatModel + ?Sized> ChatModel for Box<M> {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

impl<M: ChatModel + ?Sized> ChatModel for Arc<M> {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    pub credential_env: String,
    pub temperature: f64,
    pub max_in_flight: usize,
    /// Extra attempts when a response cannot be parsed.
    pub retry_budget: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: std::env::var(LLM_API_BASE).unwrap_or_else(|_| "https://api.openai.com/v1".into()),
            model: "gpt-4".into(),
            credential_env: LLM_API_KEY.into(),
            temperature: 0.0,
            max_in_flight: 4,
            retry_budget: 2,
            retry: RetryPolicy::default(),
        }
    }
}

/// Chat-completions client: `{"model", "temperature", "messages": [{"role": "user", ...}]}`.
pub struct HttpChatModel {
    cfg: LlmConfig,
    api_key: Option<String>,
    transport: Arc<dyn JsonTransport>,
}

impl std::fmt::Debug for HttpChatModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatModel")
            .field("endpoint", &self.cfg.endpoint)
            .field("model", &self.cfg.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpChatModel {
    /// Reads the credential from the environment variable named in `cfg`.
    pub fn from_env(cfg: LlmConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&cfg.credential_env)
            .map_err(|_| LlmError::MissingCredential(cfg.credential_env.clone()))?;
        Ok(Self::with_transport(cfg, Some(key), Arc::new(HttpTransport::default())))
    }

    pub fn with_transport(cfg: LlmConfig, api_key: Option<String>, transport: Arc<dyn JsonTransport>) -> Self {
        Self { cfg, api_key, transport }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        })
    }
}

fn message_content(resp: &Value) -> Result<String, TransportError> {
    resp.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TransportError::Decode("missing choices[0].message.content".into()))
}

impl ChatModel for HttpChatModel {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let url = format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'));
        let body = self.request_body(prompt);
        self.cfg
            .retry
            .run(|| {
                self.transport
                    .post_json(&url, self.api_key.as_deref(), &body)
                    .and_then(|v| message_content(&v))
            })
            .map_err(|(attempts, source)| LlmError::Transport { attempts, source })
    }

    fn id(&self) -> String {
        format!("chat:{}", self.cfg.model)
    }
}

/// Key under which a prompt's response is stored in a stub file.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Replays responses from a stub file: a JSON object mapping
/// `sha256(prompt)` (lowercase hex) to the response text.
#[derive(Debug, Clone, Default)]
pub struct ReplayChat {
    responses: BTreeMap<String, String>,
}

impl ReplayChat {
    pub fn new(responses: BTreeMap<String, String>) -> Self {
        Self { responses }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let stub_err = |message: String| LlmError::Stub {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| stub_err(e.to_string()))?;
        let responses = serde_json::from_str(&text).map_err(|e| stub_err(e.to_string()))?;
        Ok(Self { responses })
    }

    /// Registers the response for a literal prompt.
    pub fn insert(&mut self, prompt: &str, response: impl Into<String>) {
        self.responses.insert(prompt_hash(prompt), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatModel for ReplayChat {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let key = prompt_hash(prompt);
        self.responses.get(&key).cloned().ok_or(LlmError::NotRecorded(key))
    }

    fn id(&self) -> String {
        "replay".into()
    }
}

/// Forwards to an inner model and remembers every exchange so it can be
/// written out as a replay stub.
pub struct RecordingChat<M> {
    inner: M,
    log: Mutex<BTreeMap<String, String>>,
}

impl<M: ChatModel> RecordingChat<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            log: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LlmError> {
        let path = path.as_ref();
        let log = self.log.lock().unwrap();
        let text = serde_json::to_string_pretty(&*log).expect("map serializes");
        fs::write(path, text).map_err(|e| LlmError::Stub {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

impl<M: ChatModel> ChatModel for RecordingChat<M> {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let out = self.inner.complete(prompt)?;
        self.log.lock().unwrap().insert(prompt_hash(prompt), out.clone());
        Ok(out)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

/// Chat model backed by a closure. Handy for scripted tests.
pub struct FnChat<F>(pub F);

impl<F> ChatModel for FnChat<F>
where
    F: Fn(&str) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        (self.0)(prompt)
    }

    fn id(&self) -> String {
        "fn".into()
    }
}

/// Applies `f` to every item with at most `max_in_flight` calls running at
/// once. Results come back in input order.
pub fn bounded_map<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = max_in_flight.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scripted {
        replies: Mutex<Vec<Result<Value, TransportError>>>,
        seen: Mutex<Vec<(String, Option<String>, Value)>>,
    }

    impl JsonTransport for Scripted {
        fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, TransportError> {
            self.seen
                .lock()
                .unwrap()
                .push((url.to_string(), bearer.map(str::to_string), body.clone()));
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn fast_cfg() -> LlmConfig {
        LlmConfig {
            endpoint: "http://stub/v1/".into(),
            model: "m".into(),
            retry: RetryPolicy {
                max_attempts: 3,
                base_delay_ms: 1,
                factor: 2,
            },
            ..LlmConfig::default()
        }
    }

    fn reply(text: &str) -> Result<Value, TransportError> {
        Ok(json!({"choices": [{"message": {"role": "assistant", "content": text}}]}))
    }

    #[test]
    fn chat_wire_format() {
        let t = Arc::new(Scripted {
            replies: Mutex::new(vec![reply("hello")]),
            seen: Mutex::new(vec![]),
        });
        let m = HttpChatModel::with_transport(fast_cfg(), Some("k".into()), t.clone());
        assert_eq!(m.complete("hi").unwrap(), "hello");
        let seen = t.seen.lock().unwrap();
        let (url, bearer, body) = &seen[0];
        assert_eq!(url, "http://stub/v1/chat/completions");
        assert_eq!(bearer.as_deref(), Some("k"));
        assert_eq!(body["model"], "m");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hi");
    }

    #[test]
    fn retries_on_throttle_then_succeeds() {
        let t = Arc::new(Scripted {
            replies: Mutex::new(vec![Err(TransportError::Status(429)), Err(TransportError::Status(503)), reply("ok")]),
            seen: Mutex::new(vec![]),
        });
        let m = HttpChatModel::with_transport(fast_cfg(), None, t.clone());
        assert_eq!(m.complete("x").unwrap(), "ok");
        assert_eq!(t.seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn gives_up_after_budget() {
        let t = Arc::new(Scripted {
            replies: Mutex::new(vec![Err(TransportError::Status(500)); 5]),
            seen: Mutex::new(vec![]),
        });
        let m = HttpChatModel::with_transport(fast_cfg(), None, t.clone());
        match m.complete("x") {
            Err(LlmError::Transport { attempts: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Arc::new(Scripted {
            replies: Mutex::new(vec![Err(TransportError::Status(401)), reply("never")]),
            seen: Mutex::new(vec![]),
        });
        let m = HttpChatModel::with_transport(fast_cfg(), None, t.clone());
        assert!(matches!(m.complete("x"), Err(LlmError::Transport { attempts: 1, .. })));
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(1), Duration::from_millis(1000));
        assert_eq!(p.delay(2), Duration::from_millis(2000));
    }

    #[test]
    fn debug_redacts_key() {
        let m = HttpChatModel::with_transport(fast_cfg(), Some("sk-secret".into()), Arc::new(HttpTransport::default()));
        let dbg = format!("{m:?}");
        assert!(!dbg.contains("sk-secret"));
    }

    #[test]
    fn replay_and_record() {
        let mut stub = ReplayChat::default();
        stub.insert("p1", "r1");
        let rec = RecordingChat::new(stub);
        assert_eq!(rec.complete("p1").unwrap(), "r1");
        assert!(matches!(rec.complete("p2"), Err(LlmError::NotRecorded(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stub.json");
        rec.save(&path).unwrap();
        let back = ReplayChat::load(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.complete("p1").unwrap(), "r1");
    }

    #[test]
    fn bounded_map_preserves_order() {
        let items: Vec<usize> = (0..37).collect();
        let out = bounded_map(&items, 4, |i, x| {
            assert_eq!(i, *x);
            x * 2
        });
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(bounded_map(&Vec::<u8>::new(), 4, |_, x| *x).is_empty());
    }
}

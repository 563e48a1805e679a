//! Language-model client layer: chat-completion request types, a sampling
//! client trait, and deterministic substitutes (scripted responses and an
//! on-disk record/replay store).
//!
//! Requests are hashed to a stable content digest so that a recorded run can
//! be replayed byte-for-byte later without network access.

mod http;

pub use http::{HttpConfig, HttpLm};

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned status {status}: {message}")]
    Status { status: u16, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no recorded response for request digest {0}")]
    ReplayMiss(String),
    #[error("scripted completions exhausted")]
    ScriptExhausted,
    #[error("retries exhausted after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LmError {
    /// Worth retrying: transport failures, rate limits, and server-side
    /// errors. Client errors and malformed payloads are permanent.
    pub fn is_transient(&self) -> bool {
        match self {
            LmError::Transport(_) => true,
            LmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One part of a message body, following the parts-array chat format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageRef },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: vec![ContentPart::Text { text: text.into() }] }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: vec![ContentPart::Text { text: text.into() }] }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }

    /// Concatenated text parts of the message.
    pub fn text(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::ImageUrl { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    /// Number of completions to sample.
    pub n: usize,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams { n: 1, temperature: 1.0, top_p: 1.0, max_tokens: None }
    }
}

/// A chat-completion request. Serializes to the standard wire shape with the
/// sampling parameters inlined at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(flatten)]
    pub params: SamplingParams,
}

/// Stable content digest of a request: SHA-256 over its canonical JSON
/// (object keys sorted). The record/replay store is keyed by this.
pub fn request_digest(request: &ChatRequest) -> String {
    let value = serde_json::to_value(request).expect("request serializes");
    let canonical = serde_json::to_string(&value).expect("value serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    format!("{:x}", hasher.finalize())
}

/// A client that samples completions for a chat request. Implementations
/// return one text per sample, in sample order.
pub trait LmClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LmError>;
}

impl<T: LmClient + ?Sized> LmClient for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LmError> {
        (**self).complete(request)
    }
}

/// Test double that replays a fixed queue of completion batches and records
/// every request it saw.
#[derive(Default)]
pub struct ScriptedLm {
    responses: Mutex<VecDeque<Vec<String>>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedLm {
    pub fn new(batches: Vec<Vec<String>>) -> Self {
        ScriptedLm { responses: Mutex::new(batches.into()), requests: Mutex::new(Vec::new()) }
    }

    /// One batch that answers every sample of a single request identically.
    pub fn repeating(text: &str, n: usize) -> Self {
        Self::new(vec![vec![text.to_string(); n]])
    }

    pub fn seen_requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl LmClient for ScriptedLm {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LmError> {
        self.requests.lock().unwrap().push(request.clone());
        self.responses.lock().unwrap().pop_front().ok_or(LmError::ScriptExhausted)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredExchange {
    request: serde_json::Value,
    texts: Vec<String>,
}

/// Digest-keyed on-disk store of request/response exchanges.
///
/// In recording mode, requests missing from the store are forwarded to the
/// inner client and the responses persisted, so an interrupted recording run
/// resumes where it left off. In replay mode there is no inner client and a
/// missing entry is an error — replayed runs never touch the network.
pub struct CachedLm<C: LmClient> {
    inner: Option<C>,
    dir: PathBuf,
}

impl<C: LmClient> CachedLm<C> {
    pub fn recording(inner: C, dir: impl Into<PathBuf>) -> Self {
        CachedLm { inner: Some(inner), dir: dir.into() }
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    fn load(&self, digest: &str) -> Result<Option<Vec<String>>, LmError> {
        let path = self.entry_path(digest);
        if !path.exists() {
            return Ok(None);
        }
        let raw = std::fs::read_to_string(&path)?;
        let stored: StoredExchange = serde_json::from_str(&raw)
            .map_err(|e| LmError::Malformed(format!("store entry {digest}: {e}")))?;
        Ok(Some(stored.texts))
    }

    fn persist(&self, request: &ChatRequest, digest: &str, texts: &[String]) -> Result<(), LmError> {
        std::fs::create_dir_all(&self.dir)?;
        let stored = StoredExchange {
            request: serde_json::to_value(request).expect("request serializes"),
            texts: texts.to_vec(),
        };
        let json = serde_json::to_string_pretty(&stored).expect("exchange serializes");
        std::fs::write(self.entry_path(digest), json)?;
        Ok(())
    }
}

impl CachedLm<NeverLm> {
    /// Replay-only store over a directory of recorded exchanges.
    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        CachedLm { inner: None, dir: dir.into() }
    }
}

impl<C: LmClient> LmClient for CachedLm<C> {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LmError> {
        let digest = request_digest(request);
        if let Some(texts) = self.load(&digest)? {
            return Ok(texts);
        }
        match &self.inner {
            Some(inner) => {
                let texts = inner.complete(request)?;
                self.persist(request, &digest, &texts)?;
                Ok(texts)
            }
            None => Err(LmError::ReplayMiss(digest)),
        }
    }
}

/// Uninhabited-by-construction client used as the inner type of a
/// replay-only store.
pub struct NeverLm;

impl LmClient for NeverLm {
    fn complete(&self, _request: &ChatRequest) -> Result<Vec<String>, LmError> {
        Err(LmError::Transport("no live client configured".into()))
    }
}

/// Load every digest present in a store directory (for inspection/tests).
pub fn store_digests(dir: &Path) -> Result<Vec<String>, LmError> {
    let mut digests = Vec::new();
    if !dir.exists() {
        return Ok(digests);
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                digests.push(stem.to_string());
            }
        }
    }
    digests.sort();
    Ok(digests)
}

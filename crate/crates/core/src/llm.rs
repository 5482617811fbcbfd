//! Text-generation clients used by the planner and selector stages.
//!
//! Two backends: a remote chat-completions endpoint with bounded retries,
//! and a transcript stub that replays canned responses keyed by a request
//! fingerprint.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const URL_ENV: &str = "JF_LLM_URL";
pub const KEY_ENV: &str = "JF_LLM_KEY";

static NETWORK_CALLS: AtomicUsize = AtomicUsize::new(0);

pub(crate) fn count_network_call() {
    NETWORK_CALLS.fetch_add(1, Ordering::SeqCst);
}

/// Number of outbound HTTP requests issued by this process so far.
pub fn network_calls() -> usize {
    NETWORK_CALLS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system_instruction: String,
    pub user_content: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(system_instruction: impl Into<String>, user_content: impl Into<String>) -> Self {
        Self {
            system_instruction: system_instruction.into(),
            user_content: user_content.into(),
            max_tokens: 512,
            temperature: 0.0,
            seed: None,
        }
    }

    /// SHA-256 over instruction and content only; sampling settings are
    /// excluded so stubs survive tuning changes.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.system_instruction, &self.user_content)
    }
}

pub fn fingerprint(system_instruction: &str, user_content: &str) -> String {
    let mut h = Sha256::new();
    h.update(system_instruction.as_bytes());
    h.update([0u8]);
    h.update(user_content.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub backend: String,
    pub retries: u32,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResponse {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("endpoint returned non-retryable status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("stub has no response for fingerprint {0}")]
    StubMiss(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("configuration: {0}")]
    Config(String),
}

pub trait TextGenerator: Sync {
    fn backend_id(&self) -> &str;
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, LlmError>;
}

fn check_request(r: &GenerationRequest) -> Result<(), LlmError> {
    if r.max_tokens == 0 {
        return Err(LlmError::InvalidRequest("max_tokens must be >= 1".into()));
    }
    if r.temperature.is_nan() || r.temperature < 0.0 {
        return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
    }
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct StubRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    system_instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    user_content: Option<String>,
    response: String,
}

/// Replays canned responses. In strict mode an unknown fingerprint is an
/// error; otherwise it yields an empty response.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranscriptStub {
    pub responses: BTreeMap<String, String>,
    pub strict_mode: bool,
}

impl TranscriptStub {
    pub fn new(strict_mode: bool) -> Self {
        Self {
            responses: BTreeMap::new(),
            strict_mode,
        }
    }

    pub fn insert(&mut self, system_instruction: &str, user_content: &str, response: impl Into<String>) {
        self.responses
            .insert(fingerprint(system_instruction, user_content), response.into());
    }

    /// Newline-delimited records carrying either a `fingerprint` or the
    /// `system_instruction`/`user_content` pair, plus `response`.
    pub fn load(path: &Path, strict_mode: bool) -> Result<Self, LlmError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let mut stub = Self::new(strict_mode);
        for (i, line) in body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: StubRecord = serde_json::from_str(line)
                .map_err(|e| LlmError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            let fp = match (rec.fingerprint, rec.system_instruction, rec.user_content) {
                (Some(fp), _, _) => fp,
                (None, Some(s), Some(u)) => fingerprint(&s, &u),
                _ => {
                    return Err(LlmError::Config(format!(
                        "{}:{}: record needs a fingerprint or instruction and content",
                        path.display(),
                        i + 1
                    )))
                }
            };
            stub.responses.insert(fp, rec.response);
        }
        Ok(stub)
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (fp, resp) in &self.responses {
            let rec = StubRecord {
                fingerprint: Some(fp.clone()),
                system_instruction: None,
                user_content: None,
                response: resp.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("stub record serializes"));
            out.push('\n');
        }
        out
    }
}

impl TextGenerator for TranscriptStub {
    fn backend_id(&self) -> &str {
        "stub"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, LlmError> {
        check_request(request)?;
        let fp = request.fingerprint();
        let text = match self.responses.get(&fp) {
            Some(t) => t.clone(),
            None if self.strict_mode => return Err(LlmError::StubMiss(fp)),
            None => String::new(),
        };
        Ok(GenerationResponse {
            text,
            usage: Usage {
                backend: "stub".into(),
                ..Usage::default()
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout,
    Connection(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

/// The HTTP boundary, split out so retry behaviour can be tested offline.
pub trait Transport: Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<TransportResponse, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<TransportResponse, TransportError> {
        count_network_call();
        let mut req = self.agent.post(url);
        if let Some(key) = bearer {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body.clone()) {
            Ok(resp) => {
                let status = resp.status();
                let body = resp
                    .into_string()
                    .map_err(|e| TransportError::Connection(e.to_string()))?;
                Ok(TransportResponse { status, body })
            }
            Err(ureq::Error::Status(status, resp)) => Ok(TransportResponse {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("Timeout") {
                    Err(TransportError::Timeout)
                } else {
                    Err(TransportError::Connection(msg))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Chat-completions client. The API key is read from the environment by
/// [`RemoteClient::from_env`] and never from configuration files.
pub struct RemoteClient<T: Transport = HttpTransport> {
    url: String,
    key: Option<String>,
    model: Option<String>,
    retry: RetryPolicy,
    transport: T,
}

impl RemoteClient<HttpTransport> {
    pub fn from_env(model: Option<String>, retry: RetryPolicy, timeout: Duration) -> Result<Self, LlmError> {
        let url = std::env::var(URL_ENV)
            .map_err(|_| LlmError::Config(format!("{URL_ENV} is not set")))?;
        let key = std::env::var(KEY_ENV).ok();
        Ok(Self::with_transport(url, key, model, retry, HttpTransport::new(timeout)))
    }
}

impl<T: Transport> RemoteClient<T> {
    pub fn with_transport(
        url: String,
        key: Option<String>,
        model: Option<String>,
        retry: RetryPolicy,
        transport: T,
    ) -> Self {
        Self {
            url,
            key,
            model,
            retry,
            transport,
        }
    }

    fn body(&self, r: &GenerationRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "messages": [
                {"role": "system", "content": r.system_instruction},
                {"role": "user", "content": r.user_content},
            ],
            "max_tokens": r.max_tokens,
            "temperature": r.temperature,
        });
        if let Some(seed) = r.seed {
            body["seed"] = seed.into();
        }
        if let Some(model) = &self.model {
            body["model"] = model.clone().into();
        }
        body
    }
}

fn parse_completion(body: &str) -> Result<(String, Option<u64>, Option<u64>), LlmError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let text = v
        .pointer("/choices/0/message/content")
        .or_else(|| v.pointer("/choices/0/text"))
        .and_then(|t| t.as_str())
        .ok_or_else(|| LlmError::Malformed("no choices[0].message.content".into()))?;
    Ok((
        text.to_owned(),
        v.pointer("/usage/prompt_tokens").and_then(|x| x.as_u64()),
        v.pointer("/usage/completion_tokens").and_then(|x| x.as_u64()),
    ))
}

fn retryable(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

impl<T: Transport> TextGenerator for RemoteClient<T> {
    fn backend_id(&self) -> &str {
        "remote"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, LlmError> {
        check_request(request)?;
        let body = self.body(request);
        let mut retries = 0u32;
        let mut timeouts_only = true;
        loop {
            let last = match self.transport.post_json(&self.url, self.key.as_deref(), &body) {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    let (text, prompt_tokens, completion_tokens) = parse_completion(&resp.body)?;
                    return Ok(GenerationResponse {
                        text,
                        usage: Usage {
                            backend: "remote".into(),
                            retries,
                            prompt_tokens,
                            completion_tokens,
                        },
                    });
                }
                Ok(resp) if !retryable(resp.status) => {
                    return Err(LlmError::Status {
                        status: resp.status,
                        body: resp.body,
                    })
                }
                Ok(resp) => {
                    timeouts_only = false;
                    format!("status {}", resp.status)
                }
                Err(TransportError::Timeout) => "timeout".to_owned(),
                Err(TransportError::Connection(e)) => {
                    timeouts_only = false;
                    e
                }
            };
            if retries >= self.retry.max_retries {
                let attempts = retries + 1;
                return Err(if timeouts_only {
                    LlmError::Timeout { attempts }
                } else {
                    LlmError::RetriesExhausted { attempts, last }
                });
            }
            std::thread::sleep(self.retry.base_delay * 2u32.saturating_pow(retries));
            retries += 1;
        }
    }
}

//! Chat-completion access: an HTTP backend speaking the common
//! `{model, messages, temperature, top_p, max_tokens}` JSON protocol and a
//! scripted backend that replays canned replies for offline runs.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::http::{send_with_retry, AdmissionGate, HttpRequest, ReqwestTransport, RetryPolicy, Transport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend quota exceeded: {0}")]
    QuotaExceeded(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("credential rejected: {0}")]
    AuthError(String),
    #[error("no scripted response matches the final user message: {0:?}")]
    ScriptedMiss(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Non-empty, at most one system message and only in first position, no
/// empty user/assistant turns.
pub fn validate_prompt(prompt: &[ChatMessage]) -> Result<(), LlmError> {
    if prompt.is_empty() {
        return Err(LlmError::InvalidPrompt("prompt is empty".into()));
    }
    for (i, msg) in prompt.iter().enumerate() {
        match msg.role {
            Role::System if i > 0 => {
                return Err(LlmError::InvalidPrompt(format!("system message at position {i}")));
            }
            Role::User | Role::Assistant if msg.content.is_empty() => {
                return Err(LlmError::InvalidPrompt(format!("empty message at position {i}")));
            }
            _ => {}
        }
    }
    Ok(())
}

fn last_user_message(prompt: &[ChatMessage]) -> &str {
    prompt
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or("")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.8,
            repetition_penalty: 1.05,
            max_tokens: 1024,
            stop: Vec::new(),
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidParams(format!("temperature {} < 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::InvalidParams(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.repetition_penalty.is_nan() || self.repetition_penalty <= 0.0 {
            return Err(LlmError::InvalidParams(format!(
                "repetition_penalty {} <= 0",
                self.repetition_penalty
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidParams("max_tokens is 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. An unset
    /// variable means no `Authorization` header is sent.
    pub api_key_env_var: String,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub max_retries: u32,
    #[serde(with = "duration_millis")]
    pub retry_base_delay: Duration,
    /// Whether the server accepts a `repetition_penalty` field.
    pub supports_repetition_penalty: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://localhost:8000/v1/chat/completions".into(),
            model_name: "default".into(),
            api_key_env_var: "ELA_API_KEY".into(),
            timeout: Duration::from_secs(60),
            max_in_flight: 8,
            max_retries: 3,
            retry_base_delay: Duration::from_millis(500),
            supports_repetition_penalty: false,
        }
    }
}

pub(crate) mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod duration_millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Anything that can turn a chat prompt into a completion.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &[ChatMessage], params: &SamplingParams) -> Result<String, LlmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, prompt: &[ChatMessage], params: &SamplingParams) -> Result<String, LlmError> {
        (**self).complete(prompt, params)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, prompt: &[ChatMessage], params: &SamplingParams) -> Result<String, LlmError> {
        (**self).complete(prompt, params)
    }
}

/// Validates the prompt and parameters, then asks `backend` for a completion.
pub fn complete(
    prompt: &[ChatMessage],
    params: &SamplingParams,
    backend: &dyn ChatBackend,
) -> Result<String, LlmError> {
    validate_prompt(prompt)?;
    params.validate()?;
    backend.complete(prompt, params)
}

pub struct HttpChatBackend {
    config: BackendConfig,
    api_key: Option<String>,
    transport: Arc<dyn Transport>,
    gate: AdmissionGate,
    retry: RetryPolicy,
}

impl HttpChatBackend {
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        let transport = ReqwestTransport::new().map_err(|e| LlmError::BackendUnavailable(e.to_string()))?;
        Ok(Self::with_transport(config, Arc::new(transport)))
    }

    pub fn with_transport(config: BackendConfig, transport: Arc<dyn Transport>) -> Self {
        let api_key = std::env::var(&config.api_key_env_var).ok().filter(|k| !k.is_empty());
        let retry = RetryPolicy {
            max_retries: config.max_retries,
            base_delay: config.retry_base_delay,
            ..RetryPolicy::default()
        };
        Self {
            gate: AdmissionGate::new(config.max_in_flight),
            api_key,
            transport,
            retry,
            config,
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn request_body(&self, prompt: &[ChatMessage], params: &SamplingParams) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": prompt,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        });
        if self.config.supports_repetition_penalty {
            body["repetition_penalty"] = json!(params.repetition_penalty);
        }
        if !params.stop.is_empty() {
            body["stop"] = json!(params.stop);
        }
        body
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: Option<String>,
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, prompt: &[ChatMessage], params: &SamplingParams) -> Result<String, LlmError> {
        let body = self.request_body(prompt, params).to_string();
        let mut request = HttpRequest::post_json(&self.config.endpoint_url, body, self.config.timeout);
        if let Some(key) = &self.api_key {
            request.headers.push(("Authorization".into(), format!("Bearer {key}")));
        }
        let response = send_with_retry(self.transport.as_ref(), &self.gate, &self.retry, &request)
            .map_err(|e| match e.last_status {
                Some(429) => LlmError::QuotaExceeded(e.to_string()),
                _ => LlmError::BackendUnavailable(e.to_string()),
            })?;
        match response.status {
            200..=299 => {}
            401 | 403 => return Err(LlmError::AuthError(format!("HTTP {}", response.status))),
            status => {
                return Err(LlmError::BackendUnavailable(format!(
                    "HTTP {status}: {}",
                    truncate(&response.body, 200)
                )))
            }
        }
        let parsed: CompletionResponse = serde_json::from_str(&response.body)
            .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse("no choices[0].message.content".into()))
    }
}

fn truncate(s: &str, max_chars: usize) -> &str {
    match s.char_indices().nth(max_chars) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matcher: String,
    pub response: String,
}

impl ScriptEntry {
    pub fn new(matcher: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: matcher.into(),
            response: response.into(),
        }
    }
}

/// Replays canned responses: the first entry whose matcher is a substring
/// of the final user message wins. Every call is recorded.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    script: Vec<ScriptEntry>,
    transcript: Mutex<Vec<Vec<ChatMessage>>>,
}

pub fn scripted_backend(script: Vec<ScriptEntry>) -> ScriptedBackend {
    ScriptedBackend::new(script)
}

impl ScriptedBackend {
    pub fn new(script: Vec<ScriptEntry>) -> Self {
        Self {
            script,
            transcript: Mutex::default(),
        }
    }

    /// Loads a JSON array of `{"match": ..., "response": ...}` objects.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn transcript(&self) -> Vec<Vec<ChatMessage>> {
        self.transcript.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.transcript.lock().unwrap().len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, prompt: &[ChatMessage], _params: &SamplingParams) -> Result<String, LlmError> {
        self.transcript.lock().unwrap().push(prompt.to_vec());
        let last = last_user_message(prompt);
        self.script
            .iter()
            .find(|e| last.contains(&e.matcher))
            .map(|e| e.response.clone())
            .ok_or_else(|| LlmError::ScriptedMiss(truncate(last, 80).to_string()))
    }
}

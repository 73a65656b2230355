//! Chat-model abstraction with tool calling.
//!
//! Three implementations share the [`ChatBackend`] contract: an
//! OpenAI-compatible HTTP client, a scripted mock for hermetic runs and a
//! caching decorator around either.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::trace::{TraceKind, TraceScope};
use crate::kernel::ToolDescriptor;

mod cache;
mod http;
mod mock;

pub use cache::{CachedBackend, ResponseCache, DEFAULT_CACHE_CAPACITY};
pub use http::{HttpBackend, HttpConfig, RetryPolicy};
pub use mock::{MockBackend, MockStats, ScriptEntry, ScriptMatcher, ScriptReply};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_tool_calls(calls: Vec<ToolCall>) -> Self {
        Self {
            tool_calls: calls,
            ..Self::plain(Role::Assistant, "")
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::plain(Role::Tool, content)
        }
    }

    fn check(&self) -> Result<(), String> {
        if (self.role == Role::Tool) != self.tool_call_id.is_some() {
            return Err("tool_call_id must be present exactly on tool messages".into());
        }
        if !self.tool_calls.is_empty() && self.role != Role::Assistant {
            return Err("tool_calls are only allowed on assistant messages".into());
        }
        Ok(())
    }
}

/// What a model is told about a tool: name, description, argument schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: serde_json::Value,
}

impl From<&ToolDescriptor> for ToolSpec {
    fn from(d: &ToolDescriptor) -> Self {
        Self {
            name: d.short_name.clone(),
            description: d.description.clone(),
            parameters: d.parameters_schema(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub tools: Vec<ToolSpec>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        let invalid = |m: String| Err(BackendError::InvalidRequest(m));
        match self.messages.first() {
            None => return invalid("messages must not be empty".into()),
            Some(m) if m.role != Role::System => return invalid("first message must be the system message".into()),
            _ => {}
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return invalid(format!("temperature must be >= 0, got {}", self.temperature));
        }
        for (i, m) in self.messages.iter().enumerate() {
            if let Err(e) = m.check() {
                return invalid(format!("message {i}: {e}"));
            }
        }
        Ok(())
    }

    /// Text of the most recent user message.
    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    pub fn has_tool(&self, name: &str) -> bool {
        self.tools.iter().any(|t| t.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    ToolCalls,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub message: ChatMessage,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub finish: FinishReason,
}

impl ChatResponse {
    /// A response whose finish reason follows from the message: `tool_calls`
    /// when it carries calls, `stop` otherwise.
    pub fn from_message(message: ChatMessage, tokens_in: u64, tokens_out: u64) -> Self {
        let finish = if message.tool_calls.is_empty() {
            FinishReason::Stop
        } else {
            FinishReason::ToolCalls
        };
        Self {
            message,
            tokens_in,
            tokens_out,
            finish,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend rejected the request ({status}): {body}")]
    BadRequest { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    /// Short machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::Unavailable(_) => "backend_unavailable",
            BackendError::BadRequest { .. } => "bad_request",
            BackendError::Malformed(_) => "response_malformed",
            BackendError::InvalidRequest(_) => "invalid_request",
        }
    }
}

pub trait ChatBackend: Send + Sync {
    /// Sends one chat request. Implementations record a `model_call` (or
    /// `cache_hit`) trace event on `trace`.
    fn complete(&self, request: &ChatRequest, trace: &TraceScope) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest, trace: &TraceScope) -> Result<ChatResponse, BackendError> {
        (**self).complete(request, trace)
    }
}

/// Deterministic token estimate: characters / 4, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub(crate) fn record_model_call(
    trace: &TraceScope,
    request: &ChatRequest,
    started: Instant,
    result: &Result<ChatResponse, BackendError>,
) {
    let payload = serde_json::to_string(&request.messages).unwrap_or_default();
    let event = match result {
        Ok(resp) => trace
            .event(TraceKind::ModelCall, &request.model)
            .tokens(resp.tokens_in, resp.tokens_out),
        Err(_) => trace.event(TraceKind::Error, &request.model),
    };
    trace.record(event.duration(started.elapsed()).payload(&payload));
}

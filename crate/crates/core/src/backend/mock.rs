//! Scripted mock backend.
//!
//! A script is a JSON-lines file. Each line pairs a matcher with a reply:
//!
//! ```text
//! {"match_substring": "sony", "reply": "yes"}
//! {"ordinal": 0, "tool_call": {"name": "browse", "arguments": {"query": "sony a7"}}}
//! {"match_substring": "offline", "error": "unavailable"}
//! ```
//!
//! `ordinal: n` answers the n-th request (0-based) the backend receives.
//! `match_substring` entries are matched case-insensitively against the user
//! messages of the request. When several substring entries match, the
//! conversation's turn (the number of assistant messages already in the
//! request) picks among them in script order, repeating the last one once
//! they run out. That keeps substring replies a pure function of the request,
//! so they replay identically under any degree of parallelism.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use super::{
    estimate_tokens, record_model_call, BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse, Role,
    ToolCall,
};
use crate::kernel::trace::TraceScope;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptMatcher {
    Ordinal(usize),
    Substring(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptReply {
    Text(String),
    ToolCalls(Vec<(String, BTreeMap<String, String>)>),
    Error(BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub matcher: ScriptMatcher,
    pub reply: ScriptReply,
}

impl ScriptEntry {
    pub fn substring(needle: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            matcher: ScriptMatcher::Substring(needle.into()),
            reply: ScriptReply::Text(reply.into()),
        }
    }

    pub fn ordinal(n: usize, reply: impl Into<String>) -> Self {
        Self {
            matcher: ScriptMatcher::Ordinal(n),
            reply: ScriptReply::Text(reply.into()),
        }
    }

    pub fn tool_call<'a>(
        matcher: ScriptMatcher,
        name: &str,
        arguments: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Self {
        let args = arguments.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Self {
            matcher,
            reply: ScriptReply::ToolCalls(vec![(name.to_string(), args)]),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("script line {line}: {message}")]
pub struct ScriptParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawToolCall {
    name: String,
    #[serde(default)]
    arguments: serde_json::Map<String, Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    match_substring: Option<String>,
    ordinal: Option<usize>,
    reply: Option<String>,
    tool_call: Option<RawToolCall>,
    tool_calls: Option<Vec<RawToolCall>>,
    error: Option<String>,
}

fn arg_text(v: Value) -> String {
    match v {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

impl TryFrom<RawEntry> for ScriptEntry {
    type Error = String;

    fn try_from(raw: RawEntry) -> Result<Self, String> {
        let matcher = match (raw.match_substring, raw.ordinal) {
            (Some(s), None) if !s.is_empty() => ScriptMatcher::Substring(s),
            (Some(_), None) => return Err("match_substring must not be empty".into()),
            (None, Some(n)) => ScriptMatcher::Ordinal(n),
            _ => return Err("exactly one of match_substring or ordinal is required".into()),
        };
        let convert = |c: RawToolCall| (c.name, c.arguments.into_iter().map(|(k, v)| (k, arg_text(v))).collect());
        let reply = match (raw.reply, raw.tool_call, raw.tool_calls, raw.error) {
            (Some(text), None, None, None) => ScriptReply::Text(text),
            (None, Some(call), None, None) => ScriptReply::ToolCalls(vec![convert(call)]),
            (None, None, Some(calls), None) if !calls.is_empty() => {
                ScriptReply::ToolCalls(calls.into_iter().map(convert).collect())
            }
            (None, None, None, Some(kind)) => ScriptReply::Error(match kind.as_str() {
                "unavailable" => BackendError::Unavailable("scripted outage".into()),
                "bad_request" => BackendError::BadRequest {
                    status: 400,
                    body: "scripted rejection".into(),
                },
                "malformed" => BackendError::Malformed("scripted malformed response".into()),
                other => return Err(format!("unknown error kind {other:?}")),
            }),
            _ => return Err("exactly one of reply, tool_call, tool_calls or error is required".into()),
        };
        Ok(ScriptEntry { matcher, reply })
    }
}

/// Counters exposed for tests and benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MockStats {
    pub calls: usize,
    pub max_in_flight: usize,
}

#[derive(Debug, Default)]
pub struct MockBackend {
    entries: Vec<ScriptEntry>,
    latency: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    captured: Mutex<Vec<ChatRequest>>,
}

impl MockBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            entries,
            ..Self::default()
        }
    }

    /// Parses a JSON-lines script. Blank lines are skipped.
    pub fn parse(script: &str) -> Result<Self, ScriptParseError> {
        let mut entries = Vec::new();
        for (i, line) in script.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| ScriptParseError { line: i + 1, message };
            let raw: RawEntry = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            entries.push(ScriptEntry::try_from(raw).map_err(err)?);
        }
        Ok(Self::new(entries))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptParseError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| ScriptParseError {
            line: 0,
            message: format!("{}: {e}", path.as_ref().display()),
        })?;
        Self::parse(&text)
    }

    /// Sleeps for `latency` inside every call, to make concurrency observable.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn stats(&self) -> MockStats {
        MockStats {
            calls: self.calls.load(Ordering::SeqCst),
            max_in_flight: self.max_in_flight.load(Ordering::SeqCst),
        }
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.captured.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn select(&self, request: &ChatRequest, ordinal: usize) -> Result<&ScriptEntry, BackendError> {
        if let Some(e) = self
            .entries
            .iter()
            .find(|e| e.matcher == ScriptMatcher::Ordinal(ordinal))
        {
            return Ok(e);
        }
        let haystack = request
            .messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.to_lowercase())
            .collect::<Vec<_>>()
            .join("\n");
        let candidates: Vec<&ScriptEntry> = self
            .entries
            .iter()
            .filter(|e| match &e.matcher {
                ScriptMatcher::Substring(s) => haystack.contains(&s.to_lowercase()),
                ScriptMatcher::Ordinal(_) => false,
            })
            .collect();
        let turn = request.messages.iter().filter(|m| m.role == Role::Assistant).count();
        candidates
            .get(turn.min(candidates.len().saturating_sub(1)))
            .copied()
            .ok_or_else(|| {
                let last = request.last_user_message().unwrap_or_default();
                let preview: String = last.chars().take(80).collect();
                BackendError::Malformed(format!("no script entry for request #{ordinal} ({preview:?})"))
            })
    }

    fn respond(&self, request: &ChatRequest, ordinal: usize) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let entry = self.select(request, ordinal)?;
        let prompt: String = request.messages.iter().map(|m| m.content.as_str()).collect();
        let tokens_in = estimate_tokens(&prompt);
        let turn = request.messages.iter().filter(|m| m.role == Role::Assistant).count();
        match &entry.reply {
            ScriptReply::Text(text) => Ok(ChatResponse::from_message(
                ChatMessage::assistant(text.clone()),
                tokens_in,
                estimate_tokens(text),
            )),
            ScriptReply::ToolCalls(calls) => {
                let calls: Vec<ToolCall> = calls
                    .iter()
                    .enumerate()
                    .map(|(k, (name, arguments))| ToolCall {
                        id: format!("call_{turn}_{k}"),
                        name: name.clone(),
                        arguments: arguments.clone(),
                    })
                    .collect();
                let out = serde_json::to_string(&calls).expect("tool calls serialize");
                Ok(ChatResponse::from_message(
                    ChatMessage::assistant_tool_calls(calls),
                    tokens_in,
                    estimate_tokens(&out),
                ))
            }
            ScriptReply::Error(err) => Err(err.clone()),
        }
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest, trace: &TraceScope) -> Result<ChatResponse, BackendError> {
        let started = Instant::now();
        let ordinal = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        self.captured
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(request.clone());
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let result = self.respond(request, ordinal);
        record_model_call(trace, request, started, &result);
        result
    }
}

//! OpenAI-compatible chat-completions client.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{
    estimate_tokens, record_model_call, BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse,
    FinishReason, Role, ToolCall,
};
use crate::kernel::trace::TraceScope;

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Exponential backoff applied to transport errors and 5xx responses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(retry.saturating_sub(1) as i32))
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }
}

impl HttpConfig {
    /// Reads `EM_BASE_URL` and `EM_API_KEY`.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        Self {
            base_url: var("EM_BASE_URL").unwrap_or_else(|| DEFAULT_BASE_URL.into()),
            api_key: var("EM_API_KEY"),
            ..Self::default()
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.config.base_url)
            .field("retry", &self.config.retry)
            .finish_non_exhaustive()
    }
}

enum Attempt {
    Retryable(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &Value) -> Result<Value, Attempt> {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retryable(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Attempt::Fatal(BackendError::Malformed(format!("invalid JSON body: {e}")))),
            429 => Err(Attempt::Retryable(format!("HTTP 429: {text}"))),
            400..=499 => Err(Attempt::Fatal(BackendError::BadRequest { status, body: text })),
            _ => Err(Attempt::Retryable(format!("HTTP {status}: {text}"))),
        }
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let body = wire_request(request);
        let policy = self.config.retry;
        let mut last = String::new();
        for attempt in 1..=policy.max_attempts.max(1) {
            if attempt > 1 {
                std::thread::sleep(policy.delay(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(value) => return parse_response(&value, request),
                Err(Attempt::Fatal(err)) => return Err(err),
                Err(Attempt::Retryable(msg)) => {
                    tracing::debug!(attempt, %msg, "chat request failed");
                    last = msg;
                }
            }
        }
        Err(BackendError::Unavailable(format!(
            "{} after {} attempt(s): {last}",
            self.endpoint(),
            policy.max_attempts.max(1)
        )))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest, trace: &TraceScope) -> Result<ChatResponse, BackendError> {
        let started = Instant::now();
        let result = self.send(request);
        record_model_call(trace, request, started, &result);
        result
    }
}

fn wire_message(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut out = json!({ "role": role, "content": m.content });
    if !m.tool_calls.is_empty() {
        if m.content.is_empty() {
            out["content"] = Value::Null;
        }
        out["tool_calls"] = m
            .tool_calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.id,
                    "type": "function",
                    "function": {
                        "name": c.name,
                        "arguments": serde_json::to_string(&c.arguments).expect("arguments serialize"),
                    }
                })
            })
            .collect();
    }
    if let Some(id) = &m.tool_call_id {
        out["tool_call_id"] = json!(id);
    }
    out
}

/// Chat-completions request body.
pub(crate) fn wire_request(request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": request.model,
        "messages": request.messages.iter().map(wire_message).collect::<Vec<_>>(),
        "temperature": request.temperature,
    });
    if !request.tools.is_empty() {
        body["tools"] = request
            .tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": { "name": t.name, "description": t.description, "parameters": t.parameters }
                })
            })
            .collect();
        body["tool_choice"] = json!("auto");
    }
    body
}

fn parse_tool_call(v: &Value) -> Result<ToolCall, BackendError> {
    let malformed = |m: &str| BackendError::Malformed(m.to_string());
    let id = v["id"].as_str().ok_or_else(|| malformed("tool call without id"))?;
    let name = v["function"]["name"]
        .as_str()
        .ok_or_else(|| malformed("tool call without function name"))?;
    let arguments = match &v["function"]["arguments"] {
        Value::String(s) if s.trim().is_empty() => serde_json::Map::new(),
        Value::String(s) => serde_json::from_str::<serde_json::Map<String, Value>>(s)
            .map_err(|e| BackendError::Malformed(format!("tool call arguments are not a JSON object: {e}")))?,
        Value::Object(o) => o.clone(),
        Value::Null => serde_json::Map::new(),
        _ => return Err(malformed("tool call arguments must be a JSON object")),
    };
    let arguments: BTreeMap<String, String> = arguments
        .into_iter()
        .map(|(k, v)| {
            let text = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            (k, text)
        })
        .collect();
    Ok(ToolCall {
        id: id.to_string(),
        name: name.to_string(),
        arguments,
    })
}

pub(crate) fn parse_response(value: &Value, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
    let choice = value["choices"]
        .get(0)
        .ok_or_else(|| BackendError::Malformed("response has no choices".into()))?;
    let msg = &choice["message"];
    if !msg.is_object() {
        return Err(BackendError::Malformed("choice has no message".into()));
    }
    let content = msg["content"].as_str().unwrap_or_default().to_string();
    let tool_calls = match &msg["tool_calls"] {
        Value::Array(calls) => calls.iter().map(parse_tool_call).collect::<Result<Vec<_>, _>>()?,
        _ => Vec::new(),
    };
    let finish = if !tool_calls.is_empty() {
        FinishReason::ToolCalls
    } else {
        match choice["finish_reason"].as_str() {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some("tool_calls") => FinishReason::Stop,
            Some(_) => FinishReason::Error,
        }
    };
    let usage = &value["usage"];
    let tokens_in = usage["prompt_tokens"].as_u64().unwrap_or_else(|| {
        let prompt: String = request.messages.iter().map(|m| m.content.as_str()).collect();
        estimate_tokens(&prompt)
    });
    let tokens_out = usage["completion_tokens"]
        .as_u64()
        .unwrap_or_else(|| estimate_tokens(&content));
    Ok(ChatResponse {
        message: ChatMessage {
            role: Role::Assistant,
            content,
            tool_calls,
            tool_call_id: None,
        },
        tokens_in,
        tokens_out,
        finish,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ToolSpec;
    use crate::test_server::{Canned, TestServer};

    fn request() -> ChatRequest {
        ChatRequest {
            model: "gpt-test".into(),
            messages: vec![ChatMessage::system("sys"), ChatMessage::user("Entity 1: sony")],
            tools: vec![ToolSpec {
                name: "browse".into(),
                description: "search".into(),
                parameters: json!({"type": "object", "properties": {"query": {"type": "string"}}}),
            }],
            temperature: 0.0,
        }
    }

    fn fast_retry(base_url: String, attempts: u32) -> HttpBackend {
        HttpBackend::new(HttpConfig {
            base_url,
            api_key: Some("k".into()),
            timeout: Duration::from_secs(5),
            retry: RetryPolicy {
                max_attempts: attempts,
                base_delay: Duration::from_millis(5),
                factor: 2.0,
            },
        })
    }

    const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"yes"},"finish_reason":"stop"}],"usage":{"prompt_tokens":12,"completion_tokens":1}}"#;

    #[test]
    fn wire_body_shape() {
        let mut req = request();
        req.messages.push(ChatMessage::assistant_tool_calls(vec![ToolCall {
            id: "c1".into(),
            name: "browse".into(),
            arguments: [("query".to_string(), "sony a7".to_string())].into(),
        }]));
        req.messages.push(ChatMessage::tool("c1", "1. result"));
        let body = wire_request(&req);
        assert_eq!(body["tool_choice"], "auto");
        assert_eq!(body["tools"][0]["type"], "function");
        assert_eq!(body["tools"][0]["function"]["name"], "browse");
        assert_eq!(body["messages"][2]["content"], Value::Null);
        assert_eq!(body["messages"][2]["tool_calls"][0]["function"]["arguments"], r#"{"query":"sony a7"}"#);
        assert_eq!(body["messages"][3]["tool_call_id"], "c1");
        req.tools.clear();
        let body = wire_request(&req);
        assert!(body.get("tools").is_none() && body.get("tool_choice").is_none());
    }

    #[test]
    fn parses_tool_calls() {
        let v: Value = serde_json::from_str(
            r#"{"choices":[{"finish_reason":"tool_calls","message":{"role":"assistant","content":null,
                "tool_calls":[{"id":"call_1","type":"function","function":{"name":"browse","arguments":"{\"query\":\"canon eos r8\",\"k\":2}"}}]}}]}"#,
        )
        .unwrap();
        let resp = parse_response(&v, &request()).unwrap();
        assert_eq!(resp.finish, FinishReason::ToolCalls);
        assert_eq!(resp.message.tool_calls[0].arguments["query"], "canon eos r8");
        assert_eq!(resp.message.tool_calls[0].arguments["k"], "2");
    }

    #[test]
    fn malformed_responses() {
        for body in [r#"{}"#, r#"{"choices":[]}"#, r#"{"choices":[{"message":{"tool_calls":[{"id":"x","function":{"name":"b","arguments":"[1]"}}]}}]}"#] {
            let v: Value = serde_json::from_str(body).unwrap();
            assert!(matches!(parse_response(&v, &request()), Err(BackendError::Malformed(_))), "{body}");
        }
    }

    #[test]
    fn success_uses_server_token_counts() {
        let server = TestServer::start(vec![Canned::json(200, OK_BODY)]);
        let backend = fast_retry(server.url(), 3);
        let trace = TraceScope::detached();
        let resp = backend.complete(&request(), &trace).unwrap();
        assert_eq!(resp.message.content, "yes");
        assert_eq!((resp.tokens_in, resp.tokens_out), (12, 1));
        let seen = server.requests();
        assert_eq!(seen.len(), 1);
        assert!(seen[0].head.starts_with("POST /chat/completions"));
        assert!(seen[0].head.to_ascii_lowercase().contains("authorization: bearer k"));
        let body: Value = serde_json::from_str(&seen[0].body).unwrap();
        assert_eq!(body["model"], "gpt-test");
        assert_eq!(trace.export().len(), 1);
    }

    #[test]
    fn retries_server_errors() {
        let server = TestServer::start(vec![Canned::json(500, "{}"), Canned::json(503, "{}"), Canned::json(200, OK_BODY)]);
        let resp = fast_retry(server.url(), 3).complete(&request(), &TraceScope::detached()).unwrap();
        assert_eq!(resp.message.content, "yes");
        assert_eq!(server.requests().len(), 3);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let server = TestServer::start(vec![Canned::json(500, "{}"); 5]);
        let err = fast_retry(server.url(), 3).complete(&request(), &TraceScope::detached()).unwrap_err();
        assert!(matches!(err, BackendError::Unavailable(_)));
        assert_eq!(server.requests().len(), 3);
    }

    #[test]
    fn retries_rate_limits() {
        let server = TestServer::start(vec![Canned::json(429, "{}"), Canned::json(200, OK_BODY)]);
        let resp = fast_retry(server.url(), 3).complete(&request(), &TraceScope::detached()).unwrap();
        assert_eq!(resp.message.content, "yes");
        assert_eq!(server.requests().len(), 2);
    }

    #[test]
    fn never_retries_client_errors() {
        let server = TestServer::start(vec![Canned::json(400, r#"{"error":"bad"}"#), Canned::json(200, OK_BODY)]);
        let err = fast_retry(server.url(), 3).complete(&request(), &TraceScope::detached()).unwrap_err();
        assert!(matches!(err, BackendError::BadRequest { status: 400, .. }));
        assert_eq!(server.requests().len(), 1);
    }

    #[test]
    fn unreachable_host_is_unavailable() {
        let port = crate::test_server::closed_port();
        let started = Instant::now();
        let err = fast_retry(format!("http://127.0.0.1:{port}/v1"), 3)
            .complete(&request(), &TraceScope::detached())
            .unwrap_err();
        assert!(matches!(err, BackendError::Unavailable(ref m) if m.contains("3 attempt")), "{err}");
        // 5 ms + 10 ms of backoff between the three attempts
        assert!(started.elapsed() >= Duration::from_millis(15));
    }

    #[test]
    fn default_backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(1), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_millis(1000));
        assert_eq!(p.max_attempts, 3);
    }
}

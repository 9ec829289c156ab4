//! OpenAI-style chat-completions client: request building, response parsing,
//! retries over a pluggable transport, and an append-only call log.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use base64::Engine;
use serde_json::{json, Map, Value};

use super::{
    ChatMessage, ChatResponse, ContentPart, GatewayError, PolicyClient, PolicyEndpoint, Role,
    TokenUsage,
};
use crate::clock::Clock;
use crate::protocol::ToolCall;

/// Raw transport outcome, before retry policy is applied.
#[derive(Debug, Clone)]
pub enum TransportFault {
    /// Connection-level failure: DNS, TLS, timeout.
    Network(String),
    /// HTTP error status with body text.
    Http { status: u16, body: String },
}

pub trait Transport: Send + Sync {
    fn send(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, TransportFault>;
}

/// Blocking HTTPS transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout_secs: u64) -> Self {
        Self {
            client: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(timeout_secs))
                .build()
                .expect("reqwest client"),
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, TransportFault> {
        let mut request = self.client.post(url).json(body);
        if let Some(key) = api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| TransportFault::Network(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| TransportFault::Network(e.to_string()))?;
        if status != 200 {
            return Err(TransportFault::Http { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| TransportFault::Network(e.to_string()))
    }
}

/// Scripted transport for exercising retry behavior without a server.
pub struct MockTransport {
    schedule: Mutex<VecDeque<Result<Value, TransportFault>>>,
    pub sent: Mutex<Vec<Value>>,
}

impl MockTransport {
    pub fn new(schedule: Vec<Result<Value, TransportFault>>) -> Self {
        Self {
            schedule: Mutex::new(schedule.into()),
            sent: Mutex::new(Vec::new()),
        }
    }
}

impl Transport for MockTransport {
    fn send(&self, _url: &str, _key: Option<&str>, body: &Value) -> Result<Value, TransportFault> {
        self.sent.lock().unwrap().push(body.clone());
        self.schedule
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(TransportFault::Network("mock schedule exhausted".into())))
    }
}

/// Append-only JSON-lines log of every request/response pair, sufficient to
/// replay an episode offline. Embedded image bytes are elided to hashes.
pub struct CallLog {
    writer: Mutex<Box<dyn Write + Send>>,
}

impl CallLog {
    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            writer: Mutex::new(Box::new(file)),
        })
    }

    pub fn record(&self, entry: &Value) {
        let mut writer = self.writer.lock().unwrap();
        if let Ok(line) = serde_json::to_string(entry) {
            let _ = writeln!(writer, "{line}");
            let _ = writer.flush();
        }
    }
}

/// Replaces base64 data URLs in a request copy with short hash references so
/// the call log stays readable.
fn elide_images(value: &Value) -> Value {
    match value {
        Value::String(s) if s.starts_with("data:") => {
            if let Some((prefix, data)) = s.split_once(";base64,") {
                use sha2::Digest;
                let digest = sha2::Sha256::digest(data.as_bytes());
                Value::String(format!("{prefix};sha256:{digest:x}"))
            } else {
                value.clone()
            }
        }
        Value::Array(items) => Value::Array(items.iter().map(elide_images).collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), elide_images(v)))
                .collect(),
        ),
        other => other.clone(),
    }
}

/// Builds the JSON request body for one assistant turn.
pub fn build_chat_request(
    endpoint: &PolicyEndpoint,
    messages: &[ChatMessage],
    tools: &[Value],
) -> Result<Value, GatewayError> {
    let wire_messages: Result<Vec<Value>, GatewayError> =
        messages.iter().map(message_to_wire).collect();
    let mut body = json!({
        "model": endpoint.model,
        "messages": wire_messages?,
        "temperature": endpoint.params.temperature,
        "top_p": endpoint.params.top_p,
        "top_k": endpoint.params.top_k,
        "max_tokens": endpoint.params.max_response_tokens,
    });
    if !tools.is_empty() {
        body["tools"] = Value::Array(tools.to_vec());
    }
    Ok(body)
}

fn message_to_wire(message: &ChatMessage) -> Result<Value, GatewayError> {
    let role = match message.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut wire = Map::new();
    wire.insert("role".into(), json!(role));

    let only_text = message
        .content
        .iter()
        .all(|p| matches!(p, ContentPart::Text { .. }));
    if only_text {
        wire.insert("content".into(), json!(message.text()));
    } else {
        let parts: Result<Vec<Value>, GatewayError> = message
            .content
            .iter()
            .map(|part| match part {
                ContentPart::Text { text } => Ok(json!({ "type": "text", "text": text })),
                ContentPart::Image { image } => {
                    let data = image.data.as_ref().ok_or_else(|| {
                        GatewayError::MalformedResponse(format!(
                            "image {} has no pixel data to send",
                            image.handle
                        ))
                    })?;
                    let encoded = base64::engine::general_purpose::STANDARD.encode(&data.bytes);
                    Ok(json!({
                        "type": "image_url",
                        "image_url": {
                            "url": format!("data:{};base64,{}", data.media_type, encoded),
                        },
                    }))
                }
            })
            .collect();
        wire.insert("content".into(), Value::Array(parts?));
    }

    if !message.tool_calls.is_empty() {
        let calls: Vec<Value> = message
            .tool_calls
            .iter()
            .map(|call| {
                json!({
                    "id": call.call_id,
                    "type": "function",
                    "function": {
                        "name": call.tool_name,
                        "arguments": serde_json::to_string(&call.arguments).unwrap_or_default(),
                    },
                })
            })
            .collect();
        wire.insert("tool_calls".into(), Value::Array(calls));
    }
    if let Some(id) = &message.tool_call_id {
        wire.insert("tool_call_id".into(), json!(id));
    }
    Ok(Value::Object(wire))
}

/// Parses a chat-completions response into an assistant message. Tool-call
/// arguments arrive string-encoded and are parsed back into JSON objects.
pub fn parse_chat_response(body: &Value) -> Result<ChatResponse, GatewayError> {
    let message = body
        .get("choices")
        .and_then(|c| c.as_array())
        .and_then(|c| c.first())
        .and_then(|c| c.get("message"))
        .ok_or_else(|| GatewayError::MalformedResponse("no choices[0].message".into()))?;

    let text = message.get("content").and_then(|v| v.as_str());
    let mut tool_calls = Vec::new();
    if let Some(calls) = message.get("tool_calls").and_then(|v| v.as_array()) {
        for (i, call) in calls.iter().enumerate() {
            let function = call
                .get("function")
                .ok_or_else(|| GatewayError::MalformedResponse("tool call without function".into()))?;
            let name = function
                .get("name")
                .and_then(|v| v.as_str())
                .ok_or_else(|| GatewayError::MalformedResponse("tool call without name".into()))?;
            let arguments_raw = function
                .get("arguments")
                .and_then(|v| v.as_str())
                .unwrap_or("{}");
            let arguments: Value = serde_json::from_str(arguments_raw).map_err(|e| {
                GatewayError::MalformedResponse(format!("unparseable tool arguments: {e}"))
            })?;
            let call_id = call
                .get("id")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| format!("call_{i}"));
            tool_calls.push(ToolCall::new(call_id, name, arguments));
        }
    }

    let usage = body.get("usage").map(|u| TokenUsage {
        prompt_tokens: u.get("prompt_tokens").and_then(|v| v.as_u64()).unwrap_or(0),
        completion_tokens: u
            .get("completion_tokens")
            .and_then(|v| v.as_u64())
            .unwrap_or(0),
    });

    Ok(ChatResponse {
        message: ChatMessage::assistant_with_tool_calls(text.map(str::to_string), tool_calls),
        usage,
    })
}

fn looks_like_context_overflow(body: &str) -> bool {
    let lowered = body.to_lowercase();
    lowered.contains("context length")
        || lowered.contains("context_length")
        || lowered.contains("maximum context")
        || lowered.contains("too many tokens")
}

/// Policy client over an OpenAI-compatible chat-completions endpoint.
/// Transient transport failures (network, 5xx, 429) are retried with linear
/// backoff; context overflow and malformed payloads are surfaced distinctly
/// so the episode loop can react.
pub struct HttpPolicy {
    endpoint: PolicyEndpoint,
    transport: Box<dyn Transport>,
    clock: Arc<dyn Clock>,
    log: Option<Arc<CallLog>>,
}

impl HttpPolicy {
    pub fn new(endpoint: PolicyEndpoint, clock: Arc<dyn Clock>, log: Option<Arc<CallLog>>) -> Self {
        let transport = Box::new(HttpTransport::new(endpoint.timeout_secs));
        Self::with_transport(endpoint, transport, clock, log)
    }

    pub fn with_transport(
        endpoint: PolicyEndpoint,
        transport: Box<dyn Transport>,
        clock: Arc<dyn Clock>,
        log: Option<Arc<CallLog>>,
    ) -> Self {
        Self {
            endpoint,
            transport,
            clock,
            log,
        }
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.endpoint.base_url.trim_end_matches('/')
        )
    }
}

impl PolicyClient for HttpPolicy {
    fn chat(
        &self,
        messages: &[ChatMessage],
        tools: &[Value],
    ) -> Result<ChatResponse, GatewayError> {
        let body = build_chat_request(&self.endpoint, messages, tools)?;
        let api_key = std::env::var(&self.endpoint.api_key_env).ok();
        let url = self.url();

        let mut attempts = 0;
        let mut last_reason = String::new();
        while attempts < self.endpoint.retry_max_attempts {
            attempts += 1;
            let started = self.clock.now_ms();
            let outcome = self.transport.send(&url, api_key.as_deref(), &body);
            if let Some(log) = &self.log {
                log.record(&json!({
                    "ts_ms": started,
                    "model": self.endpoint.model,
                    "attempt": attempts,
                    "latency_ms": self.clock.now_ms() - started,
                    "request": elide_images(&body),
                    "response": match &outcome {
                        Ok(v) => v.clone(),
                        Err(TransportFault::Network(e)) => json!({ "error": e }),
                        Err(TransportFault::Http { status, body }) =>
                            json!({ "status": status, "error": body }),
                    },
                }));
            }
            match outcome {
                Ok(response_body) => return parse_chat_response(&response_body),
                Err(TransportFault::Http { status: 400, body })
                    if looks_like_context_overflow(&body) =>
                {
                    return Err(GatewayError::ContextLengthExceeded);
                }
                Err(TransportFault::Http { status, body })
                    if status >= 500 || status == 429 =>
                {
                    last_reason = format!("HTTP {status}: {body}");
                }
                Err(TransportFault::Http { status, body }) => {
                    return Err(GatewayError::MalformedResponse(format!(
                        "HTTP {status}: {body}"
                    )));
                }
                Err(TransportFault::Network(reason)) => last_reason = reason,
            }
            if attempts < self.endpoint.retry_max_attempts {
                self.clock
                    .sleep_ms(self.endpoint.retry_backoff_ms * attempts as u64);
            }
        }
        Err(GatewayError::Transport {
            attempts,
            reason: last_reason,
        })
    }

    fn model_name(&self) -> String {
        self.endpoint.model.clone()
    }
}

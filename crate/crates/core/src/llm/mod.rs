//! Policy and verifier access over a chat wire protocol, plus a scripted
//! policy for deterministic tests. Conversation state is owned by the
//! caller; clients never mutate the message list they are handed.

mod http;

pub use http::{
    build_chat_request, parse_chat_response, CallLog, HttpPolicy, HttpTransport, MockTransport,
    Transport, TransportFault,
};

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::images::ImageData;
use crate::protocol::ToolCall;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempts: {reason}")]
    Transport { attempts: u32, reason: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("context length exceeded")]
    ContextLengthExceeded,
    #[error("scripted policy exhausted after {0} messages")]
    ScriptExhausted(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// Reference to an image in the conversation. Pixel data rides along in
/// memory for wire encoding but is not serialized into logs; logs carry the
/// handle, dimensions, and content hash instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRef {
    pub handle: String,
    pub media_type: String,
    pub width: u32,
    pub height: u32,
    pub sha256: String,
    #[serde(skip)]
    pub data: Option<Arc<ImageData>>,
}

impl ImageRef {
    pub fn new(handle: impl Into<String>, data: Arc<ImageData>) -> Self {
        Self {
            handle: handle.into(),
            media_type: data.media_type.clone(),
            width: data.width,
            height: data.height,
            sha256: data.sha256_hex(),
            data: Some(data),
        }
    }
}

impl PartialEq for ImageRef {
    fn eq(&self, other: &Self) -> bool {
        self.handle == other.handle && self.sha256 == other.sha256
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    Image { image: ImageRef },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default)]
    pub content: Vec<ContentPart>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: vec![ContentPart::Text { text: text.into() }],
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: vec![ContentPart::Text { text: text.into() }],
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn user_with_image(image: ImageRef, text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: vec![
                ContentPart::Image { image },
                ContentPart::Text { text: text.into() },
            ],
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: vec![ContentPart::Text { text: text.into() }],
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn assistant_with_tool_calls(text: Option<String>, tool_calls: Vec<ToolCall>) -> Self {
        Self {
            role: Role::Assistant,
            content: text
                .map(|t| vec![ContentPart::Text { text: t }])
                .unwrap_or_default(),
            tool_calls,
            tool_call_id: None,
        }
    }

    pub fn tool(call_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: vec![ContentPart::Text { text: text.into() }],
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id.into()),
        }
    }

    /// Concatenated text parts.
    pub fn text(&self) -> String {
        self.content
            .iter()
            .filter_map(|part| match part {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn char_count(&self) -> usize {
        self.content
            .iter()
            .map(|part| match part {
                ContentPart::Text { text } => text.chars().count(),
                ContentPart::Image { .. } => 0,
            })
            .sum()
    }
}

/// Sampling settings sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_response_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.95,
            top_k: 60,
            max_response_tokens: 4096,
        }
    }
}

/// Where and how to reach one model. Credentials come from the named
/// environment variable, never from config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyEndpoint {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub params: SamplingParams,
    pub timeout_secs: u64,
    pub retry_max_attempts: u32,
    pub retry_backoff_ms: u64,
}

impl Default for PolicyEndpoint {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "qwen3-vl-30b-a3b-instruct".into(),
            api_key_env: "LLM_API_KEY".into(),
            params: SamplingParams::default(),
            timeout_secs: 300,
            retry_max_attempts: 3,
            retry_backoff_ms: 500,
        }
    }
}

impl PolicyEndpoint {
    /// Preset mirroring the default verifier configuration.
    pub fn verifier_preset() -> Self {
        Self {
            model: "qwen3-vl-235b-a22b".into(),
            api_key_env: "VERIFIER_API_KEY".into(),
            ..Default::default()
        }
    }
}

/// Token usage as reported by the server, when it reports any.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub message: ChatMessage,
    pub usage: Option<TokenUsage>,
}

/// One assistant turn. `tools` is the emitted function-calling schema list;
/// pass an empty slice to disable tools for the turn.
pub trait PolicyClient: Send + Sync {
    fn chat(
        &self,
        messages: &[ChatMessage],
        tools: &[serde_json::Value],
    ) -> Result<ChatResponse, GatewayError>;

    /// Model identifier for logs and reports.
    fn model_name(&self) -> String;
}

/// Replays a fixed list of assistant messages in order, ignoring inputs.
pub struct ScriptedPolicy {
    script: Mutex<VecDeque<ChatMessage>>,
    total: usize,
    name: String,
}

impl ScriptedPolicy {
    pub fn new(script: Vec<ChatMessage>) -> Self {
        let total = script.len();
        Self {
            script: Mutex::new(script.into()),
            total,
            name: "scripted".into(),
        }
    }

    pub fn named(script: Vec<ChatMessage>, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::new(script)
        }
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }
}

impl PolicyClient for ScriptedPolicy {
    fn chat(
        &self,
        _messages: &[ChatMessage],
        _tools: &[serde_json::Value],
    ) -> Result<ChatResponse, GatewayError> {
        let mut script = self.script.lock().unwrap();
        match script.pop_front() {
            Some(message) => Ok(ChatResponse {
                message,
                usage: None,
            }),
            None => Err(GatewayError::ScriptExhausted(self.total)),
        }
    }

    fn model_name(&self) -> String {
        self.name.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn scripted_policy_replays_in_order_then_exhausts() {
        let policy = ScriptedPolicy::new(vec![
            ChatMessage::assistant("A"),
            ChatMessage::assistant_with_tool_calls(
                None,
                vec![ToolCall::new("c1", "poi_keyword_search", json!({"keyword": "kfc"}))],
            ),
        ]);
        let first = policy.chat(&[ChatMessage::user("q")], &[]).unwrap();
        assert_eq!(first.message.text(), "A");
        let second = policy.chat(&[], &[]).unwrap();
        assert_eq!(second.message.tool_calls.len(), 1);
        assert_eq!(second.message.tool_calls[0].tool_name, "poi_keyword_search");
        assert!(matches!(
            policy.chat(&[], &[]),
            Err(GatewayError::ScriptExhausted(2))
        ));
    }

    #[test]
    fn sampling_defaults() {
        let p = SamplingParams::default();
        assert_eq!(p.temperature, 1.0);
        assert_eq!(p.top_p, 0.95);
        assert_eq!(p.top_k, 60);
        assert_eq!(p.max_response_tokens, 4096);
    }

    #[test]
    fn message_text_joins_text_parts_only() {
        let image = ImageRef::new(
            "img_1",
            Arc::new(crate::images::banded_test_image(4, 4)),
        );
        let message = ChatMessage {
            role: Role::User,
            content: vec![
                ContentPart::Text { text: "a".into() },
                ContentPart::Image { image },
                ContentPart::Text { text: "b".into() },
            ],
            tool_calls: Vec::new(),
            tool_call_id: None,
        };
        assert_eq!(message.text(), "a\nb");
        assert_eq!(message.char_count(), 2);
    }

    #[test]
    fn image_refs_serialize_without_pixel_data() {
        let image = ImageRef::new("img_1", Arc::new(crate::images::banded_test_image(4, 4)));
        let json = serde_json::to_value(&image).unwrap();
        assert!(json.get("data").is_none());
        assert_eq!(json["handle"], "img_1");
        let back: ImageRef = serde_json::from_value(json).unwrap();
        assert!(back.data.is_none());
        assert_eq!(back, image);
    }
}

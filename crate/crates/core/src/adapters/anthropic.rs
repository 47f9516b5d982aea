//! Anthropic Messages API client. Same interface as the OpenAI-compatible
//! adapter; only the block framing differs.

use std::collections::HashMap;

use futures::stream::BoxStream;
use serde_json::{json, Value};

use super::sse::{drive, SseParser};
use super::{Emission, ModelAdapter, ModelRequest};
use crate::model::{ContentBlock, Message, Role, UsageMetadata};

pub const DEFAULT_BASE_URL: &str = "https://api.anthropic.com";
const API_VERSION: &str = "2023-06-01";

pub struct AnthropicAdapter {
    client: reqwest::Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
}

impl AnthropicAdapter {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
        }
    }

    pub fn request_body(&self, req: &ModelRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "max_tokens": req.max_tokens,
            "system": req.system_prompt,
            "messages": to_anthropic_messages(&req.history),
            "stream": true,
        });
        if !req.tools.is_empty() {
            body["tools"] = req
                .tools
                .iter()
                .map(|t| json!({"name": t.name, "description": t.description, "input_schema": t.parameters}))
                .collect();
        }
        body
    }
}

impl ModelAdapter for AnthropicAdapter {
    fn name(&self) -> &str {
        "anthropic"
    }

    fn stream_turn(&self, req: ModelRequest) -> BoxStream<'static, Emission> {
        let mut http = self
            .client
            .post(format!("{}/v1/messages", self.base_url))
            .header("anthropic-version", API_VERSION)
            .json(&self.request_body(&req));
        if let Some(key) = &self.api_key {
            http = http.header("x-api-key", key);
        }
        drive(http, AnthropicStreamParser::default())
    }
}

/// Thinking blocks are dropped on the way out: replaying them requires the
/// provider's signature, which the engine does not keep.
pub fn to_anthropic_messages(history: &[Message]) -> Vec<Value> {
    history
        .iter()
        .map(|m| {
            let blocks: Vec<Value> = m
                .blocks
                .iter()
                .filter_map(|b| match b {
                    ContentBlock::Text { text } if !text.is_empty() => Some(json!({"type": "text", "text": text})),
                    ContentBlock::ToolCall { id, tool_name, args } => {
                        Some(json!({"type": "tool_use", "id": id, "name": tool_name, "input": args}))
                    }
                    ContentBlock::ToolResult {
                        call_id,
                        content,
                        is_error,
                        ..
                    } => Some(json!({
                        "type": "tool_result",
                        "tool_use_id": call_id,
                        "content": content,
                        "is_error": is_error,
                    })),
                    _ => None,
                })
                .collect();
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            json!({"role": role, "content": blocks})
        })
        .collect()
}

enum Block {
    Other,
    ToolUse { id: String, name: String, json: String },
}

#[derive(Default)]
pub struct AnthropicStreamParser {
    blocks: HashMap<u64, Block>,
    input_tokens: u64,
    output_tokens: u64,
    finished: bool,
}

impl AnthropicStreamParser {
    pub fn on_data(&mut self, data: &Value) -> Vec<Emission> {
        let mut out = Vec::new();
        let index = data.get("index").and_then(Value::as_u64).unwrap_or(0);
        match data.get("type").and_then(Value::as_str).unwrap_or("") {
            "message_start" => {
                let u = &data["message"]["usage"];
                self.input_tokens = ["input_tokens", "cache_creation_input_tokens", "cache_read_input_tokens"]
                    .iter()
                    .filter_map(|k| u.get(*k).and_then(Value::as_u64))
                    .sum();
                self.output_tokens = u["output_tokens"].as_u64().unwrap_or(0);
            }
            "content_block_start" => {
                let cb = &data["content_block"];
                let block = match cb["type"].as_str() {
                    Some("tool_use") => Block::ToolUse {
                        id: cb["id"].as_str().unwrap_or_default().to_string(),
                        name: cb["name"].as_str().unwrap_or_default().to_string(),
                        json: String::new(),
                    },
                    Some("text") => {
                        if let Some(t) = cb["text"].as_str().filter(|t| !t.is_empty()) {
                            out.push(Emission::Text(t.to_string()));
                        }
                        Block::Other
                    }
                    _ => Block::Other,
                };
                self.blocks.insert(index, block);
            }
            "content_block_delta" => {
                let d = &data["delta"];
                match d["type"].as_str() {
                    Some("text_delta") => out.push(Emission::Text(d["text"].as_str().unwrap_or("").to_string())),
                    Some("thinking_delta") => {
                        out.push(Emission::Thinking(d["thinking"].as_str().unwrap_or("").to_string()))
                    }
                    Some("input_json_delta") => {
                        if let Some(Block::ToolUse { json, .. }) = self.blocks.get_mut(&index) {
                            json.push_str(d["partial_json"].as_str().unwrap_or(""));
                        }
                    }
                    _ => {}
                }
            }
            "content_block_stop" => {
                if let Some(Block::ToolUse { id, name, json }) = self.blocks.remove(&index) {
                    let args = if json.trim().is_empty() {
                        Ok(json!({}))
                    } else {
                        serde_json::from_str(&json)
                    };
                    match args {
                        Ok(args) => out.push(Emission::ToolCall { id, name, args }),
                        Err(e) => {
                            self.finished = true;
                            out.push(Emission::Error(format!("invalid input for tool {name}: {e}")));
                        }
                    }
                }
            }
            "message_delta" => {
                if let Some(n) = data.pointer("/usage/output_tokens").and_then(Value::as_u64) {
                    self.output_tokens = n;
                }
            }
            "message_stop" => out.extend(self.finish()),
            "error" => {
                self.finished = true;
                let message = data
                    .pointer("/error/message")
                    .and_then(Value::as_str)
                    .unwrap_or("provider error");
                out.push(Emission::Error(message.to_string()));
            }
            _ => {}
        }
        out
    }
}

impl SseParser for AnthropicStreamParser {
    fn on_event(&mut self, _event: &str, data: &str) -> Vec<Emission> {
        if self.finished {
            return Vec::new();
        }
        match serde_json::from_str::<Value>(data) {
            Ok(v) => self.on_data(&v),
            Err(e) => {
                self.finished = true;
                vec![Emission::Error(format!("malformed stream event: {e}"))]
            }
        }
    }

    fn finish(&mut self) -> Vec<Emission> {
        if self.finished {
            return Vec::new();
        }
        self.finished = true;
        vec![Emission::Usage(UsageMetadata {
            cumulative_input_tokens: self.input_tokens,
            output_tokens: self.output_tokens,
        })]
    }
}

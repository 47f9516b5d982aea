//! OpenAI-compatible chat-completions client (streaming, with tool calls).

use std::collections::BTreeMap;

use futures::stream::BoxStream;
use serde_json::{json, Value};

use super::sse::{drive, SseParser};
use super::{estimate_tokens, Emission, ModelAdapter, ModelRequest};
use crate::model::{ContentBlock, Message, Role, UsageMetadata};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

pub struct OpenAiCompatAdapter {
    client: reqwest::Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
}

impl OpenAiCompatAdapter {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    pub fn request_body(&self, req: &ModelRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": to_openai_messages(&req.system_prompt, &req.history),
            "stream": true,
            "stream_options": {"include_usage": true},
            "max_tokens": req.max_tokens,
        });
        if !req.tools.is_empty() {
            body["tools"] = req
                .tools
                .iter()
                .map(|t| {
                    json!({
                        "type": "function",
                        "function": {
                            "name": t.name,
                            "description": t.description,
                            "parameters": t.parameters,
                        }
                    })
                })
                .collect();
        }
        body
    }
}

impl ModelAdapter for OpenAiCompatAdapter {
    fn name(&self) -> &str {
        "openai-compat"
    }

    fn stream_turn(&self, req: ModelRequest) -> BoxStream<'static, Emission> {
        let mut http = self.client.post(self.endpoint()).json(&self.request_body(&req));
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        drive(http, OpenAiStreamParser::new(estimate_tokens(&req)))
    }
}

pub fn to_openai_messages(system_prompt: &str, history: &[Message]) -> Vec<Value> {
    let mut out = Vec::new();
    if !system_prompt.is_empty() {
        out.push(json!({"role": "system", "content": system_prompt}));
    }
    for m in history {
        match m.role {
            Role::User => {
                let mut text = Vec::new();
                for b in &m.blocks {
                    match b {
                        ContentBlock::ToolResult { call_id, content, .. } => {
                            out.push(json!({"role": "tool", "tool_call_id": call_id, "content": content}))
                        }
                        ContentBlock::Text { text: t } => text.push(t.as_str()),
                        _ => {}
                    }
                }
                if !text.is_empty() {
                    out.push(json!({"role": "user", "content": text.join("\n")}));
                }
            }
            Role::Assistant => {
                let text = m.text();
                let calls: Vec<Value> = m
                    .tool_calls()
                    .map(|(id, name, args)| {
                        json!({
                            "id": id,
                            "type": "function",
                            "function": {"name": name, "arguments": args.to_string()},
                        })
                    })
                    .collect();
                let mut msg = json!({
                    "role": "assistant",
                    "content": if text.is_empty() { Value::Null } else { Value::String(text) },
                });
                if !calls.is_empty() {
                    msg["tool_calls"] = Value::Array(calls);
                }
                out.push(msg);
            }
        }
    }
    out
}

#[derive(Default)]
struct PartialCall {
    id: String,
    name: String,
    args: String,
}

/// Incremental decoder for chat-completions stream chunks.
///
/// Tool-call fragments are accumulated by index and emitted, in index
/// order, when the stream ends. `reasoning_content` (or `reasoning`) deltas
/// become thinking emissions.
pub struct OpenAiStreamParser {
    calls: BTreeMap<u64, PartialCall>,
    usage: Option<UsageMetadata>,
    estimated_input: u64,
    finished: bool,
}

impl OpenAiStreamParser {
    pub fn new(estimated_input: u64) -> Self {
        Self {
            calls: BTreeMap::new(),
            usage: None,
            estimated_input,
            finished: false,
        }
    }

    pub fn on_chunk(&mut self, chunk: &Value) -> Vec<Emission> {
        let mut out = Vec::new();
        if let Some(err) = chunk.get("error") {
            let message = err
                .get("message")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| err.to_string());
            self.finished = true;
            return vec![Emission::Error(message)];
        }
        if let Some(u) = chunk.get("usage").filter(|u| !u.is_null()) {
            self.usage = Some(UsageMetadata {
                cumulative_input_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
                output_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
            });
        }
        let Some(delta) = chunk.pointer("/choices/0/delta") else {
            return out;
        };
        for key in ["reasoning_content", "reasoning"] {
            if let Some(t) = delta.get(key).and_then(Value::as_str).filter(|t| !t.is_empty()) {
                out.push(Emission::Thinking(t.to_string()));
            }
        }
        if let Some(t) = delta.get("content").and_then(Value::as_str).filter(|t| !t.is_empty()) {
            out.push(Emission::Text(t.to_string()));
        }
        if let Some(calls) = delta.get("tool_calls").and_then(Value::as_array) {
            for c in calls {
                let index = c.get("index").and_then(Value::as_u64).unwrap_or(0);
                let entry = self.calls.entry(index).or_default();
                if let Some(id) = c.get("id").and_then(Value::as_str) {
                    entry.id = id.to_string();
                }
                if let Some(f) = c.get("function") {
                    if let Some(name) = f.get("name").and_then(Value::as_str) {
                        entry.name.push_str(name);
                    }
                    if let Some(args) = f.get("arguments").and_then(Value::as_str) {
                        entry.args.push_str(args);
                    }
                }
            }
        }
        out
    }
}

impl SseParser for OpenAiStreamParser {
    fn on_event(&mut self, _event: &str, data: &str) -> Vec<Emission> {
        if self.finished {
            return Vec::new();
        }
        if data.trim() == "[DONE]" {
            return self.finish();
        }
        match serde_json::from_str::<Value>(data) {
            Ok(chunk) => self.on_chunk(&chunk),
            Err(e) => {
                self.finished = true;
                vec![Emission::Error(format!("malformed stream chunk: {e}"))]
            }
        }
    }

    fn finish(&mut self) -> Vec<Emission> {
        if self.finished {
            return Vec::new();
        }
        self.finished = true;
        let mut out = Vec::new();
        for (_, call) in std::mem::take(&mut self.calls) {
            let args = if call.args.trim().is_empty() {
                Ok(json!({}))
            } else {
                serde_json::from_str(&call.args)
            };
            match args {
                Ok(args) => out.push(Emission::ToolCall {
                    id: call.id,
                    name: call.name,
                    args,
                }),
                Err(e) => {
                    out.push(Emission::Error(format!("invalid arguments for tool {}: {e}", call.name)));
                    return out;
                }
            }
        }
        out.push(Emission::Usage(self.usage.unwrap_or(UsageMetadata {
            cumulative_input_tokens: self.estimated_input,
            output_tokens: 0,
        })));
        out
    }
}

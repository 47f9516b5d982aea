//! Model adapters: one streaming interface over every provider.
//!
//! An adapter turns a [`ModelRequest`] into a stream of [`Emission`]s that
//! always ends with exactly one `Usage` or one `Error`. Dropping the stream
//! cancels the underlying request.

pub mod anthropic;
pub mod mock;
pub mod openai;
mod sse;

use std::sync::Arc;

use futures::stream::BoxStream;
use serde_json::Value;

use crate::config::{ConfigError, ModelConfig};
use crate::model::{Message, UsageMetadata};

pub use anthropic::AnthropicAdapter;
pub use mock::{MockAdapter, MockScript, ScriptError};
pub use openai::OpenAiCompatAdapter;

#[derive(Debug, Clone, PartialEq)]
pub enum Emission {
    Text(String),
    Thinking(String),
    ToolCall { id: String, name: String, args: Value },
    Usage(UsageMetadata),
    Error(String),
}

impl Emission {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Emission::Usage(_) | Emission::Error(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

/// Why the engine is calling the model. Lets scripted adapters keep agent
/// turns, summaries and screening answers in separate queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RequestPurpose {
    #[default]
    Agent,
    Summarize,
    Screen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub system_prompt: String,
    pub history: Vec<Message>,
    pub tools: Vec<ToolSchema>,
    pub max_tokens: u32,
    pub purpose: RequestPurpose,
}

pub trait ModelAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn stream_turn(&self, req: ModelRequest) -> BoxStream<'static, Emission>;
}

/// Builds the adapter named in `config`.
pub fn select_adapter(config: &ModelConfig) -> Result<Arc<dyn ModelAdapter>, ConfigError> {
    let api_key = |default_env: &str| {
        let var = config.api_key_env.as_deref().unwrap_or(default_env);
        std::env::var(var).ok()
    };
    match config.adapter.as_str() {
        "mock" => {
            let path = config
                .script
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("mock adapter requires model.script".into()))?;
            let script = MockScript::from_path(path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            Ok(Arc::new(MockAdapter::new(script)))
        }
        "openai-compat" => Ok(Arc::new(OpenAiCompatAdapter::new(
            config
                .base_url
                .clone()
                .unwrap_or_else(|| openai::DEFAULT_BASE_URL.to_string()),
            config.model.clone(),
            api_key("OPENAI_API_KEY"),
        ))),
        "anthropic" => Ok(Arc::new(AnthropicAdapter::new(
            config
                .base_url
                .clone()
                .unwrap_or_else(|| anthropic::DEFAULT_BASE_URL.to_string()),
            config.model.clone(),
            api_key("ANTHROPIC_API_KEY"),
        ))),
        other => Err(ConfigError::Invalid(format!("unknown model adapter {other:?}"))),
    }
}

/// Rough token estimate for providers that do not report usage.
pub(crate) fn estimate_tokens(req: &ModelRequest) -> u64 {
    let mut chars = req.system_prompt.len();
    for m in &req.history {
        chars += serde_json::to_string(&m.blocks).map(|s| s.len()).unwrap_or(0);
    }
    (chars / 4) as u64
}

//! Locally registered stand-ins for external tools.

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{Tool, ToolContext, ToolError, ToolKind};
use crate::config::ExternalToolConfig;
use crate::permissions::{Operation, PermissionLayer};

/// Returns a fixed response. Every call is gated as an external operation.
pub struct ExternalTool {
    config: ExternalToolConfig,
}

impl ExternalTool {
    pub fn new(config: ExternalToolConfig) -> Self {
        Self { config }
    }
}

#[async_trait]
impl Tool for ExternalTool {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn description(&self) -> &str {
        &self.config.description
    }

    fn parameters(&self) -> Value {
        json!({"type": "object", "additionalProperties": true})
    }

    fn kind(&self) -> ToolKind {
        ToolKind::Write
    }

    fn permission_layer(&self) -> Option<PermissionLayer> {
        Some(PermissionLayer::L4)
    }

    fn operation(&self, _args: &Value) -> Option<Operation> {
        Some(Operation::External {
            name: self.config.name.clone(),
        })
    }

    async fn invoke(&self, _args: Value, _ctx: &ToolContext) -> Result<String, ToolError> {
        Ok(self.config.response.clone())
    }
}

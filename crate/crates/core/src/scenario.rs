//! Offline fixture bundles: a scripted model plus scripted tool outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::orchestrator::{ScriptEntry, ScriptedModel};
use crate::tooling::mock::{mock_registry, ToolFixture};
use crate::tooling::ToolRegistry;

/// JSON shape: `{"script": {<id or question>: {"text_cot": [...], "tools":
/// [...]}}, "tools": {<tool>: {<label>: <output>}}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub script: BTreeMap<String, ScriptEntry>,
    #[serde(default)]
    pub tools: ToolFixture,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// A fresh model whose cursors start at the beginning of every script.
    pub fn model(&self) -> ScriptedModel {
        ScriptedModel::new(self.script.clone())
    }

    pub fn registry(&self) -> ToolRegistry {
        mock_registry(self.tools.clone())
    }
}

//! HTTP clients for tools hosted as services.
//!
//! `POST <base>/tools/<name>` with `{"arguments": {...}, "frames": [...]}`;
//! the reply is `{"kind": ..., "payload": ..., "token_cost": n}`.
//! Query embeddings come from `POST <base>/embed` with `{"text": ...}`,
//! reply `{"embedding": [...]}`.

use serde::Serialize;
use serde_json::{Map, Value};

use super::mock::select_from_manifest;
use super::{Provenance, ToolBackend, ToolCall, ToolContext, ToolResult};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::http::{join_url, JsonClient};
use crate::ingestion::FrameRef;

#[derive(Debug, Serialize)]
pub struct ToolRequest<'a> {
    pub arguments: &'a Map<String, Value>,
    pub frames: &'a [FrameRef],
}

#[derive(Debug, Clone)]
pub struct RemoteToolBackend {
    base_url: String,
    client: JsonClient,
}

impl RemoteToolBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_client(base_url, JsonClient::default())
    }

    pub fn with_client(base_url: impl Into<String>, client: JsonClient) -> Self {
        Self {
            base_url: base_url.into(),
            client,
        }
    }
}

impl ToolBackend for RemoteToolBackend {
    fn invoke(&self, call: &ToolCall, ctx: &ToolContext<'_>) -> Result<ToolResult> {
        let url = join_url(&self.base_url, &format!("tools/{}", call.tool));
        let reply = self.client.post(
            &url,
            &ToolRequest {
                arguments: &call.arguments,
                frames: ctx.frames,
            },
        )?;
        let mut result: ToolResult = serde_json::from_value(reply)
            .map_err(|e| Error::Remote(format!("{url}: malformed tool result: {e}")))?;
        result.provenance = Provenance::Remote;
        Ok(result)
    }
}

#[derive(Debug, Clone)]
pub struct EmbedClient {
    base_url: String,
    client: JsonClient,
}

impl EmbedClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_client(base_url, JsonClient::default())
    }

    pub fn with_client(base_url: impl Into<String>, client: JsonClient) -> Self {
        Self {
            base_url: base_url.into(),
            client,
        }
    }

    /// Unit-normalized embedding of `text`.
    pub fn embed(&self, text: &str) -> Result<Embedding> {
        let url = join_url(&self.base_url, "embed");
        let reply = self.client.post(&url, &serde_json::json!({ "text": text }))?;
        let raw: Vec<f64> = reply
            .get("embedding")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| Error::Remote(format!("{url}: reply has no numeric `embedding`")))?;
        Embedding::normalize(&raw)
    }
}

/// Frame selection with a remote text encoder and the local selector.
#[derive(Debug, Clone)]
pub struct EmbeddingSelectionBackend {
    embedder: EmbedClient,
}

impl EmbeddingSelectionBackend {
    pub fn new(embedder: EmbedClient) -> Self {
        Self { embedder }
    }
}

impl ToolBackend for EmbeddingSelectionBackend {
    fn invoke(&self, call: &ToolCall, ctx: &ToolContext<'_>) -> Result<ToolResult> {
        let query = call.require_text("query")?;
        let mut cfg = ctx.selection;
        if let Some(k) = call.int_arg("k") {
            cfg.k = k as usize;
        }
        let frames = select_from_manifest(&self.embedder.embed(query)?, ctx, &cfg)?;
        Ok(ToolResult::frames(frames, Provenance::Local))
    }
}

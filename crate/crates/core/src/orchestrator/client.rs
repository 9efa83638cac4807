//! Chat-model clients: the request shape, a scripted fixture client and the
//! HTTP client.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::http::{join_url, JsonClient};

use super::parse::estimate_text_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentItem {
    Text { text: String },
    /// A visual input: a frame URI or a tool-produced image reference.
    Image {
        uri: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        frame: Option<usize>,
        tokens: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Vec<ContentItem>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            content: vec![ContentItem::Text { text: text.into() }],
        }
    }
}

/// Whether an episode is the plain-text stage or may call tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeMode {
    #[default]
    TextCot,
    Tools,
}

/// Routing hints for clients; not sent over the wire.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RequestMeta {
    pub episode_id: String,
    pub question: String,
    pub mode: EpisodeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub decoding: Map<String, Value>,
    #[serde(skip)]
    pub meta: RequestMeta,
}

impl ChatRequest {
    /// `(text tokens, visual tokens)` over every message.
    pub fn token_counts(&self) -> (u64, u64) {
        let mut text = 0;
        let mut visual = 0;
        for item in self.messages.iter().flat_map(|m| &m.content) {
            match item {
                ContentItem::Text { text: t } => text += estimate_text_tokens(t),
                ContentItem::Image { tokens, .. } => visual += tokens,
            }
        }
        (text, visual)
    }
}

pub trait ModelClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

/// Scripted responses for one question, per episode mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub text_cot: Vec<String>,
    #[serde(default)]
    pub tools: Vec<String>,
}

/// Replays fixed responses. Entries are looked up by episode id, then by
/// question text; each `(key, mode)` pair advances its own cursor.
#[derive(Debug, Default)]
pub struct ScriptedModel {
    script: BTreeMap<String, ScriptEntry>,
    cursors: Mutex<HashMap<(String, EpisodeMode), usize>>,
}

impl ScriptedModel {
    pub fn new(script: BTreeMap<String, ScriptEntry>) -> Self {
        Self {
            script,
            cursors: Mutex::default(),
        }
    }

    /// Client that answers every question in tools mode with `responses`.
    pub fn sequence(question: &str, mode: EpisodeMode, responses: &[&str]) -> Self {
        let responses: Vec<String> = responses.iter().map(|s| s.to_string()).collect();
        let entry = match mode {
            EpisodeMode::TextCot => ScriptEntry {
                text_cot: responses,
                tools: Vec::new(),
            },
            EpisodeMode::Tools => ScriptEntry {
                text_cot: Vec::new(),
                tools: responses,
            },
        };
        Self::new(BTreeMap::from([(question.to_string(), entry)]))
    }

    pub fn reset(&self) {
        self.cursors.lock().unwrap().clear();
    }
}

impl ModelClient for ScriptedModel {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let meta = &request.meta;
        let (key, entry) = [&meta.episode_id, &meta.question]
            .into_iter()
            .find_map(|k| self.script.get(k).map(|e| (k.clone(), e)))
            .ok_or_else(|| Error::Model(format!("no script for `{}`", meta.question)))?;
        let lines = match meta.mode {
            EpisodeMode::TextCot => &entry.text_cot,
            EpisodeMode::Tools => &entry.tools,
        };
        let mut cursors = self.cursors.lock().unwrap();
        let cursor = cursors.entry((key, meta.mode)).or_insert(0);
        let reply = lines
            .get(*cursor)
            .cloned()
            .ok_or_else(|| Error::Model(format!("script exhausted for `{}`", meta.question)))?;
        *cursor += 1;
        Ok(reply)
    }
}

/// `POST <base>/chat` with `{"messages": [...], "decoding": {...}}`, reply
/// `{"text": ...}`.
#[derive(Debug, Clone)]
pub struct RemoteModelClient {
    base_url: String,
    client: JsonClient,
}

impl RemoteModelClient {
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

impl ModelClient for RemoteModelClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let url = join_url(&self.base_url, "chat");
        let reply = self.client.post(&url, request)?;
        reply
            .get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Remote(format!("{url}: reply has no `text`")))
    }
}

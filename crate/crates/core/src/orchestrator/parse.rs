//! Reading model output: the fenced tool-call block, the final answer line
//! and a character-based token estimate.

use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::tooling::{ToolCall, ToolRegistry};

/// Opening fence of an action block. The block body is one JSON object
/// `{"tool": <name>, "arguments": {...}}` followed by a closing fence.
pub const TOOL_FENCE: &str = "```tool";

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCall {
    tool: String,
    #[serde(default)]
    arguments: Map<String, Value>,
}

/// Extracts the first fenced tool block.
///
/// No block means the text is a final answer (`Ok(None)`). A block that is
/// not valid JSON, names an unregistered tool, or fails the tool's argument
/// schema is a [`Error::MalformedCall`].
pub fn parse_tool_call(text: &str, registry: &ToolRegistry, round: usize) -> Result<Option<ToolCall>> {
    let Some(body) = fenced_block(text)? else {
        return Ok(None);
    };
    let raw: RawCall = serde_json::from_str(body)
        .map_err(|e| Error::MalformedCall(format!("block is not a tool call: {e}")))?;
    registry
        .validate_call(&raw.tool, raw.arguments, round)
        .map(Some)
        .map_err(|e| Error::MalformedCall(e.to_string()))
}

fn fenced_block(text: &str) -> Result<Option<&str>> {
    let Some(start) = text.find(TOOL_FENCE) else {
        return Ok(None);
    };
    let after = &text[start + TOOL_FENCE.len()..];
    let Some(newline) = after.find('\n') else {
        return Err(Error::MalformedCall("unterminated tool block".into()));
    };
    if !after[..newline].trim().is_empty() {
        return Err(Error::MalformedCall("text after the opening fence".into()));
    }
    let body = &after[newline + 1..];
    let end = body
        .find("```")
        .ok_or_else(|| Error::MalformedCall("unterminated tool block".into()))?;
    Ok(Some(body[..end].trim()))
}

/// The text after the last `Answer:` marker, or the whole trimmed text.
pub fn extract_answer(text: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?im)^\s*(?:final\s+)?answer\s*:\s*(.*)$").unwrap());
    re.captures_iter(text)
        .last()
        .map(|c| c[1].trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| text.trim().to_string())
}

/// Rough text token count, `ceil(chars / 4)`.
pub fn estimate_text_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

//! Agent-mode turns as tool-call transcripts: each tracking or safety call
//! is a `<tool_call>` block answered by a `<tool_response>` block.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::prompts::ParseError;

pub const TOOL_EMOTION_TRACKING: &str = "emotion_tracking";
pub const TOOL_SAFETY_ANALYSIS: &str = "safety_analysis";

const CALL_OPEN: &str = "<tool_call>";
const CALL_CLOSE: &str = "</tool_call>";
const RESP_OPEN: &str = "<tool_response>";
const RESP_CLOSE: &str = "</tool_response>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolEvent {
    pub call: ToolCall,
    pub response: Value,
}

impl ToolEvent {
    pub fn new(name: &str, arguments: Value, response: Value) -> Self {
        Self {
            call: ToolCall {
                name: name.to_string(),
                arguments,
            },
            response,
        }
    }
}

pub fn render_tool_events(events: &[ToolEvent], final_response: &str) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(CALL_OPEN);
        out.push('\n');
        out.push_str(&serde_json::to_string(&e.call).expect("tool call serializes"));
        out.push('\n');
        out.push_str(CALL_CLOSE);
        out.push('\n');
        out.push_str(RESP_OPEN);
        out.push('\n');
        out.push_str(&serde_json::to_string(&e.response).expect("tool response serializes"));
        out.push('\n');
        out.push_str(RESP_CLOSE);
        out.push('\n');
    }
    out.push_str(final_response);
    out
}

const AGENT: &str = "tool_transcript";

fn take_block<'a>(text: &'a str, open: &str, close: &str, whole: &str) -> Result<(&'a str, &'a str), ParseError> {
    let rest = text.trim_start();
    let rest = rest
        .strip_prefix(open)
        .ok_or_else(|| ParseError::new(AGENT, format!("expected {open}"), whole))?;
    let end = rest
        .find(close)
        .ok_or_else(|| ParseError::new(AGENT, format!("unterminated {open}"), whole))?;
    Ok((rest[..end].trim(), &rest[end + close.len()..]))
}

/// Inverse of [`render_tool_events`]: the events in order and the trailing reply.
pub fn parse_tool_transcript(text: &str) -> Result<(Vec<ToolEvent>, String), ParseError> {
    let mut events = Vec::new();
    let mut rest = text;
    while rest.trim_start().starts_with(CALL_OPEN) {
        let (call_json, after) = take_block(rest, CALL_OPEN, CALL_CLOSE, text)?;
        let (resp_json, after) = take_block(after, RESP_OPEN, RESP_CLOSE, text)?;
        let call: ToolCall =
            serde_json::from_str(call_json).map_err(|e| ParseError::new(AGENT, e.to_string(), text))?;
        let response: Value =
            serde_json::from_str(resp_json).map_err(|e| ParseError::new(AGENT, e.to_string(), text))?;
        events.push(ToolEvent { call, response });
        rest = after;
    }
    let rest = rest.strip_prefix('\n').unwrap_or(rest);
    if rest.contains(CALL_OPEN) || rest.contains(RESP_OPEN) {
        return Err(ParseError::new(AGENT, "tool block after the final response", text));
    }
    Ok((events, rest.to_string()))
}

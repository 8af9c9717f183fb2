//! Single-pass reasoning record: four first-person sections inside a
//! `<think>` block, then the reply.

use serde::{Deserialize, Serialize};

use crate::prompts::ParseError;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";

pub const SECTION_TITLES: [&str; 4] = [
    "Emotion Shift Tracking",
    "Current Counseling Plan",
    "Safety Risk Analysis",
    "Integration and Response",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotRecord {
    pub emotion_shift_tracking: String,
    pub counseling_plan: String,
    pub safety_risk_analysis: String,
    pub integration: String,
    pub response: String,
}

fn heading_title(line: &str) -> Option<&str> {
    let t = line.trim();
    if !t.starts_with('#') {
        return None;
    }
    Some(t.trim_start_matches('#').trim().trim_end_matches(':').trim())
}

/// The four reasoning sections, in order, from the inside of a think block.
fn parse_sections(agent: &str, body: &str, reply: &str) -> Result<[String; 4], ParseError> {
    let mut found: Vec<(usize, Vec<&str>)> = Vec::new();
    for line in body.lines() {
        if let Some(title) = heading_title(line) {
            if let Some(idx) = SECTION_TITLES.iter().position(|s| s.eq_ignore_ascii_case(title)) {
                found.push((idx, Vec::new()));
                continue;
            }
        }
        if let Some((_, lines)) = found.last_mut() {
            lines.push(line);
        }
    }
    let mut out: [Option<String>; 4] = Default::default();
    let mut last_idx: Option<usize> = None;
    for (idx, lines) in found {
        if out[idx].is_some() {
            return Err(ParseError::new(agent, format!("section `{}` repeated", SECTION_TITLES[idx]), reply));
        }
        if last_idx.is_some_and(|l| idx < l) {
            return Err(ParseError::new(agent, format!("section `{}` out of order", SECTION_TITLES[idx]), reply));
        }
        last_idx = Some(idx);
        out[idx] = Some(lines.join("\n").trim().to_string());
    }
    let mut sections: [String; 4] = Default::default();
    for (i, s) in out.into_iter().enumerate() {
        match s {
            None => {
                return Err(ParseError::new(agent, format!("missing section `{}`", SECTION_TITLES[i]), reply))
            }
            Some(text) if text.is_empty() => {
                return Err(ParseError::new(agent, format!("empty section `{}`", SECTION_TITLES[i]), reply))
            }
            Some(text) => sections[i] = text,
        }
    }
    Ok(sections)
}

fn split_think<'a>(agent: &str, reply: &'a str) -> Result<(&'a str, &'a str), ParseError> {
    let open = reply
        .find(THINK_OPEN)
        .ok_or_else(|| ParseError::new(agent, "missing <think> block", reply))?;
    let inner_start = open + THINK_OPEN.len();
    let close = reply[inner_start..]
        .find(THINK_CLOSE)
        .map(|c| inner_start + c)
        .ok_or_else(|| ParseError::new(agent, "unterminated <think> block", reply))?;
    Ok((&reply[inner_start..close], &reply[close + THINK_CLOSE.len()..]))
}

impl CotRecord {
    /// Reasoning plus a non-empty reply after `</think>`.
    pub fn parse(agent: &str, reply: &str) -> Result<Self, ParseError> {
        let (body, rest) = split_think(agent, reply)?;
        let [a, b, c, d] = parse_sections(agent, body, reply)?;
        let response = rest.trim();
        if response.is_empty() {
            return Err(ParseError::new(agent, "missing response after </think>", reply));
        }
        Ok(Self {
            emotion_shift_tracking: a,
            counseling_plan: b,
            safety_risk_analysis: c,
            integration: d,
            response: response.to_string(),
        })
    }

    /// Reasoning only; anything after `</think>` is ignored and `response`
    /// is supplied by the caller.
    pub fn parse_reasoning(agent: &str, reply: &str, response: &str) -> Result<Self, ParseError> {
        let (body, _) = split_think(agent, reply)?;
        let [a, b, c, d] = parse_sections(agent, body, reply)?;
        Ok(Self {
            emotion_shift_tracking: a,
            counseling_plan: b,
            safety_risk_analysis: c,
            integration: d,
            response: response.to_string(),
        })
    }

    pub fn sections(&self) -> [&str; 4] {
        [
            &self.emotion_shift_tracking,
            &self.counseling_plan,
            &self.safety_risk_analysis,
            &self.integration,
        ]
    }

    pub fn reasoning_text(&self) -> String {
        let mut out = String::from(THINK_OPEN);
        out.push('\n');
        for (title, body) in SECTION_TITLES.iter().zip(self.sections()) {
            out.push_str("### ");
            out.push_str(title);
            out.push('\n');
            out.push_str(body);
            out.push('\n');
        }
        out.push_str(THINK_CLOSE);
        out
    }

    /// Reasoning block followed by the reply; the form used in LLM-mode
    /// training samples.
    pub fn to_text(&self) -> String {
        format!("{}\n\n{}", self.reasoning_text(), self.response)
    }
}

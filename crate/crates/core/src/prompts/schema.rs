//! Structured agent replies: fenced JSON extraction, schema checks, and the
//! canonical reply rendering each parser accepts.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emotion::EmotionState;
use crate::role_card::GoalKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{agent} reply rejected: {reason}")]
pub struct ParseError {
    pub agent: String,
    pub reason: String,
    /// The raw reply, kept for diagnosis.
    pub reply: String,
}

impl ParseError {
    pub fn new(agent: &str, reason: impl Into<String>, reply: &str) -> Self {
        Self {
            agent: agent.to_string(),
            reason: reason.into(),
            reply: reply.to_string(),
        }
    }
}

/// Finds the JSON document in a reply.
///
/// Prefers a ```json fence, then any fence, then the outermost `{...}` span.
/// Returns the JSON text and the byte offset just past it.
pub fn extract_json(reply: &str) -> Option<(&str, usize)> {
    let fenced = |open: &str| -> Option<(&str, usize)> {
        let start = reply.find(open)? + open.len();
        let body_start = start + reply[start..].find('\n').unwrap_or(0);
        let end = body_start + reply[body_start..].find("```")?;
        Some((reply[body_start..end].trim(), end + 3))
    };
    if let Some(found) = fenced("```json") {
        return Some(found);
    }
    if let Some(found) = fenced("```") {
        if found.0.starts_with('{') {
            return Some(found);
        }
    }
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    (end > start).then(|| (&reply[start..=end], end + 1))
}

pub(crate) fn parse_json<T: DeserializeOwned>(agent: &str, reply: &str) -> Result<(T, usize), ParseError> {
    let (json, end) =
        extract_json(reply).ok_or_else(|| ParseError::new(agent, "no JSON object found", reply))?;
    let value = serde_json::from_str(json).map_err(|e| ParseError::new(agent, e.to_string(), reply))?;
    Ok((value, end))
}

pub(crate) fn fence(json: &str) -> String {
    format!("```json\n{json}\n```")
}

fn to_fenced<T: Serialize>(value: &T) -> String {
    fence(&serde_json::to_string(value).expect("agent outputs serialize"))
}

pub const END_TOKEN: &str = "END";

/// Strips a trailing `END` token. The token must not be glued to a
/// preceding ASCII letter or digit, so "WEEKEND" is not a terminator.
pub fn strip_end_token(text: &str) -> (String, bool) {
    let trimmed = text.trim_end();
    if let Some(head) = trimmed.strip_suffix(END_TOKEN) {
        let glued = head.chars().last().is_some_and(|c| c.is_ascii_alphanumeric());
        if !glued {
            return (head.trim_end().to_string(), true);
        }
    }
    (text.to_string(), false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeekerOutput {
    pub current_emotion: EmotionState,
    #[serde(default)]
    pub triggering_events: Vec<String>,
    #[serde(default)]
    pub completed_goals: Vec<GoalKind>,
    /// Subjective negative reaction to the previous counselor reply, in [0, 1].
    #[serde(default)]
    pub risk: f64,
    pub response: String,
    #[serde(default)]
    pub end_flag: bool,
}

#[derive(Deserialize)]
struct RawSeeker {
    current_emotion: EmotionState,
    #[serde(default)]
    triggering_events: Vec<String>,
    #[serde(default)]
    completed_goals: Vec<String>,
    #[serde(default)]
    risk: f64,
    response: String,
}

#[derive(Serialize)]
struct SeekerWire<'a> {
    current_emotion: &'a EmotionState,
    triggering_events: &'a [String],
    completed_goals: &'a [GoalKind],
    risk: f64,
    response: String,
}

pub const SEEKER: &str = "seeker";
pub const EMOTION_TRACKING: &str = "emotion_tracking";
pub const COUNSELOR: &str = "counselor";
pub const REACTION_PREDICTION: &str = "reaction_prediction";
pub const SAFETY_ANALYSIS: &str = "safety_analysis";
pub const LLM_COUNSELOR: &str = "llm_counselor";
pub const COT_COMPILER: &str = "cot_compiler";
pub const CARD_DERIVATION: &str = "card_derivation";

fn goal_ref(raw: &str) -> Option<GoalKind> {
    let lower = raw.trim().to_ascii_lowercase();
    GoalKind::ALL.into_iter().find(|k| {
        lower == k.as_str() || lower == format!("{} goal", k.as_str()) || lower.starts_with(&format!("{}:", k.as_str()))
    })
}

impl SeekerOutput {
    /// `END` may close either the response field or the reply text after
    /// the JSON block.
    pub fn parse(reply: &str) -> Result<Self, ParseError> {
        let (raw, end): (RawSeeker, usize) = parse_json(SEEKER, reply)?;
        if !(0.0..=1.0).contains(&raw.risk) {
            return Err(ParseError::new(SEEKER, format!("risk {} outside [0, 1]", raw.risk), reply));
        }
        let mut completed_goals = Vec::new();
        for g in &raw.completed_goals {
            let kind = goal_ref(g)
                .ok_or_else(|| ParseError::new(SEEKER, format!("unknown goal reference `{g}`"), reply))?;
            if !completed_goals.contains(&kind) {
                completed_goals.push(kind);
            }
        }
        let (response, in_field) = strip_end_token(&raw.response);
        let after = reply[end..].trim();
        let trailing = after == END_TOKEN;
        Ok(Self {
            current_emotion: raw.current_emotion,
            triggering_events: raw.triggering_events,
            completed_goals,
            risk: raw.risk,
            response,
            end_flag: in_field || trailing,
        })
    }

    pub fn to_reply(&self) -> String {
        let response = if self.end_flag {
            format!("{} {END_TOKEN}", self.response)
        } else {
            self.response.clone()
        };
        to_fenced(&SeekerWire {
            current_emotion: &self.current_emotion,
            triggering_events: &self.triggering_events,
            completed_goals: &self.completed_goals,
            risk: self.risk,
            response,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionAnalysis {
    pub state: EmotionState,
    #[serde(default)]
    pub recent_shifts: String,
    #[serde(default)]
    pub overall_trend: String,
    #[serde(default)]
    pub causes: String,
}

impl EmotionAnalysis {
    pub fn parse(reply: &str) -> Result<Self, ParseError> {
        parse_json(EMOTION_TRACKING, reply).map(|(v, _)| v)
    }

    pub fn to_reply(&self) -> String {
        to_fenced(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Exploration,
    Comforting,
    Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounselorDraft {
    pub stage: Stage,
    pub strategies: Vec<String>,
    pub draft: String,
}

impl CounselorDraft {
    pub fn parse(reply: &str) -> Result<Self, ParseError> {
        let (d, _): (CounselorDraft, usize) = parse_json(COUNSELOR, reply)?;
        if d.strategies.is_empty() || d.strategies.iter().any(|s| s.trim().is_empty()) {
            return Err(ParseError::new(COUNSELOR, "strategies must be a non-empty list of labels", reply));
        }
        if d.draft.trim().is_empty() {
            return Err(ParseError::new(COUNSELOR, "empty draft", reply));
        }
        Ok(d)
    }

    pub fn to_reply(&self) -> String {
        to_fenced(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Normal,
    Silence,
    ExcessiveSentimentality,
    ExplosiveAnger,
}

impl Behavior {
    pub const ALL: [Behavior; 4] = [
        Behavior::Normal,
        Behavior::Silence,
        Behavior::ExcessiveSentimentality,
        Behavior::ExplosiveAnger,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::Normal => "normal",
            Behavior::Silence => "silence",
            Behavior::ExcessiveSentimentality => "excessive_sentimentality",
            Behavior::ExplosiveAnger => "explosive_anger",
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedReaction {
    pub behavior: Behavior,
    pub reaction_text: String,
}

#[derive(Serialize, Deserialize)]
struct ReactionsDoc {
    reactions: Vec<PredictedReaction>,
}

/// Returns one reaction per requested behavior, in request order.
pub fn parse_reactions(reply: &str, requested: &[Behavior]) -> Result<Vec<PredictedReaction>, ParseError> {
    let (doc, _): (ReactionsDoc, usize) = parse_json(REACTION_PREDICTION, reply)?;
    requested
        .iter()
        .map(|b| {
            doc.reactions
                .iter()
                .find(|r| r.behavior == *b)
                .cloned()
                .ok_or_else(|| ParseError::new(REACTION_PREDICTION, format!("missing reaction for behavior `{b}`"), reply))
        })
        .collect()
}

pub fn reactions_to_reply(reactions: &[PredictedReaction]) -> String {
    to_fenced(&ReactionsDoc {
        reactions: reactions.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub safe: bool,
    #[serde(default)]
    pub risky_reactions: Vec<usize>,
    #[serde(default)]
    pub suggestions: String,
}

impl SafetyVerdict {
    pub fn safe() -> Self {
        Self {
            safe: true,
            risky_reactions: Vec::new(),
            suggestions: String::new(),
        }
    }

    pub fn unsafe_with(suggestions: impl Into<String>) -> Self {
        Self {
            safe: false,
            risky_reactions: Vec::new(),
            suggestions: suggestions.into(),
        }
    }

    /// `n_reactions` bounds the risky-reaction indices.
    pub fn parse(reply: &str, n_reactions: usize) -> Result<Self, ParseError> {
        let (v, _): (SafetyVerdict, usize) = parse_json(SAFETY_ANALYSIS, reply)?;
        let has_suggestions = !v.suggestions.trim().is_empty();
        if !v.safe && !has_suggestions {
            return Err(ParseError::new(SAFETY_ANALYSIS, "unsafe verdict without suggestions", reply));
        }
        if v.safe && has_suggestions {
            return Err(ParseError::new(SAFETY_ANALYSIS, "safe verdict must not carry suggestions", reply));
        }
        if let Some(bad) = v.risky_reactions.iter().find(|i| **i >= n_reactions) {
            return Err(ParseError::new(
                SAFETY_ANALYSIS,
                format!("risky reaction index {bad} out of range (have {n_reactions})"),
                reply,
            ));
        }
        Ok(v)
    }

    pub fn to_reply(&self) -> String {
        to_fenced(self)
    }
}

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Seeker,
    Counselor,
}

impl Speaker {
    pub fn label(self) -> &'static str {
        match self {
            Speaker::Seeker => "Seeker",
            Speaker::Counselor => "Counselor",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn seeker(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Seeker,
            text: text.into(),
        }
    }

    pub fn counselor(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Counselor,
            text: text.into(),
        }
    }
}

/// `Speaker: text` lines; an empty history renders as a placeholder line.
pub fn render_history(history: &[Utterance]) -> String {
    if history.is_empty() {
        return "(the conversation has not started yet)".to_string();
    }
    history
        .iter()
        .map(|u| format!("{}: {}", u.speaker, u.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn last_seeker(history: &[Utterance]) -> Option<&Utterance> {
    history.iter().rev().find(|u| u.speaker == Speaker::Seeker)
}

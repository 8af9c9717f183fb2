use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendProvider, ChatBackend, ChatRequest, ChatResponse};

/// Selects which requests a rule answers. Empty matchers match everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matcher {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    /// Substrings that must all occur somewhere in the request messages.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
}

impl Matcher {
    pub fn agent(name: impl Into<String>) -> Self {
        Self {
            agent: Some(name.into()),
            contains: Vec::new(),
        }
    }

    pub fn and_contains(mut self, needle: impl Into<String>) -> Self {
        self.contains.push(needle.into());
        self
    }

    fn matches(&self, request: &ChatRequest) -> bool {
        if let Some(agent) = &self.agent {
            if request.agent.as_deref() != Some(agent.as_str()) {
                return false;
            }
        }
        if self.contains.is_empty() {
            return true;
        }
        let text = request.text();
        self.contains.iter().all(|needle| text.contains(needle.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum ScriptedReply {
    Text(String),
    Full(ChatResponse),
}

impl From<ScriptedReply> for ChatResponse {
    fn from(reply: ScriptedReply) -> Self {
        match reply {
            ScriptedReply::Text(text) => ChatResponse::stop(text),
            ScriptedReply::Full(resp) => resp,
        }
    }
}

impl From<ChatResponse> for ScriptedReply {
    fn from(resp: ChatResponse) -> Self {
        ScriptedReply::Full(resp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(flatten)]
    pub matcher: Matcher,
    #[serde(with = "replies")]
    pub responses: VecDeque<ChatResponse>,
    /// Keep answering with the final response instead of running dry.
    #[serde(default)]
    pub repeat_last: bool,
}

mod replies {
    use super::*;

    pub fn serialize<S: serde::Serializer>(
        v: &VecDeque<ChatResponse>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        v.serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(
        d: D,
    ) -> Result<VecDeque<ChatResponse>, D::Error> {
        let raw: Vec<ScriptedReply> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(ChatResponse::from).collect())
    }
}

impl ScriptRule {
    pub fn new<I, S>(matcher: Matcher, replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            matcher,
            responses: replies.into_iter().map(|r| ChatResponse::stop(r)).collect(),
            repeat_last: false,
        }
    }

    pub fn repeating(mut self) -> Self {
        self.repeat_last = true;
        self
    }
}

/// Ordered rules; the first matching rule with a reply left answers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub rules: Vec<ScriptRule>,
}

impl Script {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules }
    }

    pub fn rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    rules: Mutex<Vec<ScriptRule>>,
    requests: Mutex<Vec<ChatRequest>>,
    delay: Option<Duration>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self {
            rules: Mutex::new(script.rules),
            requests: Mutex::new(Vec::new()),
            delay: None,
        }
    }

    /// A single unconditional queue.
    pub fn from_replies<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(Script::new(vec![ScriptRule::new(Matcher::default(), replies)]))
    }

    /// Sleep before each reply, to stand in for network latency.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        if let Some(delay) = self.delay {
            std::thread::sleep(delay);
        }
        self.requests
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(request.clone());
        let mut rules = self.rules.lock().unwrap_or_else(|e| e.into_inner());
        for rule in rules.iter_mut() {
            if !rule.matcher.matches(request) || rule.responses.is_empty() {
                continue;
            }
            let reply = if rule.repeat_last && rule.responses.len() == 1 {
                rule.responses[0].clone()
            } else {
                rule.responses.pop_front().expect("non-empty")
            };
            return Ok(reply);
        }
        Err(BackendError::ScriptExhausted {
            agent: request.agent.clone(),
        })
    }

    fn model(&self) -> &str {
        "scripted"
    }
}

/// Gives each session a fresh replay of the same script.
#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    script: Script,
    delay: Option<Duration>,
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            delay: None,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }
}

impl BackendProvider for ScriptedProvider {
    fn for_session(&self, _session_id: &str) -> Arc<dyn ChatBackend> {
        let mut backend = ScriptedBackend::new(self.script.clone());
        backend.delay = self.delay;
        Arc::new(backend)
    }
}

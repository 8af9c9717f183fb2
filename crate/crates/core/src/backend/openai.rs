use std::time::Duration;

use serde::Deserialize;
use tracing::{debug, warn};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, FinishReason, Usage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): base * 2^retry, capped.
    pub fn delay_for(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl OpenAiConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }
}

/// Blocking client for any OpenAI-compatible `/chat/completions` endpoint.
pub struct OpenAiCompatible {
    http: reqwest::blocking::Client,
    config: OpenAiConfig,
    endpoint: String,
}

impl std::fmt::Debug for OpenAiCompatible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiCompatible")
            .field("endpoint", &self.endpoint)
            .field("model", &self.config.model)
            .field("has_api_key", &self.config.api_key.is_some())
            .finish()
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    #[serde(default)]
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(ChatResponse),
    Retry(BackendError),
    Fatal(BackendError),
}

impl OpenAiCompatible {
    pub fn new(config: OpenAiConfig) -> Result<Self, BackendError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        let endpoint = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        Ok(Self {
            http,
            config,
            endpoint,
        })
    }

    fn attempt(&self, body: &super::WireRequest, attempts: u32) -> Attempt {
        let mut req = self.http.post(&self.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(resp) => resp,
            Err(e) => {
                return Attempt::Retry(BackendError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => match resp.text() {
                Ok(text) => match decode(&text) {
                    Ok(r) => Attempt::Done(r),
                    Err(e) => Attempt::Fatal(e),
                },
                Err(e) => Attempt::Retry(BackendError::Transport {
                    attempts,
                    message: e.to_string(),
                }),
            },
            401 | 403 => Attempt::Fatal(BackendError::Auth { status }),
            429 => Attempt::Retry(BackendError::RateLimited { attempts }),
            _ => {
                let body = resp.text().unwrap_or_default();
                let err = BackendError::Http {
                    status,
                    attempts,
                    body: truncate(&body, 512),
                };
                if status >= 500 {
                    Attempt::Retry(err)
                } else {
                    Attempt::Fatal(err)
                }
            }
        }
    }
}

fn truncate(text: &str, max_chars: usize) -> String {
    text.chars().take(max_chars).collect()
}

fn decode(text: &str) -> Result<ChatResponse, BackendError> {
    let body: CompletionBody =
        serde_json::from_str(text).map_err(|e| BackendError::Decode(e.to_string()))?;
    let choice = body
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Decode("no choices in completion".into()))?;
    let finish_reason = match choice.finish_reason.as_deref() {
        None | Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    let content = choice.message.content.unwrap_or_default();
    let usage = body
        .usage
        .map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        })
        .unwrap_or_default();
    Ok(ChatResponse {
        content,
        finish_reason,
        usage,
    })
}

impl ChatBackend for OpenAiCompatible {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let mut body = request.to_wire();
        if body.model.is_empty() {
            body.model = self.config.model.clone();
        }
        let policy = self.config.retry;
        let mut attempts = 0;
        loop {
            attempts += 1;
            debug!(endpoint = %self.endpoint, attempt = attempts, agent = ?request.agent, "chat completion");
            match self.attempt(&body, attempts) {
                Attempt::Done(resp) => return Ok(resp),
                Attempt::Fatal(err) => return Err(err),
                Attempt::Retry(err) => {
                    let retry = attempts - 1;
                    if retry >= policy.max_retries {
                        return Err(err);
                    }
                    let delay = policy.delay_for(retry);
                    warn!(error = %err, ?delay, "retrying chat completion");
                    std::thread::sleep(delay);
                }
            }
        }
    }

    fn model(&self) -> &str {
        &self.config.model
    }
}

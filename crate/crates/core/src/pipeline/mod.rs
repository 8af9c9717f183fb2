//! One counselor response, produced either by the staged multi-agent
//! pipeline (agent mode) or by a single reasoning call (LLM mode).
//!
//! Agent mode runs, in order: emotion tracking (when EM is on), a counselor
//! draft, then, when RC is on, reaction prediction and a safety verdict for
//! each draft. An unsafe verdict sends its suggestions back to the counselor
//! for a redraft, at most `max_regenerations` times.

mod cot;
mod tools;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tracing::{debug, warn};

use crate::backend::ChatBackend;
use crate::memory::{Clock, EmotionMemory, DEFAULT_WINDOW};
use crate::prompts::{
    render_analysis, render_reactions, AgentError, Agents, Behavior, CounselorDraft, EmotionAnalysis,
    PredictedReaction, SafetyVerdict, COT_COMPILER, LLM_COUNSELOR,
};
use crate::transcript::{last_seeker, render_history, Utterance};

pub use cot::{CotRecord, SECTION_TITLES, THINK_CLOSE, THINK_OPEN};
pub use tools::{
    parse_tool_transcript, render_tool_events, ToolCall, ToolEvent, TOOL_EMOTION_TRACKING, TOOL_SAFETY_ANALYSIS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Agent,
    Llm,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Agent => "agent",
            Mode::Llm => "llm",
        })
    }
}

/// What to send when every draft of a turn was judged unsafe.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "text")]
pub enum UnresolvedPolicy {
    #[default]
    KeepLastDraft,
    Fallback(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub em_enabled: bool,
    pub rc_enabled: bool,
    pub max_regenerations: u32,
    pub reaction_behaviors: Vec<Behavior>,
    pub memory_window: usize,
    pub unresolved_policy: UnresolvedPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Agent,
            em_enabled: true,
            rc_enabled: true,
            max_regenerations: 3,
            reaction_behaviors: Behavior::ALL.to_vec(),
            memory_window: DEFAULT_WINDOW,
            unresolved_policy: UnresolvedPolicy::KeepLastDraft,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_regenerations < 1 {
            return Err("max_regenerations must be at least 1".into());
        }
        if self.rc_enabled && self.reaction_behaviors.is_empty() {
            return Err("reaction_behaviors is empty while risk control is on".into());
        }
        if self.memory_window < 1 {
            return Err("memory_window must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub turn_index: u32,
    pub analysis: Option<EmotionAnalysis>,
    pub drafts: Vec<CounselorDraft>,
    pub reactions_per_draft: Vec<Vec<PredictedReaction>>,
    pub verdicts: Vec<SafetyVerdict>,
    pub final_response: String,
    pub regeneration_count: u32,
    pub tool_events: Vec<ToolEvent>,
    #[serde(default)]
    pub risk_unresolved: bool,
}

impl TurnTrace {
    /// The turn as the counselor model emits it in agent mode.
    pub fn render_tool_transcript(&self) -> String {
        render_tool_events(&self.tool_events, &self.final_response)
    }
}

#[derive(Debug, Error)]
#[error("turn {turn_index} failed: {source}")]
pub struct PipelineError {
    pub turn_index: u32,
    #[source]
    pub source: AgentError,
    /// Whatever the turn produced before failing (agent mode only).
    pub partial: Option<Box<TurnTrace>>,
}

/// A counselor reply plus whichever record its mode produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounselorTurn {
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TurnTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot: Option<CotRecord>,
}

/// The counselor side of a session: agents, configuration and clock.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub agents: Agents,
    pub config: PipelineConfig,
    pub clock: Clock,
}

impl Pipeline {
    pub fn new(agents: Agents, config: PipelineConfig) -> Self {
        Self {
            agents,
            config,
            clock: Clock::System,
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Dispatches on the configured mode.
    pub fn respond(
        &self,
        history: &[Utterance],
        memory: &mut EmotionMemory,
        turn_index: u32,
        backend: &dyn ChatBackend,
    ) -> Result<CounselorTurn, PipelineError> {
        match self.config.mode {
            Mode::Agent => {
                let trace = self.agent_mode_turn(history, memory, turn_index, backend)?;
                Ok(CounselorTurn {
                    response: trace.final_response.clone(),
                    trace: Some(trace),
                    cot: None,
                })
            }
            Mode::Llm => {
                let cot = self.llm_mode_turn(history, turn_index, backend)?;
                Ok(CounselorTurn {
                    response: cot.response.clone(),
                    trace: None,
                    cot: Some(cot),
                })
            }
        }
    }

    pub fn agent_mode_turn(
        &self,
        history: &[Utterance],
        memory: &mut EmotionMemory,
        turn_index: u32,
        backend: &dyn ChatBackend,
    ) -> Result<TurnTrace, PipelineError> {
        let mut trace = TurnTrace {
            turn_index,
            ..TurnTrace::default()
        };
        match self.run_stages(history, memory, backend, &mut trace) {
            Ok(()) => Ok(trace),
            Err(source) => {
                trace.final_response = trace.drafts.last().map(|d| d.draft.clone()).unwrap_or_default();
                Err(PipelineError {
                    turn_index,
                    source,
                    partial: Some(Box::new(trace)),
                })
            }
        }
    }

    fn run_stages(
        &self,
        history: &[Utterance],
        memory: &mut EmotionMemory,
        backend: &dyn ChatBackend,
        trace: &mut TurnTrace,
    ) -> Result<(), AgentError> {
        let cfg = &self.config;
        if cfg.mode != Mode::Agent {
            return Err(AgentError::Precondition("agent_mode_turn requires mode = agent".into()));
        }
        cfg.validate().map_err(AgentError::Precondition)?;
        let agents = &self.agents;

        if cfg.em_enabled {
            let analysis = agents.run_emotion_tracking(history, memory, cfg.memory_window, backend)?;
            let latest = last_seeker(history).map(|u| u.text.clone()).unwrap_or_default();
            trace.tool_events.push(ToolEvent::new(
                TOOL_EMOTION_TRACKING,
                json!({ "seeker_message": latest }),
                serde_json::to_value(&analysis).expect("analysis serializes"),
            ));
            memory
                .append(trace.turn_index, analysis.clone(), self.clock.now_ms())
                .map_err(|e| AgentError::Precondition(e.to_string()))?;
            trace.analysis = Some(analysis);
        }

        let mut draft = agents.run_counselor(history, trace.analysis.as_ref(), None, backend)?;
        trace.drafts.push(draft.clone());

        if cfg.rc_enabled {
            loop {
                let reactions =
                    agents.run_reaction_prediction(history, &draft.draft, &cfg.reaction_behaviors, backend)?;
                trace.reactions_per_draft.push(reactions.clone());
                let verdict = agents.run_safety_analysis(history, &draft.draft, &reactions, backend)?;
                trace.tool_events.push(ToolEvent::new(
                    TOOL_SAFETY_ANALYSIS,
                    json!({ "draft": draft.draft, "reactions": reactions }),
                    serde_json::to_value(&verdict).expect("verdict serializes"),
                ));
                trace.verdicts.push(verdict.clone());
                if verdict.safe {
                    break;
                }
                if trace.regeneration_count >= cfg.max_regenerations {
                    trace.risk_unresolved = true;
                    warn!(turn = trace.turn_index, drafts = trace.drafts.len(), "risk unresolved after regeneration cap");
                    break;
                }
                debug!(turn = trace.turn_index, "unsafe draft, regenerating");
                draft = agents.run_counselor(history, trace.analysis.as_ref(), Some(&verdict.suggestions), backend)?;
                trace.drafts.push(draft.clone());
                trace.regeneration_count += 1;
            }
        }

        trace.final_response = match (&cfg.unresolved_policy, trace.risk_unresolved) {
            (UnresolvedPolicy::Fallback(text), true) => text.clone(),
            _ => draft.draft,
        };
        Ok(())
    }

    /// One backend call returning the four reasoning sections and the reply.
    pub fn llm_mode_turn(
        &self,
        history: &[Utterance],
        turn_index: u32,
        backend: &dyn ChatBackend,
    ) -> Result<CotRecord, PipelineError> {
        let fail = |source: AgentError| PipelineError {
            turn_index,
            source,
            partial: None,
        };
        if self.config.mode != Mode::Llm {
            return Err(fail(AgentError::Precondition("llm_mode_turn requires mode = llm".into())));
        }
        let messages = self.agents.llm_counselor_messages(history).map_err(|e| fail(e.into()))?;
        let reply = self
            .agents
            .complete_raw(backend, LLM_COUNSELOR, messages)
            .map_err(fail)?;
        CotRecord::parse(LLM_COUNSELOR, &reply).map_err(|e| fail(e.into()))
    }

    /// Rewrites a finished agent-mode trace into a single reasoning record
    /// whose reply is the trace's final response.
    pub fn compile_cot(
        &self,
        history: &[Utterance],
        trace: &TurnTrace,
        backend: &dyn ChatBackend,
    ) -> Result<CotRecord, AgentError> {
        if trace.drafts.is_empty() {
            return Err(AgentError::Precondition("trace has no drafts".into()));
        }
        let bindings = BTreeMap::from([
            ("history", render_history(history)),
            ("trace", describe_trace(trace)),
            ("response", trace.final_response.clone()),
        ]);
        let messages = self.agents.render(COT_COMPILER, &bindings)?;
        let reply = self.agents.complete_raw(backend, COT_COMPILER, messages)?;
        Ok(CotRecord::parse_reasoning(COT_COMPILER, &reply, &trace.final_response)?)
    }
}

/// Plain-text account of a trace for the CoT compiler prompt.
pub fn describe_trace(trace: &TurnTrace) -> String {
    let mut out = Vec::new();
    match &trace.analysis {
        Some(a) => out.push(format!("Emotion tracking:\n{}", render_analysis(a))),
        None => out.push("Emotion tracking: (not run)".to_string()),
    }
    for (i, d) in trace.drafts.iter().enumerate() {
        out.push(format!(
            "Draft {} (stage: {}; strategies: {}):\n{}",
            i + 1,
            serde_json::to_value(d.stage).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            d.strategies.join(", "),
            d.draft
        ));
        if let Some(r) = trace.reactions_per_draft.get(i) {
            out.push(format!("Predicted reactions to draft {}:\n{}", i + 1, render_reactions(r)));
        }
        if let Some(v) = trace.verdicts.get(i) {
            let verdict = if v.safe {
                "safe".to_string()
            } else {
                format!("unsafe; suggestions: {}", v.suggestions)
            };
            out.push(format!("Safety verdict for draft {}: {verdict}", i + 1));
        }
    }
    out.join("\n\n")
}

//! Role-play sessions between the seeker simulator and the counselor
//! pipeline, the screening filter, corpus statistics and training exports.

mod export;
mod io;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, info_span, warn};

use crate::backend::{BackendProvider, ChatBackend};
use crate::emotion::{score, EmotionState, ValenceTable};
use crate::memory::EmotionMemory;
use crate::par;
use crate::pipeline::{CotRecord, Mode, Pipeline, TurnTrace};
use crate::prompts::SeekerOutput;
use crate::role_card::{validate_card, GoalKind, RoleCard, ValidationReport};
use crate::transcript::{Speaker, Utterance};

pub use export::{
    export_agent_mode, export_llm_mode, read_samples_jsonl, write_samples_jsonl, AgentModeExport, LlmModeExport,
    SkippedTurn, TrainingSample,
};
pub use io::{
    read_session, read_sessions_dir, write_quarantined, write_session, QuarantineNote, QUARANTINE_REASONS_FILE,
};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("card `{id}` is invalid: {report}")]
    InvalidCard { id: String, report: ValidationReport },
    #[error("max_turns must be at least 1")]
    NoTurns,
    #[error("no sessions to summarize")]
    EmptyCorpus,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    EndToken,
    MaxTurns,
    Cancelled,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTurn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeker_annotation: Option<SeekerOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_trace: Option<TurnTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot: Option<CotRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub card: RoleCard,
    pub mode: Mode,
    pub turns: Vec<SessionTurn>,
    pub terminated_by: TerminatedBy,
    pub goal_ledger: BTreeMap<GoalKind, bool>,
    pub memory: EmotionMemory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Whatever the failing counselor turn produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_trace: Option<TurnTrace>,
}

impl DialogueSession {
    pub fn card_id(&self) -> &str {
        &self.card.id
    }

    pub fn topic(&self) -> &str {
        &self.card.topic
    }

    /// Seeker utterances; each opens one exchange.
    pub fn turn_count(&self) -> usize {
        self.turns.iter().filter(|t| t.speaker == Speaker::Seeker).count()
    }

    pub fn history(&self) -> Vec<Utterance> {
        self.turns
            .iter()
            .map(|t| Utterance {
                speaker: t.speaker,
                text: t.text.clone(),
            })
            .collect()
    }

    pub fn final_seeker_annotation(&self) -> Option<&SeekerOutput> {
        self.turns.iter().rev().find_map(|t| t.seeker_annotation.as_ref())
    }

    pub fn goals_completed(&self) -> usize {
        self.goal_ledger.values().filter(|v| **v).count()
    }

    /// Alternation starting with the seeker; every seeker turn annotated.
    pub fn check_shape(&self) -> Result<(), String> {
        for (i, t) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Speaker::Seeker } else { Speaker::Counselor };
            if t.speaker != expected {
                return Err(format!("turn {i} is spoken by the {:?}", t.speaker));
            }
            if t.speaker == Speaker::Seeker && t.seeker_annotation.is_none() {
                return Err(format!("seeker turn {i} has no annotation"));
            }
        }
        Ok(())
    }
}

/// How far a session runs. Synthesis closes with a counselor reply when the
/// turn limit is hit; evaluation closes with the seeker's annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionLimits {
    pub max_seeker_turns: u32,
    pub counselor_after_last: bool,
}

impl SessionLimits {
    pub fn synthesis(max_turns: u32) -> Self {
        Self {
            max_seeker_turns: max_turns,
            counselor_after_last: true,
        }
    }
}

pub fn run_session(
    card: &RoleCard,
    pipeline: &Pipeline,
    seeker: &dyn ChatBackend,
    counselor: &dyn ChatBackend,
    max_turns: u32,
) -> Result<DialogueSession, SynthesisError> {
    drive_session(card, pipeline, seeker, counselor, SessionLimits::synthesis(max_turns), None)
}

/// Alternates seeker and counselor turns until END, the turn limit, a
/// failure, or cancellation. Failures end the session but keep what was
/// produced so far.
pub fn drive_session(
    card: &RoleCard,
    pipeline: &Pipeline,
    seeker: &dyn ChatBackend,
    counselor: &dyn ChatBackend,
    limits: SessionLimits,
    cancel: Option<&AtomicBool>,
) -> Result<DialogueSession, SynthesisError> {
    let report = validate_card(card);
    if !report.is_valid() {
        return Err(SynthesisError::InvalidCard {
            id: card.id.clone(),
            report,
        });
    }
    if limits.max_seeker_turns == 0 {
        return Err(SynthesisError::NoTurns);
    }
    let cancelled = || cancel.is_some_and(|c| c.load(Ordering::Relaxed));

    let mut session = DialogueSession {
        card: card.clone(),
        mode: pipeline.config.mode,
        turns: Vec::new(),
        terminated_by: TerminatedBy::MaxTurns,
        goal_ledger: card.goals.iter().map(|g| (g.kind, g.completed)).collect(),
        memory: EmotionMemory::new(card.id.clone()),
        error: None,
        failed_trace: None,
    };
    let mut history: Vec<Utterance> = Vec::new();

    for t in 1..=limits.max_seeker_turns {
        if cancelled() {
            session.terminated_by = TerminatedBy::Cancelled;
            break;
        }
        let out = match pipeline.agents.run_seeker(card, &history, seeker) {
            Ok(out) => out,
            Err(e) => {
                warn!(turn = t, error = %e, "seeker turn failed");
                session.terminated_by = TerminatedBy::Error;
                session.error = Some(format!("seeker turn {t}: {e}"));
                break;
            }
        };
        for kind in &out.completed_goals {
            match session.goal_ledger.get_mut(kind) {
                Some(done) => *done = true,
                None => warn!(turn = t, goal = %kind, "seeker completed a goal the card does not have"),
            }
        }
        let end = out.end_flag;
        history.push(Utterance::seeker(out.response.clone()));
        session.turns.push(SessionTurn {
            speaker: Speaker::Seeker,
            text: out.response.clone(),
            seeker_annotation: Some(out),
            turn_trace: None,
            cot: None,
        });
        if end {
            session.terminated_by = TerminatedBy::EndToken;
            break;
        }
        if t == limits.max_seeker_turns && !limits.counselor_after_last {
            break;
        }
        if cancelled() {
            session.terminated_by = TerminatedBy::Cancelled;
            break;
        }
        match pipeline.respond(&history, &mut session.memory, t, counselor) {
            Ok(reply) => {
                history.push(Utterance::counselor(reply.response.clone()));
                session.turns.push(SessionTurn {
                    speaker: Speaker::Counselor,
                    text: reply.response,
                    seeker_annotation: None,
                    turn_trace: reply.trace,
                    cot: reply.cot,
                });
            }
            Err(e) => {
                warn!(turn = t, error = %e, "counselor turn failed");
                session.terminated_by = TerminatedBy::Error;
                session.error = Some(e.to_string());
                session.failed_trace = e.partial.map(|b| *b);
                break;
            }
        }
    }
    info!(
        turns = session.turn_count(),
        terminated_by = ?session.terminated_by,
        "session finished"
    );
    Ok(session)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Ended by an error or cancellation, or without any seeker turn.
    Incomplete,
    NegativeFinalEmotion,
    NoGoalAchieved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "reason")]
pub enum ScreenDecision {
    Accept,
    Reject(RejectReason),
}

impl ScreenDecision {
    pub fn is_accept(self) -> bool {
        self == ScreenDecision::Accept
    }
}

pub fn has_negative_component(state: &EmotionState, table: &ValenceTable) -> bool {
    state.terms().any(|t| score(t, table) < 0)
}

/// Accepts when the final seeker emotion has no negative component and at
/// least one goal was achieved; otherwise names the first failed check.
pub fn screen(session: &DialogueSession, table: &ValenceTable) -> ScreenDecision {
    if matches!(session.terminated_by, TerminatedBy::Error | TerminatedBy::Cancelled) {
        return ScreenDecision::Reject(RejectReason::Incomplete);
    }
    let Some(last) = session.final_seeker_annotation() else {
        return ScreenDecision::Reject(RejectReason::Incomplete);
    };
    if has_negative_component(&last.current_emotion, table) {
        return ScreenDecision::Reject(RejectReason::NegativeFinalEmotion);
    }
    if session.goals_completed() == 0 {
        return ScreenDecision::Reject(RejectReason::NoGoalAchieved);
    }
    ScreenDecision::Accept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_dialogues: usize,
    pub avg_turns: f64,
    /// Characters per utterance, both speakers.
    pub avg_len: f64,
    pub topic_histogram: BTreeMap<String, usize>,
}

pub fn compute_stats(sessions: &[DialogueSession]) -> Result<CorpusStats, SynthesisError> {
    if sessions.is_empty() {
        return Err(SynthesisError::EmptyCorpus);
    }
    let mut turns = 0usize;
    let mut chars = 0usize;
    let mut utterances = 0usize;
    let mut topic_histogram = BTreeMap::new();
    for s in sessions {
        turns += s.turn_count();
        utterances += s.turns.len();
        chars += s.turns.iter().map(|t| t.text.chars().count()).sum::<usize>();
        *topic_histogram.entry(s.topic().to_string()).or_insert(0) += 1;
    }
    Ok(CorpusStats {
        n_dialogues: sessions.len(),
        avg_turns: turns as f64 / sessions.len() as f64,
        avg_len: if utterances == 0 { 0.0 } else { chars as f64 / utterances as f64 },
        topic_histogram,
    })
}

impl CorpusStats {
    pub fn summary_line(&self) -> String {
        let topics = self
            .topic_histogram
            .iter()
            .map(|(t, n)| format!("{t}={n}"))
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "dialogues={} avg_turns={:.2} avg_len={:.2} topics=[{}]",
            self.n_dialogues, self.avg_turns, self.avg_len, topics
        )
    }
}

/// One card's session and its screening decision, or why it never ran.
#[derive(Debug)]
pub struct SessionOutcome {
    pub card_id: String,
    pub result: Result<(DialogueSession, ScreenDecision), SynthesisError>,
}

/// Runs one session per card, up to `parallelism` at once, in card order.
#[allow(clippy::too_many_arguments)]
pub fn synthesize(
    cards: &[RoleCard],
    pipeline: &Pipeline,
    seeker: &dyn BackendProvider,
    counselor: &dyn BackendProvider,
    limits: SessionLimits,
    table: &ValenceTable,
    parallelism: usize,
    cancel: Option<&AtomicBool>,
) -> Vec<SessionOutcome> {
    par::map(cards, parallelism, |card| {
        let span = info_span!("session", session_id = %card.id);
        let _guard = span.enter();
        let seeker_backend = seeker.for_session(&card.id);
        let counselor_backend = counselor.for_session(&card.id);
        let result = drive_session(card, pipeline, &*seeker_backend, &*counselor_backend, limits, cancel).map(|s| {
            let decision = screen(&s, table);
            info!(decision = ?decision, "screened");
            (s, decision)
        });
        SessionOutcome {
            card_id: card.id.clone(),
            result,
        }
    })
}

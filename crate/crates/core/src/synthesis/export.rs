//! Training samples rebuilt from stored sessions: prompts are re-rendered
//! from the session's own history, replies come from the recorded outputs.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::DialogueSession;
use crate::backend::{ChatBackend, ChatMessage};
use crate::memory::EmotionMemory;
use crate::pipeline::Pipeline;
use crate::prompts::{AgentError, Agents};
use crate::transcript::{Speaker, Utterance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub messages: Vec<ChatMessage>,
}

impl TrainingSample {
    fn new(mut prompt: Vec<ChatMessage>, reply: String) -> Self {
        prompt.push(ChatMessage::assistant(reply));
        Self { messages: prompt }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentModeExport {
    pub tracking: Vec<TrainingSample>,
    pub counselor: Vec<TrainingSample>,
    pub safety: Vec<TrainingSample>,
    pub seeker: Vec<TrainingSample>,
}

impl AgentModeExport {
    pub const FILE_NAMES: [&'static str; 4] = ["tracking.jsonl", "counselor.jsonl", "safety.jsonl", "seeker.jsonl"];

    pub fn files(&self) -> [(&'static str, &[TrainingSample]); 4] {
        let [a, b, c, d] = Self::FILE_NAMES;
        [(a, &self.tracking), (b, &self.counselor), (c, &self.safety), (d, &self.seeker)]
    }
}

/// Four sample sets: emotion tracking, counselor turns as tool-call
/// transcripts, safety verdicts, and the seeker simulator.
pub fn export_agent_mode(
    agents: &Agents,
    sessions: &[DialogueSession],
    memory_window: usize,
) -> Result<AgentModeExport, AgentError> {
    let mut out = AgentModeExport::default();
    for session in sessions {
        let mut history: Vec<Utterance> = Vec::new();
        let mut memory = EmotionMemory::new(session.card_id());
        for turn in &session.turns {
            match turn.speaker {
                Speaker::Seeker => {
                    if let Some(annotation) = &turn.seeker_annotation {
                        let prompt = agents.seeker_messages(&session.card, &history)?;
                        out.seeker.push(TrainingSample::new(prompt, annotation.to_reply()));
                    }
                }
                Speaker::Counselor => {
                    if let Some(trace) = &turn.turn_trace {
                        if let Some(analysis) = &trace.analysis {
                            let prompt = agents.tracking_messages(&history, &memory, memory_window)?;
                            out.tracking.push(TrainingSample::new(prompt, analysis.to_reply()));
                            let ts = session
                                .memory
                                .entries()
                                .iter()
                                .find(|e| e.turn_index == trace.turn_index)
                                .map_or(0, |e| e.timestamp_ms);
                            memory
                                .append(trace.turn_index, analysis.clone(), ts)
                                .map_err(|e| AgentError::Precondition(e.to_string()))?;
                        }
                        let prompt = agents.counselor_messages(&history, None, None)?;
                        out.counselor.push(TrainingSample::new(prompt, trace.render_tool_transcript()));
                        for (i, verdict) in trace.verdicts.iter().enumerate() {
                            let (Some(draft), Some(reactions)) = (trace.drafts.get(i), trace.reactions_per_draft.get(i))
                            else {
                                return Err(AgentError::Precondition(format!(
                                    "session `{}` turn {}: verdict {} has no draft or reactions",
                                    session.card_id(),
                                    trace.turn_index,
                                    i + 1
                                )));
                            };
                            let prompt = agents.safety_messages(&history, &draft.draft, reactions)?;
                            out.safety.push(TrainingSample::new(prompt, verdict.to_reply()));
                        }
                    }
                }
            }
            history.push(Utterance {
                speaker: turn.speaker,
                text: turn.text.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedTurn {
    pub card_id: String,
    pub turn: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LlmModeExport {
    pub samples: Vec<TrainingSample>,
    pub skipped: Vec<SkippedTurn>,
}

impl LlmModeExport {
    pub const FILE_NAME: &'static str = "llm.jsonl";
}

/// One sample per counselor turn whose reply is the reasoning record
/// followed by the response. Recorded records are reused; agent-mode turns
/// are compiled with `backend`. Turns that cannot be compiled are skipped.
pub fn export_llm_mode(
    pipeline: &Pipeline,
    sessions: &[DialogueSession],
    backend: &dyn ChatBackend,
) -> Result<LlmModeExport, AgentError> {
    let mut out = LlmModeExport::default();
    for session in sessions {
        let mut history: Vec<Utterance> = Vec::new();
        for (idx, turn) in session.turns.iter().enumerate() {
            if turn.speaker == Speaker::Counselor {
                let skip = |reason: String| SkippedTurn {
                    card_id: session.card_id().to_string(),
                    turn: idx,
                    reason,
                };
                let record = match (&turn.cot, &turn.turn_trace) {
                    (Some(cot), _) => Ok(cot.clone()),
                    (None, Some(trace)) => pipeline.compile_cot(&history, trace, backend).map_err(|e| e.to_string()),
                    (None, None) => Err("turn has neither a trace nor a reasoning record".to_string()),
                };
                match record {
                    Ok(cot) => {
                        let prompt = pipeline.agents.llm_counselor_messages(&history)?;
                        out.samples.push(TrainingSample::new(prompt, cot.to_text()));
                    }
                    Err(reason) => {
                        warn!(session_id = %session.card_id(), turn = idx, %reason, "skipping turn");
                        out.skipped.push(skip(reason));
                    }
                }
            }
            history.push(Utterance {
                speaker: turn.speaker,
                text: turn.text.clone(),
            });
        }
    }
    Ok(out)
}

pub fn write_samples_jsonl<W: Write>(mut writer: W, samples: &[TrainingSample]) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn read_samples_jsonl<R: BufRead>(reader: R) -> Result<Vec<TrainingSample>, serde_json::Error> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

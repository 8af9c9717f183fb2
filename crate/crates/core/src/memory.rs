//! Per-session emotion memory: the tracking agent's outputs, append-only.

use std::io::{BufRead, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::EmotionAnalysis;

pub const NO_RECORDS_MARKER: &str = "No prior emotion records.";
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("turn {got} does not advance past turn {last}")]
    OutOfOrderTurn { last: u32, got: u32 },
    #[error("memory line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Source of entry timestamps (milliseconds since the Unix epoch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "at_ms")]
pub enum Clock {
    #[default]
    System,
    /// Always returns the same instant; used for reproducible output files.
    Fixed(u64),
}

impl Clock {
    pub fn now_ms(self) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            Clock::Fixed(ms) => ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub turn_index: u32,
    pub analysis: EmotionAnalysis,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionMemory {
    session_id: String,
    entries: Vec<MemoryEntry>,
}

impl EmotionMemory {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            entries: Vec::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Turn indices must strictly increase; gaps are fine.
    pub fn append(&mut self, turn_index: u32, analysis: EmotionAnalysis, timestamp_ms: u64) -> Result<(), MemoryError> {
        if let Some(last) = self.entries.last() {
            if turn_index <= last.turn_index {
                return Err(MemoryError::OutOfOrderTurn {
                    last: last.turn_index,
                    got: turn_index,
                });
            }
        }
        self.entries.push(MemoryEntry {
            turn_index,
            analysis,
            timestamp_ms,
        });
        Ok(())
    }

    /// The last `window` entries, oldest first. Timestamps are left out so
    /// the text depends only on the analyses.
    pub fn render(&self, window: usize) -> String {
        if self.entries.is_empty() {
            return NO_RECORDS_MARKER.to_string();
        }
        let start = self.entries.len().saturating_sub(window);
        self.entries[start..]
            .iter()
            .map(|e| {
                let a = &e.analysis;
                format!(
                    "[turn {}] emotion: {}; shifts: {}; trend: {}; causes: {}",
                    e.turn_index,
                    a.state.describe(),
                    a.recent_shifts,
                    a.overall_trend,
                    a.causes
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut writer, e)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Replays each line through [`append`](Self::append), so ordering is re-checked.
    pub fn read_jsonl<R: BufRead>(session_id: impl Into<String>, reader: R) -> Result<Self, MemoryError> {
        let mut memory = Self::new(session_id);
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: MemoryEntry =
                serde_json::from_str(&line).map_err(|source| MemoryError::Json { line: n + 1, source })?;
            memory.append(e.turn_index, e.analysis, e.timestamp_ms)?;
        }
        Ok(memory)
    }
}

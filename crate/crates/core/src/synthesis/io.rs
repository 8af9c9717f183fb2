//! Session files: one pretty-printed JSON document per session, named after
//! the card id. Rejected sessions go to a quarantine directory together with
//! a `reasons.jsonl` index.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DialogueSession, RejectReason, SynthesisError};

pub const QUARANTINE_REASONS_FILE: &str = "reasons.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineNote {
    pub card_id: String,
    pub reason: RejectReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthesisError + '_ {
    move |source| SynthesisError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn write_session(dir: &Path, session: &DialogueSession) -> Result<PathBuf, SynthesisError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(format!("{}.json", file_stem(session.card_id())));
    let mut text = serde_json::to_string_pretty(session).expect("session serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

/// Writes the session into `dir` and appends its note to the reasons index.
pub fn write_quarantined(dir: &Path, session: &DialogueSession, reason: RejectReason) -> Result<PathBuf, SynthesisError> {
    let path = write_session(dir, session)?;
    let index = dir.join(QUARANTINE_REASONS_FILE);
    let note = QuarantineNote {
        card_id: session.card_id().to_string(),
        reason,
        error: session.error.clone(),
    };
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&index)
        .map_err(io_err(&index))?;
    let line = serde_json::to_string(&note).expect("note serializes");
    writeln!(f, "{line}").map_err(io_err(&index))?;
    Ok(path)
}

pub fn read_session(path: &Path) -> Result<DialogueSession, SynthesisError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| SynthesisError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Every `*.json` file in `dir`, in file-name order.
pub fn read_sessions_dir(dir: &Path) -> Result<Vec<DialogueSession>, SynthesisError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_session(p)).collect()
}

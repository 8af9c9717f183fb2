use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tracing::{info, warn};

use counsel_core::eval::{run_eval, EvalConfig, EvalSession, SessionFailure, SessionMetrics};
use counsel_core::role_card::{
    derive_role_card, random_sample, read_cards_jsonl, stratified_sample, write_cards_jsonl, RoleCard, SeedDialogue,
};
use counsel_core::synthesis::{
    compute_stats, export_agent_mode, export_llm_mode, read_sessions_dir, screen, synthesize, write_quarantined,
    write_samples_jsonl, write_session, AgentModeExport, LlmModeExport, SessionLimits, QUARANTINE_REASONS_FILE,
};

use crate::config::EngineConfig;

pub const SESSIONS_DIR: &str = "sessions";
pub const QUARANTINE_DIR: &str = "quarantine";
pub const MEMORY_DIR: &str = "memory";
pub const STATS_FILE: &str = "stats.json";
pub const EVAL_DIR: &str = "eval";

/// A command that ran to completion but with failed sessions.
#[derive(Debug, thiserror::Error)]
#[error("{failed} of {total} sessions failed")]
pub struct PartialFailure {
    pub failed: usize,
    pub total: usize,
}

fn read_cards(path: &Path) -> Result<Vec<RoleCard>> {
    let file = File::open(path).with_context(|| format!("cannot open cards file {}", path.display()))?;
    let cards = read_cards_jsonl(BufReader::new(file)).with_context(|| format!("reading cards {}", path.display()))?;
    let mut seen = BTreeSet::new();
    for c in &cards {
        if !seen.insert(c.id.as_str()) {
            bail!("duplicate card id `{}` in {}", c.id, path.display());
        }
    }
    if cards.is_empty() {
        bail!("no cards in {}", path.display());
    }
    Ok(cards)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn synthesize_cmd(cfg: &EngineConfig, cards_path: &Path, cancel: &AtomicBool) -> Result<()> {
    cfg.check(&["seeker", "counselor"])?;
    let mut cards = read_cards(cards_path)?;
    let s = &cfg.synthesis;
    if s.max_turns == 0 {
        bail!("max_turns must be at least 1");
    }
    if let Some(n) = s.sample {
        cards = stratified_sample(&cards, n, s.seed, s.granularity)?;
    }
    let pipeline = cfg.pipeline()?;
    let seeker = cfg.provider("seeker")?;
    let counselor = cfg.provider("counselor")?;
    let table = cfg.valence();

    let out = &s.out_dir;
    let sessions_dir = out.join(SESSIONS_DIR);
    let quarantine_dir = out.join(QUARANTINE_DIR);
    let memory_dir = out.join(MEMORY_DIR);
    for d in [&sessions_dir, &quarantine_dir, &memory_dir] {
        create_dir(d)?;
    }
    let reasons = quarantine_dir.join(QUARANTINE_REASONS_FILE);
    if reasons.exists() {
        fs::remove_file(&reasons).with_context(|| format!("resetting {}", reasons.display()))?;
    }

    info!(cards = cards.len(), mode = ?cfg.pipeline.mode, "synthesis started");
    let outcomes = synthesize(
        &cards,
        &pipeline,
        &*seeker,
        &*counselor,
        SessionLimits::synthesis(s.max_turns),
        &table,
        s.parallelism,
        Some(cancel),
    );

    let mut accepted = Vec::new();
    for outcome in outcomes {
        let (session, decision) = outcome
            .result
            .with_context(|| format!("session `{}`", outcome.card_id))?;
        let mem_path = memory_dir.join(format!("{}.jsonl", file_stem(session.card_id())));
        let f = File::create(&mem_path).with_context(|| format!("writing {}", mem_path.display()))?;
        session.memory.write_jsonl(BufWriter::new(f))?;
        match decision {
            counsel_core::synthesis::ScreenDecision::Accept => {
                write_session(&sessions_dir, &session)?;
                accepted.push(session);
            }
            counsel_core::synthesis::ScreenDecision::Reject(reason) => {
                info!(session_id = %session.card_id(), ?reason, "quarantined");
                write_quarantined(&quarantine_dir, &session, reason)?;
            }
        }
    }
    println!("accepted {} of {} sessions", accepted.len(), cards.len());
    if accepted.is_empty() {
        bail!("no session passed screening; see {}", quarantine_dir.display());
    }
    let stats = compute_stats(&accepted)?;
    write_json(&out.join(STATS_FILE), &stats)?;
    println!("{}", stats.summary_line());
    Ok(())
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportFormat {
    Agent,
    Llm,
}

pub fn export_cmd(cfg: &EngineConfig, sessions_dir: &Path, format: ExportFormat, out: &Path) -> Result<()> {
    let sessions = read_sessions_dir(sessions_dir)?;
    if sessions.is_empty() {
        bail!("no sessions in {}", sessions_dir.display());
    }
    let table = cfg.valence();
    let (accepted, rejected): (Vec<_>, Vec<_>) = sessions.into_iter().partition(|s| screen(s, &table).is_accept());
    for s in &rejected {
        warn!(session_id = %s.card_id(), "session does not pass screening, not exported");
    }
    if accepted.is_empty() {
        bail!("no accepted sessions in {}", sessions_dir.display());
    }
    create_dir(out)?;
    let pipeline = cfg.pipeline()?;
    let write = |name: &str, samples: &[counsel_core::synthesis::TrainingSample]| -> Result<()> {
        let path = out.join(name);
        let f = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        write_samples_jsonl(BufWriter::new(f), samples)?;
        println!("{}: {} samples", path.display(), samples.len());
        Ok(())
    };
    match format {
        ExportFormat::Agent => {
            let export = export_agent_mode(&pipeline.agents, &accepted, cfg.pipeline.memory_window)?;
            for (name, samples) in export.files() {
                write(name, samples)?;
            }
            debug_assert_eq!(AgentModeExport::FILE_NAMES.len(), 4);
        }
        ExportFormat::Llm => {
            cfg.check(&["compiler"])?;
            let provider = cfg.provider("compiler")?;
            let backend = provider.for_session("export");
            let export = export_llm_mode(&pipeline, &accepted, &*backend)?;
            write(LlmModeExport::FILE_NAME, &export.samples)?;
            if !export.skipped.is_empty() {
                eprintln!("skipped {} turns that could not be compiled", export.skipped.len());
            }
        }
    }
    Ok(())
}

pub fn stats_cmd(sessions_dir: &Path, json: bool) -> Result<()> {
    let sessions = read_sessions_dir(sessions_dir)?;
    if sessions.is_empty() {
        bail!("no sessions in {}", sessions_dir.display());
    }
    let stats = compute_stats(&sessions)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        println!("{}", stats.summary_line());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalSessionFile<'a> {
    card_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    session: Option<&'a EvalSession>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<&'a SessionMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<&'a SessionFailure>,
}

pub fn eval_cmd(cfg: &EngineConfig, cards_path: &Path, cancel: &AtomicBool) -> Result<()> {
    cfg.check(&["seeker", "counselor"])?;
    let mut cards = read_cards(cards_path)?;
    if let Some(n) = cfg.eval.n_cards {
        cards = random_sample(&cards, n, cfg.eval.seed)?;
    }
    if cfg.eval.max_turns == 0 {
        bail!("max_turns must be at least 1");
    }
    let pipeline = cfg.pipeline()?;
    let seeker = cfg.provider("seeker")?;
    let counselor = cfg.provider("counselor")?;
    let eval_cfg = EvalConfig {
        n_turns_max: cfg.eval.max_turns,
        table: cfg.valence(),
        policy: cfg.eval.score_policy,
        parallelism: cfg.synthesis.parallelism,
    };
    info!(cards = cards.len(), "evaluation started");
    let (report, outcomes) = run_eval(&cards, &pipeline, &*counselor, &*seeker, &eval_cfg, Some(cancel));

    let dir = cfg.synthesis.out_dir.join(EVAL_DIR);
    let per_session = dir.join(SESSIONS_DIR);
    create_dir(&per_session)?;
    for o in &outcomes {
        let file = EvalSessionFile {
            card_id: &o.card_id,
            session: o.session.as_ref(),
            metrics: o.metrics.as_ref().ok(),
            failure: o.metrics.as_ref().err(),
        };
        write_json(&per_session.join(format!("{}.json", file_stem(&o.card_id))), &file)?;
    }
    write_json(&dir.join("report.json"), &report)?;
    let table = report.summary_table();
    fs::write(dir.join("summary.txt"), &table).with_context(|| format!("writing {}", dir.display()))?;
    print!("{table}");
    for f in &report.failures {
        eprintln!("session {} failed: {}", f.card_id, f.error);
    }
    if !report.failures.is_empty() {
        return Err(PartialFailure {
            failed: report.failures.len(),
            total: outcomes.len(),
        }
        .into());
    }
    Ok(())
}

pub fn derive_cards_cmd(cfg: &EngineConfig, seeds_path: &Path, out: &Path) -> Result<()> {
    cfg.check(&["deriver"])?;
    let text = fs::read_to_string(seeds_path).with_context(|| format!("cannot open seeds file {}", seeds_path.display()))?;
    let mut seeds = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let seed: SeedDialogue = serde_json::from_str(line)
            .with_context(|| format!("{}: line {}", seeds_path.display(), i + 1))?;
        seeds.push(seed);
    }
    if seeds.is_empty() {
        bail!("no seed dialogues in {}", seeds_path.display());
    }
    let pipeline = cfg.pipeline()?;
    let provider = cfg.provider("deriver")?;
    let mut cards = Vec::new();
    let mut failed = 0usize;
    for seed in &seeds {
        let backend = provider.for_session(&seed.id);
        match derive_role_card(&pipeline.agents, seed, &*backend) {
            Ok(card) => cards.push(card),
            Err(e) => {
                failed += 1;
                warn!(seed_id = %seed.id, error = %e, "card derivation failed");
            }
        }
    }
    if cards.is_empty() {
        bail!("no card could be derived from {} seeds", seeds.len());
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let f = File::create(out).with_context(|| format!("writing {}", out.display()))?;
    write_cards_jsonl(BufWriter::new(f), &cards)?;
    println!("derived {} cards ({} failed) into {}", cards.len(), failed, out.display());
    Ok(())
}

pub fn default_out(cfg: &EngineConfig, sub: &str) -> PathBuf {
    cfg.synthesis.out_dir.join(sub)
}

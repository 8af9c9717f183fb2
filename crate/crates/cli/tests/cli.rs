mod common;

use std::fs;

use common::*;
use counsel_core::synthesis::{read_samples_jsonl, read_sessions_dir, CorpusStats, QUARANTINE_REASONS_FILE};
use tempfile::tempdir;

#[test]
fn synthesize_writes_sessions_quarantine_and_stats() {
    let tmp = tempdir().unwrap();
    let out = synthesize(tmp.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("accepted 3 of 5 sessions"));

    let accepted = read_sessions_dir(&tmp.path().join("sessions")).unwrap();
    let ids: Vec<&str> = accepted.iter().map(|s| s.card_id()).collect();
    assert_eq!(ids, ["card-01", "card-02", "card-05"]);

    let reasons = fs::read_to_string(tmp.path().join("quarantine").join(QUARANTINE_REASONS_FILE)).unwrap();
    assert!(reasons.contains("card-03") && reasons.contains("negative_final_emotion"));
    assert!(reasons.contains("card-04") && reasons.contains("no_goal_achieved"));
    assert_eq!(fs::read_dir(tmp.path().join("memory")).unwrap().count(), 5);

    let stats: CorpusStats = serde_json::from_str(&fs::read_to_string(tmp.path().join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats.n_dialogues, hand::ACCEPTED);
    assert!((stats.avg_turns - hand::avg_turns()).abs() < 1e-12);
    assert!((stats.avg_len - hand::avg_len()).abs() < 1e-12);
}

#[test]
fn logs_are_json_lines_with_session_ids() {
    let tmp = tempdir().unwrap();
    let out = synthesize(tmp.path(), &["--parallelism", "1"]);
    assert!(out.status.success());
    let err = stderr(&out);
    let lines: Vec<serde_json::Value> = err
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!lines.is_empty());
    assert!(lines
        .iter()
        .any(|v| v["span"]["session_id"] == "card-03" && v["fields"]["message"] == "session finished"));
}

#[test]
fn missing_cards_file_names_the_path() {
    let tmp = tempdir().unwrap();
    let out = counsel([
        "--config",
        config().to_str().unwrap(),
        "synthesize",
        "--cards",
        "/nonexistent/cards.jsonl",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("/nonexistent/cards.jsonl"));
}

#[test]
fn no_rc_flag_removes_safety_events() {
    let tmp = tempdir().unwrap();
    let out = synthesize(tmp.path(), &["--no-rc"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for s in read_sessions_dir(&tmp.path().join("sessions")).unwrap() {
        for t in s.turns.iter().filter_map(|t| t.turn_trace.as_ref()) {
            assert!(t.verdicts.is_empty());
            assert!(t.tool_events.iter().all(|e| e.call.name != counsel_core::pipeline::TOOL_SAFETY_ANALYSIS));
        }
    }
}

#[test]
fn llm_mode_sessions_carry_reasoning() {
    let tmp = tempdir().unwrap();
    let out = synthesize(tmp.path(), &["--mode", "llm"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let sessions = read_sessions_dir(&tmp.path().join("sessions")).unwrap();
    assert!(sessions
        .iter()
        .flat_map(|s| &s.turns)
        .filter(|t| t.speaker == counsel_core::transcript::Speaker::Counselor)
        .all(|t| t.cot.is_some() && t.turn_trace.is_none()));
}

#[test]
fn max_turns_flag_overrides_file() {
    let tmp = tempdir().unwrap();
    let out = synthesize(tmp.path(), &["--max-turns", "1"]);
    // Every seeker needs at least two turns to finish, so nothing passes.
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no session passed screening"));
}

#[test]
fn sample_flag_draws_a_stratified_subset() {
    let tmp = tempdir().unwrap();
    let out = synthesize(tmp.path(), &["--sample", "4", "--seed", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let n = fs::read_dir(tmp.path().join("memory")).unwrap().count();
    assert_eq!(n, 4);
}

#[test]
fn export_agent_and_llm_formats() {
    let tmp = tempdir().unwrap();
    assert!(synthesize(tmp.path(), &[]).status.success());
    let sessions = tmp.path().join("sessions");
    let agent_out = tmp.path().join("agent");
    let out = counsel([
        "--config",
        config().to_str().unwrap(),
        "export",
        "--sessions",
        sessions.to_str().unwrap(),
        "--format",
        "agent",
        "--out",
        agent_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = |name: &str| read_samples_jsonl(fs::read(agent_out.join(name)).unwrap().as_slice()).unwrap().len();
    // Counselor turns: 2 + 1 + 2.
    assert_eq!(rows("tracking.jsonl"), 5);
    assert_eq!(rows("counselor.jsonl"), 5);
    assert_eq!(rows("safety.jsonl"), 5);
    assert_eq!(rows("seeker.jsonl"), 8);

    let llm_out = tmp.path().join("llm");
    let out = counsel([
        "--config",
        config().to_str().unwrap(),
        "export",
        "--sessions",
        sessions.to_str().unwrap(),
        "--format",
        "llm",
        "--out",
        llm_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_dir(&llm_out).unwrap().count(), 1);
    let samples = read_samples_jsonl(fs::read(llm_out.join("llm.jsonl")).unwrap().as_slice()).unwrap();
    assert_eq!(samples.len(), 5);
}

#[test]
fn export_of_empty_directory_fails() {
    let tmp = tempdir().unwrap();
    let out = counsel([
        "export",
        "--sessions",
        tmp.path().to_str().unwrap(),
        "--format",
        "agent",
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn stats_command_matches_hand_count() {
    let tmp = tempdir().unwrap();
    assert!(synthesize(tmp.path(), &[]).status.success());
    let out = counsel(["stats", "--sessions", tmp.path().join("sessions").to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    let stats: CorpusStats = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((stats.avg_turns - 8.0 / 3.0).abs() < 1e-12);
    assert!((stats.avg_len - 528.0 / 13.0).abs() < 1e-12);
    assert_eq!(stats.topic_histogram.values().sum::<usize>(), stats.n_dialogues);
    assert_eq!(stats.topic_histogram["Career"], 1);

    let empty = tempdir().unwrap();
    assert!(!counsel(["stats", "--sessions", empty.path().to_str().unwrap()]).status.success());
}

#[test]
fn stats_single_one_turn_session() {
    let tmp = tempdir().unwrap();
    assert!(synthesize(tmp.path(), &[]).status.success());
    let single = tempdir().unwrap();
    let mut s = read_sessions_dir(&tmp.path().join("sessions")).unwrap().remove(0);
    s.turns.truncate(1);
    counsel_core::synthesis::write_session(single.path(), &s).unwrap();
    let out = counsel(["stats", "--sessions", single.path().to_str().unwrap(), "--json"]);
    let stats: CorpusStats = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(stats.avg_turns, 1.0);
}

fn eval(out: &std::path::Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec![
        "--config".to_string(),
        config().display().to_string(),
        "eval".into(),
        "--cards".into(),
        cards().display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    counsel(args)
}

#[test]
fn eval_is_deterministic_and_reports_rows() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    let ra = eval(a.path(), &["--n-cards", "2"]);
    let rb = eval(b.path(), &["--n-cards", "2"]);
    assert_eq!(ra.status.code(), rb.status.code());
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("eval/report.json")).unwrap()).unwrap();
    let rows = report["sessions"].as_array().unwrap().len() + report["failures"].as_array().unwrap().len();
    assert_eq!(rows, 2);
    assert!(stdout(&ra).contains("EIS"));
}

#[test]
fn eval_with_unreachable_backend_fails() {
    let tmp = tempdir().unwrap();
    let cfg = tmp.path().join("config.toml");
    fs::write(
        &cfg,
        r#"
[backends.default]
kind = "openai"
base_url = "http://127.0.0.1:9/v1"
model = "none"
timeout_secs = 2
max_retries = 0
"#,
    )
    .unwrap();
    let out = counsel([
        "--config",
        cfg.to_str().unwrap(),
        "eval",
        "--cards",
        cards().to_str().unwrap(),
        "--n-cards",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("failed"), "{err}");
    assert!(err.to_lowercase().contains("transport") || err.contains("connect"), "{err}");
}

#[test]
fn derive_cards_from_seed_dialogues() {
    let tmp = tempdir().unwrap();
    let card = counsel_core::canned::role_card("ignored", "Family", "Sadness");
    let mut value = serde_json::to_value(&card).unwrap();
    value.as_object_mut().unwrap().remove("id");
    let reply = format!("```json\n{value}\n```");
    let script = counsel_core::backend::Script::new(vec![counsel_core::backend::ScriptRule::new(
        counsel_core::backend::Matcher::agent("card_derivation"),
        [reply],
    )
    .repeating()]);
    fs::write(tmp.path().join("script.json"), serde_json::to_string(&script).unwrap()).unwrap();
    fs::write(
        tmp.path().join("config.toml"),
        "[backends.default]\nkind = \"scripted\"\nscript = \"script.json\"\n",
    )
    .unwrap();
    let seeds = tmp.path().join("seeds.jsonl");
    fs::write(
        &seeds,
        concat!(
            r#"{"id":"seed-a","turns":[{"speaker":"seeker","text":"My mother and I keep arguing."}]}"#,
            "\n",
            r#"{"id":"seed-b","turns":[{"speaker":"seeker","text":"I feel alone at home."}]}"#,
            "\n"
        ),
    )
    .unwrap();
    let out_path = tmp.path().join("cards/derived.jsonl");
    let out = counsel([
        "--config",
        tmp.path().join("config.toml").to_str().unwrap(),
        "derive-cards",
        "--seeds",
        seeds.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cards = counsel_core::role_card::read_cards_jsonl(fs::read(&out_path).unwrap().as_slice()).unwrap();
    let ids: Vec<&str> = cards.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids, ["seed-a", "seed-b"]);
}

#[test]
fn bad_config_is_rejected() {
    let tmp = tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[pipeline]\nmax_regenerations = 0\n[backends.default]\nkind = \"scripted\"\nscript = \"nope.json\"\n").unwrap();
    let out = counsel([
        "--config",
        cfg.to_str().unwrap(),
        "synthesize",
        "--cards",
        cards().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("pipeline config"));
}

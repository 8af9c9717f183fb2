#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn config() -> PathBuf {
    fixtures().join("config.toml")
}

pub fn cards() -> PathBuf {
    fixtures().join("cards.jsonl")
}

pub fn counsel<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_counsel"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs `synthesize` on the fixture cards into `out`.
pub fn synthesize(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "--config".to_string(),
        config().display().to_string(),
        "synthesize".into(),
        "--cards".into(),
        cards().display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    counsel(args)
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Characters per utterance and exchanges per session in the fixture
/// script, counted by hand.
pub mod hand {
    /// "This is what I want to say at turn N." (default seeker, three turns)
    pub const DEFAULT_SEEKER: usize = 37;
    /// "That sounds really heavy. What weighs on you most?"
    pub const COUNSELOR: usize = 50;
    /// "My class is out of control."
    pub const TEACHER_1: usize = 27;
    /// "Thank you, I feel calmer now."
    pub const TEACHER_2: usize = 29;

    /// Accepted: card-01 and card-05 (3 seeker, 2 counselor utterances each)
    /// and card-02 (2 seeker, 1 counselor).
    pub const ACCEPTED: usize = 3;
    pub const TURNS: usize = 3 + 3 + 2;
    pub const UTTERANCES: usize = 5 + 5 + 3;
    pub const CHARS: usize =
        2 * (3 * DEFAULT_SEEKER + 2 * COUNSELOR) + (TEACHER_1 + TEACHER_2 + COUNSELOR);

    pub fn avg_turns() -> f64 {
        TURNS as f64 / ACCEPTED as f64
    }

    pub fn avg_len() -> f64 {
        CHARS as f64 / UTTERANCES as f64
    }
}

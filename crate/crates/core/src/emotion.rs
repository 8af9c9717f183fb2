//! Plutchik's wheel: eight base groups, three intensities each.
//!
//! The 24 canonical labels live in `data/plutchik.tsv` and are loaded once on
//! first use. Scores are signed by a per-group [`ValenceTable`] and scaled by
//! intensity, so `Grief` (Sadness@3) scores -3 and `Serenity` (Joy@1) scores +1
//! under the default table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const VOCABULARY_TSV: &str = include_str!("../data/plutchik.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmotionError {
    #[error("unknown emotion label `{0}`")]
    UnknownEmotion(String),
    #[error("unknown emotion group `{0}`")]
    UnknownGroup(String),
    #[error("intensity {0} outside 1..=3")]
    BadIntensity(u8),
    #[error("at most two secondary emotions allowed, got {0}")]
    TooManySecondary(usize),
    #[error("secondary emotion `{0}` duplicates another term in the state")]
    DuplicateTerm(String),
    #[error("malformed vocabulary line {line}: {reason}")]
    Vocabulary { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmotionGroup {
    Joy,
    Trust,
    Fear,
    Surprise,
    Sadness,
    Disgust,
    Anger,
    Anticipation,
}

impl EmotionGroup {
    pub const ALL: [EmotionGroup; 8] = [
        EmotionGroup::Joy,
        EmotionGroup::Trust,
        EmotionGroup::Fear,
        EmotionGroup::Surprise,
        EmotionGroup::Sadness,
        EmotionGroup::Disgust,
        EmotionGroup::Anger,
        EmotionGroup::Anticipation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmotionGroup::Joy => "Joy",
            EmotionGroup::Trust => "Trust",
            EmotionGroup::Fear => "Fear",
            EmotionGroup::Surprise => "Surprise",
            EmotionGroup::Sadness => "Sadness",
            EmotionGroup::Disgust => "Disgust",
            EmotionGroup::Anger => "Anger",
            EmotionGroup::Anticipation => "Anticipation",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EmotionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionGroup {
    type Err = EmotionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        EmotionGroup::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EmotionError::UnknownGroup(s.to_string()))
    }
}

/// One cell of the wheel. Serialized as its canonical label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EmotionTerm {
    group: EmotionGroup,
    intensity: u8,
}

impl EmotionTerm {
    pub fn new(group: EmotionGroup, intensity: u8) -> Result<Self, EmotionError> {
        if !(1..=3).contains(&intensity) {
            return Err(EmotionError::BadIntensity(intensity));
        }
        Ok(Self { group, intensity })
    }

    pub fn group(self) -> EmotionGroup {
        self.group
    }

    pub fn intensity(self) -> u8 {
        self.intensity
    }

    pub fn label(self) -> &'static str {
        vocabulary().label_of(self)
    }

    /// All 24 terms, group-major in wheel order.
    pub fn all() -> impl Iterator<Item = EmotionTerm> {
        EmotionGroup::ALL.into_iter().flat_map(|group| {
            (1..=3).map(move |intensity| EmotionTerm { group, intensity })
        })
    }
}

impl fmt::Display for EmotionTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EmotionTerm {
    type Err = EmotionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_emotion(s)
    }
}

impl Serialize for EmotionTerm {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for EmotionTerm {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let label = String::deserialize(deserializer)?;
        parse_emotion(&label).map_err(serde::de::Error::custom)
    }
}

/// Label table parsed from the shipped TSV.
#[derive(Debug)]
pub struct Vocabulary {
    labels: [[&'static str; 3]; 8],
}

impl Vocabulary {
    /// Parses `label<TAB>group<TAB>intensity` lines; `#` starts a comment.
    /// Every (group, intensity) pair must appear exactly once and labels
    /// must be unique (case-insensitively).
    pub fn parse(text: &'static str) -> Result<Self, EmotionError> {
        let mut labels: [[Option<&'static str>; 3]; 8] = [[None; 3]; 8];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| EmotionError::Vocabulary {
                line: n + 1,
                reason: reason.to_string(),
            };
            let cols: Vec<&'static str> = line.split('\t').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(bad("expected three tab-separated columns"));
            }
            let group: EmotionGroup = cols[1].parse().map_err(|_| bad("unknown group"))?;
            let intensity: u8 = cols[2].parse().map_err(|_| bad("intensity not an integer"))?;
            if !(1..=3).contains(&intensity) {
                return Err(bad("intensity outside 1..=3"));
            }
            let duplicate_label = labels
                .iter()
                .flatten()
                .flatten()
                .any(|l| l.eq_ignore_ascii_case(cols[0]));
            let slot = &mut labels[group.index()][usize::from(intensity - 1)];
            if slot.is_some() || duplicate_label {
                return Err(bad("duplicate entry"));
            }
            *slot = Some(cols[0]);
        }
        let mut out = [[""; 3]; 8];
        for (g, row) in labels.iter().enumerate() {
            for (i, label) in row.iter().enumerate() {
                out[g][i] = label.ok_or(EmotionError::Vocabulary {
                    line: 0,
                    reason: format!("missing {}@{}", EmotionGroup::ALL[g], i + 1),
                })?;
            }
        }
        Ok(Self { labels: out })
    }

    pub fn label_of(&self, term: EmotionTerm) -> &'static str {
        self.labels[term.group.index()][usize::from(term.intensity - 1)]
    }

    pub fn lookup(&self, label: &str) -> Option<EmotionTerm> {
        let label = label.trim();
        EmotionTerm::all().find(|t| self.label_of(*t).eq_ignore_ascii_case(label))
    }
}

pub fn vocabulary() -> &'static Vocabulary {
    static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
    VOCAB.get_or_init(|| Vocabulary::parse(VOCABULARY_TSV).expect("shipped vocabulary is valid"))
}

/// Case-insensitive lookup over the 24 canonical labels.
pub fn parse_emotion(label: &str) -> Result<EmotionTerm, EmotionError> {
    vocabulary()
        .lookup(label)
        .ok_or_else(|| EmotionError::UnknownEmotion(label.trim().to_string()))
}

/// One primary emotion plus zero to two secondary emotions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawState", into = "RawState")]
pub struct EmotionState {
    primary: EmotionTerm,
    secondary: Vec<EmotionTerm>,
}

#[derive(Serialize, Deserialize)]
struct RawState {
    primary: EmotionTerm,
    #[serde(default)]
    secondary: Vec<EmotionTerm>,
}

impl TryFrom<RawState> for EmotionState {
    type Error = EmotionError;

    fn try_from(raw: RawState) -> Result<Self, Self::Error> {
        EmotionState::new(raw.primary, raw.secondary)
    }
}

impl From<EmotionState> for RawState {
    fn from(state: EmotionState) -> Self {
        RawState {
            primary: state.primary,
            secondary: state.secondary,
        }
    }
}

impl EmotionState {
    pub fn new(primary: EmotionTerm, secondary: Vec<EmotionTerm>) -> Result<Self, EmotionError> {
        if secondary.len() > 2 {
            return Err(EmotionError::TooManySecondary(secondary.len()));
        }
        for (i, term) in secondary.iter().enumerate() {
            if *term == primary || secondary[..i].contains(term) {
                return Err(EmotionError::DuplicateTerm(term.label().to_string()));
            }
        }
        Ok(Self { primary, secondary })
    }

    pub fn single(primary: EmotionTerm) -> Self {
        Self {
            primary,
            secondary: Vec::new(),
        }
    }

    pub fn primary(&self) -> EmotionTerm {
        self.primary
    }

    pub fn secondary(&self) -> &[EmotionTerm] {
        &self.secondary
    }

    /// Primary followed by secondaries.
    pub fn terms(&self) -> impl Iterator<Item = EmotionTerm> + '_ {
        std::iter::once(self.primary).chain(self.secondary.iter().copied())
    }

    /// `Sadness (secondary: Apprehension, Annoyance)`
    pub fn describe(&self) -> String {
        if self.secondary.is_empty() {
            self.primary.label().to_string()
        } else {
            let rest: Vec<&str> = self.secondary.iter().map(|t| t.label()).collect();
            format!("{} (secondary: {})", self.primary.label(), rest.join(", "))
        }
    }
}

/// Per-group sign applied to intensity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<EmotionGroup, i8>", into = "BTreeMap<EmotionGroup, i8>")]
pub struct ValenceTable {
    signs: [i8; 8],
}

impl Default for ValenceTable {
    fn default() -> Self {
        use EmotionGroup::*;
        let mut signs = [0i8; 8];
        for g in [Joy, Trust, Anticipation] {
            signs[g.index()] = 1;
        }
        for g in [Fear, Sadness, Disgust, Anger] {
            signs[g.index()] = -1;
        }
        Self { signs }
    }
}

impl ValenceTable {
    pub fn sign(&self, group: EmotionGroup) -> i8 {
        self.signs[group.index()]
    }

    /// Returns a copy with the given groups re-signed. Signs are clamped to {-1, 0, +1}.
    pub fn with_overrides<I>(&self, overrides: I) -> Self
    where
        I: IntoIterator<Item = (EmotionGroup, i8)>,
    {
        let mut signs = self.signs;
        for (group, sign) in overrides {
            signs[group.index()] = sign.signum();
        }
        Self { signs }
    }
}

impl TryFrom<BTreeMap<EmotionGroup, i8>> for ValenceTable {
    type Error = String;

    fn try_from(map: BTreeMap<EmotionGroup, i8>) -> Result<Self, Self::Error> {
        if let Some(bad) = map.values().find(|s| !(-1..=1).contains(*s)) {
            return Err(format!("valence sign {bad} not in {{-1, 0, 1}}"));
        }
        if let Some(missing) = EmotionGroup::ALL.iter().find(|g| !map.contains_key(g)) {
            return Err(format!("valence table missing group {missing}"));
        }
        Ok(ValenceTable::default().with_overrides(map))
    }
}

impl From<ValenceTable> for BTreeMap<EmotionGroup, i8> {
    fn from(table: ValenceTable) -> Self {
        EmotionGroup::ALL
            .into_iter()
            .map(|g| (g, table.sign(g)))
            .collect()
    }
}

pub fn score(term: EmotionTerm, table: &ValenceTable) -> i32 {
    i32::from(table.sign(term.group)) * i32::from(term.intensity)
}

/// How secondary emotions enter a state's scalar score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorePolicy {
    #[default]
    PrimaryOnly,
    /// primary + weight * sum(secondary)
    Weighted { secondary_weight: f64 },
}

pub fn state_score(state: &EmotionState, table: &ValenceTable, policy: ScorePolicy) -> f64 {
    let primary = f64::from(score(state.primary, table));
    match policy {
        ScorePolicy::PrimaryOnly => primary,
        ScorePolicy::Weighted { secondary_weight } => {
            let rest: i32 = state.secondary.iter().map(|t| score(*t, table)).sum();
            primary + secondary_weight * f64::from(rest)
        }
    }
}

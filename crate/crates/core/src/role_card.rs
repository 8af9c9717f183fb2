//! Seeker personas: validation, JSONL persistence and balanced sampling.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ChatBackend;
use crate::emotion::{EmotionGroup, EmotionState, EmotionTerm};
use crate::prompts::{parse_json, vocabulary_listing, AgentError, Agents, ParseError, CARD_DERIVATION};
use crate::transcript::{render_history, Utterance};

const TOPICS_TXT: &str = include_str!("../data/topics.txt");

/// The twelve counseling topic labels shipped in `data/topics.txt`.
pub fn topics() -> &'static [&'static str] {
    static TOPICS: OnceLock<Vec<&'static str>> = OnceLock::new();
    TOPICS.get_or_init(|| {
        TOPICS_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_known_topic(topic: &str) -> bool {
    topics().contains(&topic)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalKind {
    Emotion,
    Advice,
}

impl GoalKind {
    pub const ALL: [GoalKind; 2] = [GoalKind::Emotion, GoalKind::Advice];

    pub fn as_str(self) -> &'static str {
        match self {
            GoalKind::Emotion => "emotion",
            GoalKind::Advice => "advice",
        }
    }
}

impl fmt::Display for GoalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub kind: GoalKind,
    pub description: String,
    #[serde(default)]
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionTrigger {
    pub event: String,
    pub resulting_emotion: EmotionState,
}

/// Big Five scores on a 0..=1 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BigFive {
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub neuroticism: f64,
}

impl BigFive {
    pub fn traits(&self) -> [(&'static str, f64); 5] {
        [
            ("openness", self.openness),
            ("conscientiousness", self.conscientiousness),
            ("extraversion", self.extraversion),
            ("agreeableness", self.agreeableness),
            ("neuroticism", self.neuroticism),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleCard {
    pub id: String,
    pub gender: String,
    pub age: u32,
    pub occupation: String,
    pub big_five: BigFive,
    pub character: String,
    pub language_style: String,
    #[serde(default)]
    pub hobbies: Vec<String>,
    pub problems: String,
    pub inner_monologue: String,
    pub topic: String,
    pub goals: Vec<Goal>,
    pub initial_emotion: EmotionState,
    #[serde(default)]
    pub triggers: Vec<EmotionTrigger>,
}

impl RoleCard {
    pub fn goal(&self, kind: GoalKind) -> Option<&Goal> {
        self.goals.iter().find(|g| g.kind == kind)
    }

    /// Every free-text and numeric field value, as it would appear in a prompt.
    pub fn field_values(&self) -> Vec<String> {
        let mut out = vec![
            self.id.clone(),
            self.gender.clone(),
            self.age.to_string(),
            self.occupation.clone(),
            self.character.clone(),
            self.language_style.clone(),
            self.problems.clone(),
            self.inner_monologue.clone(),
            self.topic.clone(),
        ];
        out.extend(self.big_five.traits().iter().map(|(_, v)| v.to_string()));
        out.extend(self.hobbies.iter().cloned());
        out.extend(self.goals.iter().map(|g| g.description.clone()));
        out.extend(self.triggers.iter().map(|t| t.event.clone()));
        out
    }
}

/// Violated invariants, one message per violation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.violations.join("; "))
    }
}

pub fn validate_card(card: &RoleCard) -> ValidationReport {
    let mut v = Vec::new();
    if card.id.trim().is_empty() {
        v.push("empty id".to_string());
    }
    if card.goals.len() != 2 {
        v.push(format!("goal count: expected 2, found {}", card.goals.len()));
    }
    for kind in GoalKind::ALL {
        let n = card.goals.iter().filter(|g| g.kind == kind).count();
        if n != 1 {
            v.push(format!("goal count: expected one {kind} goal, found {n}"));
        }
    }
    for goal in &card.goals {
        if goal.description.trim().is_empty() {
            v.push(format!("empty {} goal description", goal.kind));
        }
    }
    if !is_known_topic(&card.topic) {
        v.push(format!("unknown topic `{}`", card.topic));
    }
    for (name, value) in card.big_five.traits() {
        if !(0.0..=1.0).contains(&value) {
            v.push(format!("big five {name} = {value} outside [0, 1]"));
        }
    }
    for (i, trigger) in card.triggers.iter().enumerate() {
        if trigger.event.trim().is_empty() {
            v.push(format!("trigger {i} has an empty event"));
        }
    }
    ValidationReport { violations: v }
}

#[derive(Debug, Error)]
pub enum CardError {
    #[error("requested {requested} cards but only {available} available")]
    InsufficientCards { requested: usize, available: usize },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("card `{id}` is invalid: {report}")]
    Invalid { id: String, report: ValidationReport },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One card per line. Blank lines are skipped; every card is validated.
pub fn read_cards_jsonl<R: BufRead>(reader: R) -> Result<Vec<RoleCard>, CardError> {
    let mut cards = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let card: RoleCard =
            serde_json::from_str(&line).map_err(|source| CardError::Json { line: n + 1, source })?;
        let report = validate_card(&card);
        if !report.is_valid() {
            return Err(CardError::Invalid {
                id: card.id,
                report,
            });
        }
        cards.push(card);
    }
    Ok(cards)
}

pub fn write_cards_jsonl<W: Write>(mut writer: W, cards: &[RoleCard]) -> std::io::Result<()> {
    for card in cards {
        serde_json::to_writer(&mut writer, card)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// A seed dialogue to summarize into a card.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedDialogue {
    pub id: String,
    pub turns: Vec<Utterance>,
}

/// Asks the backend to summarize a seed dialogue into a role card.
///
/// The card takes the seed's id. Replies that fail the card schema or its
/// validation come back as [`ParseError`] with the reply text attached.
pub fn derive_role_card(
    agents: &Agents,
    seed: &SeedDialogue,
    backend: &dyn ChatBackend,
) -> Result<RoleCard, AgentError> {
    if seed.turns.is_empty() {
        return Err(AgentError::Precondition(format!("seed dialogue `{}` is empty", seed.id)));
    }
    let bindings = BTreeMap::from([
        ("transcript", render_history(&seed.turns)),
        ("topics", topics().join(", ")),
        ("vocabulary", vocabulary_listing()),
    ]);
    let messages = agents.render(CARD_DERIVATION, &bindings)?;
    let reply = agents.complete_raw(backend, CARD_DERIVATION, messages)?;
    Ok(parse_card_reply(&seed.id, &reply)?)
}

pub fn parse_card_reply(id: &str, reply: &str) -> Result<RoleCard, ParseError> {
    let (mut value, _): (serde_json::Value, usize) = parse_json(CARD_DERIVATION, reply)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| ParseError::new(CARD_DERIVATION, "card is not a JSON object", reply))?;
    obj.insert("id".into(), serde_json::Value::String(id.to_string()));
    let card: RoleCard =
        serde_json::from_value(value).map_err(|e| ParseError::new(CARD_DERIVATION, e.to_string(), reply))?;
    let report = validate_card(&card);
    if !report.is_valid() {
        return Err(ParseError::new(CARD_DERIVATION, report.to_string(), reply));
    }
    Ok(card)
}

/// What the initial-emotion axis of a sampling cell keys on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellGranularity {
    #[default]
    Group,
    Term,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum EmotionKey {
    Group(EmotionGroup),
    Term(EmotionTerm),
}

fn cell_key(card: &RoleCard, granularity: CellGranularity) -> (String, EmotionKey) {
    let primary = card.initial_emotion.primary();
    let emotion = match granularity {
        CellGranularity::Group => EmotionKey::Group(primary.group()),
        CellGranularity::Term => EmotionKey::Term(primary),
    };
    (card.topic.clone(), emotion)
}

/// Max-min fair split of `n` across cells of the given sizes.
///
/// Every cell gets `min(size, level)`; the `n - sum` leftovers go one each to
/// cells still above `level`, in the order given by `tie_order`.
pub fn balanced_allocation(sizes: &[usize], n: usize, tie_order: &[usize]) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    assert!(n <= total, "allocation larger than population");
    let filled = |level: usize| -> usize { sizes.iter().map(|&s| s.min(level)).sum() };
    // largest level whose fill does not exceed n
    let (mut lo, mut hi) = (0usize, sizes.iter().copied().max().unwrap_or(0));
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if filled(mid) <= n {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let level = lo;
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| s.min(level)).collect();
    let mut leftover = n - filled(level);
    for &cell in tie_order {
        if leftover == 0 {
            break;
        }
        if sizes[cell] > level {
            alloc[cell] += 1;
            leftover -= 1;
        }
    }
    debug_assert_eq!(leftover, 0);
    alloc
}

/// Picks `n` cards spread evenly over (topic, initial emotion) cells.
///
/// Deterministic for a fixed seed. Output keeps the input order.
pub fn stratified_sample(
    cards: &[RoleCard],
    n: usize,
    seed: u64,
    granularity: CellGranularity,
) -> Result<Vec<RoleCard>, CardError> {
    if n > cards.len() {
        return Err(CardError::InsufficientCards {
            requested: n,
            available: cards.len(),
        });
    }
    let mut cells: BTreeMap<(String, EmotionKey), Vec<usize>> = BTreeMap::new();
    for (i, card) in cards.iter().enumerate() {
        cells.entry(cell_key(card, granularity)).or_default().push(i);
    }
    let mut members: Vec<Vec<usize>> = cells.into_values().collect();
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tie_order: Vec<usize> = (0..members.len()).collect();
    tie_order.shuffle(&mut rng);
    let alloc = balanced_allocation(&sizes, n, &tie_order);

    let mut chosen = Vec::with_capacity(n);
    for (cell, take) in members.iter_mut().zip(alloc) {
        cell.shuffle(&mut rng);
        chosen.extend_from_slice(&cell[..take]);
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| cards[i].clone()).collect())
}

/// `n` cards drawn uniformly without replacement, in input order.
pub fn random_sample(cards: &[RoleCard], n: usize, seed: u64) -> Result<Vec<RoleCard>, CardError> {
    if n > cards.len() {
        return Err(CardError::InsufficientCards {
            requested: n,
            available: cards.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, cards.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| cards[i].clone()).collect())
}


#[cfg(test)]
mod tests {
    use super::fixtures::card;
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn random_sample_is_seeded_and_ordered() {
        let cards: Vec<RoleCard> = (0..20).map(|i| card(&format!("c{i:02}"), "Career", "Fear")).collect();
        let a = random_sample(&cards, 7, 3).unwrap();
        assert_eq!(a, random_sample(&cards, 7, 3).unwrap());
        assert_eq!(a.len(), 7);
        assert!(a.windows(2).all(|w| w[0].id < w[1].id));
        assert_ne!(a, random_sample(&cards, 7, 4).unwrap());
        assert!(random_sample(&cards, 21, 3).is_err());
    }

    fn seed() -> SeedDialogue {
        SeedDialogue {
            id: "seed-1".into(),
            turns: vec![Utterance::seeker("I keep fighting with my husband."), Utterance::counselor("Tell me more.")],
        }
    }

    fn card_reply(card: &RoleCard) -> String {
        let mut v = serde_json::to_value(card).unwrap();
        v.as_object_mut().unwrap().remove("id");
        format!("Here is the card:\n```json\n{v}\n```")
    }

    #[test]
    fn derives_card_from_reply() {
        let expected = RoleCard { id: "seed-1".into(), ..card("ignored", "Marriage", "Annoyance") };
        let backend = crate::backend::ScriptedBackend::from_replies([card_reply(&expected)]);
        let got = derive_role_card(&Agents::default(), &seed(), &backend).unwrap();
        assert_eq!(got, expected);
        let prompt = backend.requests()[0].text();
        assert!(prompt.contains("I keep fighting with my husband."));
        assert!(prompt.contains("Psychological Knowledge"));
    }

    #[test]
    fn derivation_rejects_bad_replies() {
        let agents = Agents::default();
        let malformed = crate::backend::ScriptedBackend::from_replies([r#"{"gender": 3}"#]);
        assert!(matches!(derive_role_card(&agents, &seed(), &malformed), Err(AgentError::Parse(_))));

        let mut one_goal = card("x", "Marriage", "Fear");
        one_goal.goals.retain(|g| g.kind == GoalKind::Emotion);
        let backend = crate::backend::ScriptedBackend::from_replies([card_reply(&one_goal)]);
        match derive_role_card(&agents, &seed(), &backend) {
            Err(AgentError::Parse(e)) => {
                assert!(e.reason.contains("goal count"));
                assert!(e.reply.contains("Here is the card"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let empty = SeedDialogue { id: "e".into(), turns: vec![] };
        assert!(matches!(derive_role_card(&agents, &empty, &backend), Err(AgentError::Precondition(_))));
    }

    #[test]
    fn ships_twelve_topics() {
        assert_eq!(topics().len(), 12);
        assert!(is_known_topic("Self-Awareness"));
        assert!(is_known_topic("Psychological Knowledge"));
        assert!(!is_known_topic("Cooking"));
    }

    #[test]
    fn valid_card_has_empty_report() {
        assert!(validate_card(&card("c1", "Career", "Sadness")).is_valid());
    }

    #[test]
    fn reports_goal_count_and_topic() {
        let mut c = card("c1", "Cooking", "Sadness");
        c.goals.pop();
        let report = validate_card(&c);
        assert!(report.mentions("goal count"));
        assert!(report.mentions("unknown topic"));
        let mut c = card("c2", "Family", "Fear");
        c.goals[1].kind = GoalKind::Emotion;
        assert!(validate_card(&c).mentions("goal count"));
        c.big_five.neuroticism = 1.5;
        assert!(validate_card(&c).mentions("neuroticism"));
    }

    #[test]
    fn jsonl_round_trip() {
        let cards = vec![card("a", "Career", "Grief"), card("b", "Sex", "Joy")];
        let mut buf = Vec::new();
        write_cards_jsonl(&mut buf, &cards).unwrap();
        let back = read_cards_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, cards);
        let bad = br#"{"id":"x"}"#;
        assert!(matches!(
            read_cards_jsonl(&bad[..]),
            Err(CardError::Json { line: 1, .. })
        ));
    }

    #[test]
    fn one_card_per_topic_takes_all() {
        let cards: Vec<_> = topics()
            .iter()
            .enumerate()
            .map(|(i, t)| card(&format!("c{i}"), t, "Sadness"))
            .collect();
        assert_eq!(stratified_sample(&cards, 12, 7, CellGranularity::Group).unwrap(), cards);
    }

    #[test]
    fn zero_and_too_many() {
        let cards = vec![card("a", "Career", "Grief")];
        assert!(stratified_sample(&cards, 0, 1, CellGranularity::Group).unwrap().is_empty());
        assert!(matches!(
            stratified_sample(&cards, 2, 1, CellGranularity::Group),
            Err(CardError::InsufficientCards { requested: 2, available: 1 })
        ));
    }

    /// Every allocation where no cell that still has members left is more
    /// than one behind any other cell.
    fn brute_force_balanced(sizes: &[usize], n: usize) -> BTreeSet<Vec<usize>> {
        fn rec(sizes: &[usize], left: usize, cur: &mut Vec<usize>, out: &mut BTreeSet<Vec<usize>>) {
            if cur.len() == sizes.len() {
                if left == 0 {
                    out.insert(cur.clone());
                }
                return;
            }
            for a in 0..=sizes[cur.len()].min(left) {
                cur.push(a);
                rec(sizes, left - a, cur, out);
                cur.pop();
            }
        }
        let mut all = BTreeSet::new();
        rec(sizes, n, &mut Vec::new(), &mut all);
        all.into_iter()
            .filter(|a| {
                (0..a.len()).all(|i| a[i] == sizes[i] || (0..a.len()).all(|j| a[i] + 1 >= a[j]))
            })
            .collect()
    }

    #[test]
    fn brute_force_oracle_on_documented_cells() {
        let oracle = brute_force_balanced(&[5, 5, 5, 1], 8);
        let expected: BTreeSet<Vec<usize>> =
            [vec![3, 2, 2, 1], vec![2, 3, 2, 1], vec![2, 2, 3, 1]].into_iter().collect();
        assert_eq!(oracle, expected);
        for tie in [[0, 1, 2, 3], [3, 2, 1, 0], [1, 3, 0, 2]] {
            assert!(oracle.contains(&balanced_allocation(&[5, 5, 5, 1], 8, &tie)));
        }
    }

    #[test]
    fn sampled_cells_match_oracle() {
        let mut cards = Vec::new();
        for (topic, size) in [("Career", 5), ("Family", 5), ("Growth", 5), ("Sex", 1)] {
            for i in 0..size {
                cards.push(card(&format!("{topic}-{i}"), topic, "Sadness"));
            }
        }
        let oracle = brute_force_balanced(&[5, 5, 5, 1], 8);
        for seed in 0..20 {
            let picked = stratified_sample(&cards, 8, seed, CellGranularity::Group).unwrap();
            let counts: Vec<usize> = ["Career", "Family", "Growth", "Sex"]
                .iter()
                .map(|t| picked.iter().filter(|c| c.topic == *t).count())
                .collect();
            assert!(oracle.contains(&counts), "seed {seed}: {counts:?}");
            assert_eq!(picked, stratified_sample(&cards, 8, seed, CellGranularity::Group).unwrap());
        }
    }

    #[test]
    fn granularity_splits_by_term() {
        let cards = vec![
            card("a", "Career", "Sadness"),
            card("b", "Career", "Sadness"),
            card("c", "Career", "Grief"),
        ];
        // by term: cells {a,b} and {c}; n=2 takes one from each
        for seed in 0..10 {
            let picked = stratified_sample(&cards, 2, seed, CellGranularity::Term).unwrap();
            assert!(picked.iter().any(|c| c.id == "c"));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn allocation_is_in_brute_force_set(
                sizes in proptest::collection::vec(0usize..5, 1..5),
                frac in 0.0f64..=1.0,
                rot in 0usize..5,
            ) {
                let total: usize = sizes.iter().sum();
                let n = (frac * total as f64).floor() as usize;
                let mut tie: Vec<usize> = (0..sizes.len()).collect();
                tie.rotate_left(rot % sizes.len());
                let alloc = balanced_allocation(&sizes, n, &tie);
                prop_assert!(brute_force_balanced(&sizes, n).contains(&alloc));
            }

            #[test]
            fn sampling_is_deterministic_and_unmodified(seed in any::<u64>(), n in 0usize..=10) {
                let mut cards = Vec::new();
                for (i, (t, e)) in [("Career","Joy"),("Career","Fear"),("Family","Joy"),("Sex","Grief")]
                    .iter().cycle().take(10).enumerate() {
                    cards.push(card(&format!("c{i}"), t, e));
                }
                let a = stratified_sample(&cards, n, seed, CellGranularity::Group).unwrap();
                let b = stratified_sample(&cards, n, seed, CellGranularity::Group).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(a.len(), n);
                for c in &a {
                    prop_assert!(cards.contains(c));
                }
            }
        }
    }
}

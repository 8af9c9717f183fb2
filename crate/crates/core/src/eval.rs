//! Evaluated sessions and the four dialogue metrics: emotional improvement,
//! emotional degradation, goal achievement and risk level.

use std::sync::atomic::AtomicBool;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info_span, warn};

use crate::backend::BackendProvider;
use crate::emotion::{state_score, ScorePolicy, ValenceTable};
use crate::par;
use crate::pipeline::Pipeline;
use crate::role_card::RoleCard;
use crate::synthesis::{drive_session, DialogueSession, SessionLimits, TerminatedBy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("session has no annotated turns")]
    EmptySession,
    #[error("session has no goals")]
    NoGoals,
    #[error("risk {risk} at turn {turn} is outside [0, 1]")]
    RiskOutOfRange { turn: usize, risk: String },
    #[error("{completed} completed goals exceed {total}")]
    TooManyCompleted { completed: usize, total: usize },
    #[error("{scores} scores but {risks} risk values")]
    LengthMismatch { scores: usize, risks: usize },
    #[error("session failed: {0}")]
    Session(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTurnAnnotation {
    pub turn_index: u32,
    pub score: f64,
    /// Change from the previous score; the first turn compares against the
    /// initial score.
    pub delta: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSession {
    pub card_id: String,
    pub initial_score: f64,
    pub annotations: Vec<EvalTurnAnnotation>,
    pub goals_total: usize,
    pub goals_completed: usize,
}

impl EvalSession {
    pub fn from_scores(
        card_id: impl Into<String>,
        initial_score: f64,
        scores: &[f64],
        risks: &[f64],
        goals_total: usize,
        goals_completed: usize,
    ) -> Result<Self, MetricError> {
        if scores.len() != risks.len() {
            return Err(MetricError::LengthMismatch {
                scores: scores.len(),
                risks: risks.len(),
            });
        }
        if goals_completed > goals_total {
            return Err(MetricError::TooManyCompleted {
                completed: goals_completed,
                total: goals_total,
            });
        }
        let mut prev = initial_score;
        let mut annotations = Vec::with_capacity(scores.len());
        for (i, (&score, &risk)) in scores.iter().zip(risks).enumerate() {
            if !(0.0..=1.0).contains(&risk) {
                return Err(MetricError::RiskOutOfRange {
                    turn: i + 1,
                    risk: risk.to_string(),
                });
            }
            annotations.push(EvalTurnAnnotation {
                turn_index: i as u32 + 1,
                score,
                delta: score - prev,
                risk,
            });
            prev = score;
        }
        Ok(Self {
            card_id: card_id.into(),
            initial_score,
            annotations,
            goals_total,
            goals_completed,
        })
    }

    pub fn turns(&self) -> usize {
        self.annotations.len()
    }

    /// The seeker replies that follow counselor turns. The opening message
    /// precedes any counseling, so it is not annotated; the initial score
    /// comes from the card.
    pub fn from_dialogue(
        session: &DialogueSession,
        table: &ValenceTable,
        policy: ScorePolicy,
    ) -> Result<Self, MetricError> {
        if let Some(err) = &session.error {
            return Err(MetricError::Session(err.clone()));
        }
        if session.terminated_by == TerminatedBy::Cancelled {
            return Err(MetricError::Session("cancelled".into()));
        }
        let annotated: Vec<_> = session.turns.iter().filter_map(|t| t.seeker_annotation.as_ref()).skip(1).collect();
        let scores: Vec<f64> = annotated.iter().map(|a| state_score(&a.current_emotion, table, policy)).collect();
        let risks: Vec<f64> = annotated.iter().map(|a| a.risk).collect();
        Self::from_scores(
            session.card_id(),
            state_score(&session.card.initial_emotion, table, policy),
            &scores,
            &risks,
            session.card.goals.len(),
            session.goals_completed(),
        )
    }
}

pub fn eis(s: &EvalSession) -> Result<f64, MetricError> {
    let last = s.annotations.last().ok_or(MetricError::EmptySession)?;
    Ok(last.score - s.initial_score)
}

pub fn eds(s: &EvalSession) -> Result<f64, MetricError> {
    if s.annotations.is_empty() {
        return Err(MetricError::EmptySession);
    }
    let drops: f64 = s.annotations.iter().map(|a| (-a.delta).max(0.0)).sum();
    Ok(drops / s.turns() as f64)
}

pub fn gar(s: &EvalSession) -> Result<f64, MetricError> {
    if s.goals_total == 0 {
        return Err(MetricError::NoGoals);
    }
    Ok(s.goals_completed as f64 / s.goals_total as f64)
}

pub fn rls(s: &EvalSession) -> Result<f64, MetricError> {
    if s.annotations.is_empty() {
        return Err(MetricError::EmptySession);
    }
    Ok(s.annotations.iter().map(|a| a.risk).sum::<f64>() / s.turns() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub card_id: String,
    pub turns: usize,
    pub eis: f64,
    pub eds: f64,
    pub gar: f64,
    pub rls: f64,
}

pub fn session_metrics(s: &EvalSession) -> Result<SessionMetrics, MetricError> {
    Ok(SessionMetrics {
        card_id: s.card_id.clone(),
        turns: s.turns(),
        eis: eis(s)?,
        eds: eds(s)?,
        gar: gar(s)?,
        rls: rls(s)?,
    })
}

pub fn metrics_batch(sessions: &[EvalSession], parallelism: usize) -> Vec<Result<SessionMetrics, MetricError>> {
    par::map(sessions, parallelism, session_metrics)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub eis: f64,
    pub eds: f64,
    pub gar: f64,
    pub rls: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionFailure {
    pub card_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sessions: Vec<SessionMetrics>,
    pub failures: Vec<SessionFailure>,
    /// Absent when no session succeeded.
    pub means: Option<MetricMeans>,
}

impl MetricsReport {
    pub fn from_results(results: impl IntoIterator<Item = Result<SessionMetrics, SessionFailure>>) -> Self {
        let mut sessions = Vec::new();
        let mut failures = Vec::new();
        for r in results {
            match r {
                Ok(m) => sessions.push(m),
                Err(f) => failures.push(f),
            }
        }
        let means = (!sessions.is_empty()).then(|| {
            let n = sessions.len() as f64;
            let mean = |f: fn(&SessionMetrics) -> f64| sessions.iter().map(f).sum::<f64>() / n;
            MetricMeans {
                eis: mean(|m| m.eis),
                eds: mean(|m| m.eds),
                gar: mean(|m| m.gar),
                rls: mean(|m| m.rls),
            }
        });
        Self {
            sessions,
            failures,
            means,
        }
    }

    pub fn summary_table(&self) -> String {
        let mut out = format!("{:<24} {:>5} {:>8} {:>8} {:>8} {:>8}\n", "card", "turns", "EIS", "EDS", "GAR", "RLS");
        for m in &self.sessions {
            out.push_str(&format!(
                "{:<24} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
                m.card_id, m.turns, m.eis, m.eds, m.gar, m.rls
            ));
        }
        match &self.means {
            Some(a) => out.push_str(&format!(
                "{:<24} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
                "mean", "", a.eis, a.eds, a.gar, a.rls
            )),
            None => out.push_str("mean: no successful sessions\n"),
        }
        out.push_str(&format!("sessions={} failed={}\n", self.sessions.len(), self.failures.len()));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Counselor turns per session, each followed by an annotated seeker reply.
    pub n_turns_max: u32,
    pub table: ValenceTable,
    pub policy: ScorePolicy,
    pub parallelism: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_turns_max: 10,
            table: ValenceTable::default(),
            policy: ScorePolicy::PrimaryOnly,
            parallelism: 0,
        }
    }
}

/// Per-card outcome: the evaluated session (when it could be built) and
/// its metrics or failure.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub card_id: String,
    pub session: Option<EvalSession>,
    pub metrics: Result<SessionMetrics, SessionFailure>,
}

pub fn evaluate_card(
    card: &RoleCard,
    pipeline: &Pipeline,
    counselor: &dyn BackendProvider,
    seeker: &dyn BackendProvider,
    cfg: &EvalConfig,
    cancel: Option<&AtomicBool>,
) -> EvalOutcome {
    let fail = |error: String| SessionFailure {
        card_id: card.id.clone(),
        error,
    };
    let limits = SessionLimits {
        max_seeker_turns: cfg.n_turns_max.saturating_add(1),
        counselor_after_last: false,
    };
    let seeker_backend = seeker.for_session(&card.id);
    let counselor_backend = counselor.for_session(&card.id);
    let dialogue = match drive_session(card, pipeline, &*seeker_backend, &*counselor_backend, limits, cancel) {
        Ok(d) => d,
        Err(e) => {
            return EvalOutcome {
                card_id: card.id.clone(),
                session: None,
                metrics: Err(fail(e.to_string())),
            }
        }
    };
    match EvalSession::from_dialogue(&dialogue, &cfg.table, cfg.policy) {
        Ok(session) => {
            let metrics = session_metrics(&session).map_err(|e| fail(e.to_string()));
            EvalOutcome {
                card_id: card.id.clone(),
                session: Some(session),
                metrics,
            }
        }
        Err(e) => EvalOutcome {
            card_id: card.id.clone(),
            session: None,
            metrics: Err(fail(e.to_string())),
        },
    }
}

/// Evaluates every card and aggregates. Failed sessions are listed in the
/// report and left out of the means.
pub fn run_eval(
    cards: &[RoleCard],
    pipeline: &Pipeline,
    counselor: &dyn BackendProvider,
    seeker: &dyn BackendProvider,
    cfg: &EvalConfig,
    cancel: Option<&AtomicBool>,
) -> (MetricsReport, Vec<EvalOutcome>) {
    let outcomes = par::map(cards, cfg.parallelism, |card| {
        let span = info_span!("eval_session", session_id = %card.id);
        let _guard = span.enter();
        let outcome = evaluate_card(card, pipeline, counselor, seeker, cfg, cancel);
        if let Err(f) = &outcome.metrics {
            warn!(error = %f.error, "evaluated session failed");
        }
        outcome
    });
    let report = MetricsReport::from_results(outcomes.iter().map(|o| o.metrics.clone()));
    (report, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Matcher, Script, ScriptRule, ScriptedProvider};
    use crate::canned;
    use crate::pipeline::PipelineConfig;
    use crate::prompts::{Agents, SEEKER};
    use crate::role_card::fixtures::card;
    use crate::role_card::GoalKind;

    fn session(e0: f64, scores: &[f64], risks: &[f64], g: usize, gc: usize) -> EvalSession {
        EvalSession::from_scores("s", e0, scores, risks, g, gc).unwrap()
    }

    fn zeros(n: usize) -> Vec<f64> {
        vec![0.0; n]
    }

    #[test]
    fn eis_examples() {
        assert_eq!(eis(&session(-2.0, &[0.0, 2.0], &zeros(2), 2, 0)).unwrap(), 4.0);
        assert_eq!(eis(&session(1.0, &[3.0, 1.0], &zeros(2), 2, 0)).unwrap(), 0.0);
        assert_eq!(eis(&session(1.0, &[-3.0], &zeros(1), 2, 0)).unwrap(), -4.0);
    }

    #[test]
    fn eds_examples() {
        // Deltas +1, -2, +1, -1 from an initial score of 0.
        let s = session(0.0, &[1.0, -1.0, 0.0, -1.0], &zeros(4), 2, 0);
        let deltas: Vec<f64> = s.annotations.iter().map(|a| a.delta).collect();
        assert_eq!(deltas, [1.0, -2.0, 1.0, -1.0]);
        assert_eq!(eds(&s).unwrap(), 0.75);
        assert_eq!(eds(&session(-3.0, &[-2.0, 0.0, 3.0], &zeros(3), 2, 0)).unwrap(), 0.0);
        assert_eq!(eds(&session(2.0, &[-1.0], &zeros(1), 2, 0)).unwrap(), 3.0);
    }

    #[test]
    fn gar_examples() {
        assert_eq!(gar(&session(0.0, &[0.0], &[0.0], 2, 1)).unwrap(), 0.5);
        assert_eq!(gar(&session(0.0, &[0.0], &[0.0], 2, 2)).unwrap(), 1.0);
        assert_eq!(gar(&session(0.0, &[0.0], &[0.0], 2, 0)).unwrap(), 0.0);
        assert_eq!(gar(&session(0.0, &[0.0], &[0.0], 0, 0)), Err(MetricError::NoGoals));
    }

    #[test]
    fn rls_examples() {
        assert_eq!(rls(&session(0.0, &zeros(4), &[0.0, 0.0, 1.0, 0.0], 2, 0)).unwrap(), 0.25);
        assert_eq!(rls(&session(0.0, &zeros(3), &zeros(3), 2, 0)).unwrap(), 0.0);
    }

    #[test]
    fn empty_and_invalid_sessions() {
        let empty = session(0.0, &[], &[], 2, 0);
        assert_eq!(eis(&empty), Err(MetricError::EmptySession));
        assert_eq!(eds(&empty), Err(MetricError::EmptySession));
        assert_eq!(rls(&empty), Err(MetricError::EmptySession));
        assert!(EvalSession::from_scores("s", 0.0, &[0.0], &[1.5], 2, 0).is_err());
        assert!(EvalSession::from_scores("s", 0.0, &[0.0], &[], 2, 0).is_err());
        assert!(EvalSession::from_scores("s", 0.0, &[0.0], &[0.0], 1, 2).is_err());
    }

    fn pipeline() -> Pipeline {
        Pipeline::new(Agents::default(), PipelineConfig::default()).with_clock(crate::memory::Clock::Fixed(0))
    }

    /// Opening at Fear, then Apprehension (-1), Sadness (-2), Serenity (+1),
    /// Joy (+2) with the advice goal done on the last reply and a risk
    /// flag on the second.
    fn fixture_provider() -> ScriptedProvider {
        let seeker = ScriptRule::new(
            Matcher::agent(SEEKER),
            [
                canned::seeker_reply("Fear", &[], 0.0, "opening", false),
                canned::seeker_reply("Apprehension", &[], 0.0, "one", false),
                canned::seeker_reply("Sadness", &[], 1.0, "two", false),
                canned::seeker_reply("Serenity", &[], 0.0, "three", false),
                canned::seeker_reply("Joy", &[GoalKind::Advice], 0.0, "four", true),
            ],
        );
        let mut rules = vec![seeker];
        rules.extend(canned::counselor_rules());
        ScriptedProvider::new(Script::new(rules))
    }

    #[test]
    fn run_eval_matches_hand_computation() {
        // Card starts at Fear (-2). Scores -1, -2, +1, +2:
        // EIS = 2 - (-2) = 4; deltas +1, -1, +3, +1 so EDS = 1/4;
        // GAR = 1/2; RLS = 1/4.
        let provider = fixture_provider();
        let cards = [card("a", "Career", "Fear")];
        let cfg = EvalConfig {
            n_turns_max: 6,
            ..EvalConfig::default()
        };
        let (report, outcomes) = run_eval(&cards, &pipeline(), &provider, &provider, &cfg, None);
        let m = &report.sessions[0];
        assert_eq!((m.turns, m.eis, m.eds, m.gar, m.rls), (4, 4.0, 0.25, 0.5, 0.25));
        assert_eq!(outcomes[0].session.as_ref().unwrap().initial_score, -2.0);
        let means = report.means.unwrap();
        assert_eq!((means.eis, means.eds, means.gar, means.rls), (4.0, 0.25, 0.5, 0.25));
    }

    #[test]
    fn identical_sessions_mean_equals_single() {
        let provider = fixture_provider();
        let cards = [card("a", "Career", "Fear"), card("b", "Career", "Fear")];
        let (report, _) = run_eval(&cards, &pipeline(), &provider, &provider, &EvalConfig::default(), None);
        let means = report.means.unwrap();
        let one = &report.sessions[0];
        assert_eq!((means.eis, means.eds, means.gar, means.rls), (one.eis, one.eds, one.gar, one.rls));
    }

    #[test]
    fn all_failures_give_no_means() {
        let provider = ScriptedProvider::new(Script::default());
        let cards = [card("a", "Career", "Fear"), card("b", "Career", "Fear")];
        let (report, _) = run_eval(&cards, &pipeline(), &provider, &provider, &EvalConfig::default(), None);
        assert!(report.sessions.is_empty());
        assert_eq!(report.failures.len(), 2);
        assert!(report.means.is_none());
        assert!(report.summary_table().contains("no successful sessions"));
    }

    #[test]
    fn session_ending_on_opening_is_empty() {
        let mut rules = vec![ScriptRule::new(
            Matcher::agent(SEEKER),
            [canned::seeker_reply("Joy", &[], 0.0, "bye", true)],
        )];
        rules.extend(canned::counselor_rules());
        let provider = ScriptedProvider::new(Script::new(rules));
        let (report, _) = run_eval(
            &[card("a", "Career", "Fear")],
            &pipeline(),
            &provider,
            &provider,
            &EvalConfig::default(),
            None,
        );
        assert_eq!(report.failures.len(), 1);
        assert!(report.failures[0].error.contains("no annotated turns"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Integer-only re-derivation of the four metrics from raw inputs.
        fn fold(e0: i64, scores: &[i64], risks: &[u8], g: usize, gc: usize) -> (f64, f64, f64, f64) {
            let t = scores.len() as f64;
            let mut prev = e0;
            let mut drops = 0i64;
            for &s in scores {
                if s < prev {
                    drops += prev - s;
                }
                prev = s;
            }
            let risk_sum: i64 = risks.iter().map(|&r| r as i64).sum();
            (
                (scores[scores.len() - 1] - e0) as f64,
                drops as f64 / t,
                gc as f64 / g as f64,
                risk_sum as f64 / t,
            )
        }

        fn input() -> impl Strategy<Value = (i64, Vec<(i64, u8)>, usize, usize)> {
            (-3i64..=3, prop::collection::vec((-3i64..=3, 0u8..=1), 1..40), 1usize..=4)
                .prop_flat_map(|(e0, turns, g)| (Just(e0), Just(turns), Just(g), 0..=g))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(512))]
            #[test]
            fn metrics_match_independent_fold((e0, turns, g, gc) in input()) {
                let scores: Vec<i64> = turns.iter().map(|t| t.0).collect();
                let risks: Vec<u8> = turns.iter().map(|t| t.1).collect();
                let s = EvalSession::from_scores(
                    "p",
                    e0 as f64,
                    &scores.iter().map(|&x| x as f64).collect::<Vec<_>>(),
                    &risks.iter().map(|&x| x as f64).collect::<Vec<_>>(),
                    g,
                    gc,
                ).unwrap();
                let m = session_metrics(&s).unwrap();
                let (ei, ed, ga, rl) = fold(e0, &scores, &risks, g, gc);
                prop_assert!((m.eis - ei).abs() <= 1e-12);
                prop_assert!((m.eds - ed).abs() <= 1e-12);
                prop_assert!((m.gar - ga).abs() <= 1e-12);
                prop_assert!((m.rls - rl).abs() <= 1e-12);
                prop_assert!(m.eds >= 0.0 && (0.0..=1.0).contains(&m.gar) && (0.0..=1.0).contains(&m.rls));
                let non_decreasing = std::iter::once(e0).chain(scores.iter().copied()).collect::<Vec<_>>().windows(2).all(|w| w[0] <= w[1]);
                prop_assert_eq!(m.eds == 0.0, non_decreasing);
            }
        }
    }
}

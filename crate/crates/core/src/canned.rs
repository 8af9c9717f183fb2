//! Well-formed agent replies and scripts for offline runs, tests and benches.

use crate::backend::{Matcher, Script, ScriptRule};
use crate::emotion::{parse_emotion, EmotionState};
use crate::pipeline::CotRecord;
use crate::prompts::{
    reactions_to_reply, Behavior, CounselorDraft, EmotionAnalysis, PredictedReaction, SafetyVerdict,
    SeekerOutput, Stage, COT_COMPILER, COUNSELOR, EMOTION_TRACKING, LLM_COUNSELOR, REACTION_PREDICTION,
    SAFETY_ANALYSIS, SEEKER,
};
use crate::role_card::{BigFive, EmotionTrigger, Goal, GoalKind, RoleCard};

/// A valid card: a burned-out nurse with one goal of each kind.
pub fn role_card(id: &str, topic: &str, emotion: &str) -> RoleCard {
    RoleCard {
        id: id.to_string(),
        gender: "female".into(),
        age: 29,
        occupation: "nurse".into(),
        big_five: BigFive {
            openness: 0.6,
            conscientiousness: 0.7,
            extraversion: 0.3,
            agreeableness: 0.8,
            neuroticism: 0.65,
        },
        character: "careful, self-critical".into(),
        language_style: "short sentences".into(),
        hobbies: vec!["running".into()],
        problems: "burned out after night shifts".into(),
        inner_monologue: "maybe I'm just not cut out for this".into(),
        topic: topic.to_string(),
        goals: vec![
            Goal {
                kind: GoalKind::Emotion,
                description: "feel less guilty about resting".into(),
                completed: false,
            },
            Goal {
                kind: GoalKind::Advice,
                description: "a plan to talk with the head nurse".into(),
                completed: false,
            },
        ],
        initial_emotion: EmotionState::single(parse_emotion(emotion).unwrap()),
        triggers: vec![EmotionTrigger {
            event: "being told to take another shift".into(),
            resulting_emotion: EmotionState::single(parse_emotion("Anger").unwrap()),
        }],
    }
}

fn state(primary: &str, secondary: &[&str]) -> EmotionState {
    EmotionState::new(
        parse_emotion(primary).expect("known label"),
        secondary.iter().map(|s| parse_emotion(s).expect("known label")).collect(),
    )
    .expect("valid state")
}

pub fn seeker_output(
    primary: &str,
    secondary: &[&str],
    goals: &[GoalKind],
    risk: f64,
    response: &str,
    end: bool,
) -> SeekerOutput {
    SeekerOutput {
        current_emotion: state(primary, secondary),
        triggering_events: Vec::new(),
        completed_goals: goals.to_vec(),
        risk,
        response: response.to_string(),
        end_flag: end,
    }
}

pub fn seeker_reply(primary: &str, goals: &[GoalKind], risk: f64, response: &str, end: bool) -> String {
    seeker_output(primary, &[], goals, risk, response, end).to_reply()
}

pub fn analysis(primary: &str, secondary: &[&str]) -> EmotionAnalysis {
    EmotionAnalysis {
        state: state(primary, secondary),
        recent_shifts: format!("moved toward {primary}"),
        overall_trend: "gradually settling".into(),
        causes: "feeling heard about the work situation".into(),
    }
}

pub fn analysis_reply(primary: &str) -> String {
    analysis(primary, &[]).to_reply()
}

pub fn draft(text: &str) -> CounselorDraft {
    CounselorDraft {
        stage: Stage::Exploration,
        strategies: vec!["empathic reflection".into()],
        draft: text.to_string(),
    }
}

pub fn draft_reply(text: &str) -> String {
    draft(text).to_reply()
}

pub fn reactions() -> Vec<PredictedReaction> {
    Behavior::ALL
        .iter()
        .map(|b| PredictedReaction {
            behavior: *b,
            reaction_text: match b {
                Behavior::Normal => "Yes, that is how it feels.",
                Behavior::Silence => "...",
                Behavior::ExcessiveSentimentality => "I just can't stop crying about it.",
                Behavior::ExplosiveAnger => "You have no idea what this is like!",
            }
            .to_string(),
        })
        .collect()
}

pub fn reactions_reply() -> String {
    reactions_to_reply(&reactions())
}

pub fn verdict_reply(safe: bool) -> String {
    if safe {
        SafetyVerdict::safe().to_reply()
    } else {
        SafetyVerdict {
            safe: false,
            risky_reactions: vec![3],
            suggestions: "soften the tone and validate before asking".into(),
        }
        .to_reply()
    }
}

pub fn cot(response: &str) -> CotRecord {
    CotRecord {
        emotion_shift_tracking: "I notice the seeker moving from Fear toward Serenity.".into(),
        counseling_plan: "I am in the exploration stage; I will reflect feelings.".into(),
        safety_risk_analysis: "If I rush to advice they may withdraw, so I go slowly.".into(),
        integration: "I combine validation with one gentle question.".into(),
        response: response.to_string(),
    }
}

/// Reasoning only, as the CoT compiler returns it.
pub fn cot_compiler_reply() -> String {
    cot("").reasoning_text()
}

pub fn llm_counselor_reply(response: &str) -> String {
    cot(response).to_text()
}

/// Counselor-side rules that answer any number of turns: tracking,
/// drafting and reactions repeat; every safety verdict is safe.
pub fn counselor_rules() -> Vec<ScriptRule> {
    vec![
        ScriptRule::new(Matcher::agent(EMOTION_TRACKING), [analysis_reply("Pensiveness")]).repeating(),
        ScriptRule::new(Matcher::agent(COUNSELOR), [draft_reply("That sounds really heavy. What weighs on you most?")])
            .repeating(),
        ScriptRule::new(Matcher::agent(REACTION_PREDICTION), [reactions_reply()]).repeating(),
        ScriptRule::new(Matcher::agent(SAFETY_ANALYSIS), [verdict_reply(true)]).repeating(),
        ScriptRule::new(Matcher::agent(LLM_COUNSELOR), [llm_counselor_reply("I hear you. Tell me more.")]).repeating(),
        ScriptRule::new(Matcher::agent(COT_COMPILER), [cot_compiler_reply()]).repeating(),
    ]
}

/// A seeker that speaks `turns` times, completes both goals on the last
/// turn and ends with a positive emotion.
pub fn seeker_rule(turns: usize) -> ScriptRule {
    let mut replies = Vec::new();
    for t in 1..=turns {
        let last = t == turns;
        let (emotion, goals): (&str, &[GoalKind]) = if last {
            ("Serenity", &GoalKind::ALL)
        } else {
            ("Pensiveness", &[])
        };
        replies.push(seeker_reply(emotion, goals, 0.0, &format!("This is what I want to say at turn {t}."), last));
    }
    ScriptRule::new(Matcher::agent(SEEKER), replies)
}

/// Seeker plus counselor rules: a complete, happy session of `turns` turns.
pub fn session_script(turns: usize) -> Script {
    let mut rules = vec![seeker_rule(turns)];
    rules.extend(counselor_rules());
    Script::new(rules)
}


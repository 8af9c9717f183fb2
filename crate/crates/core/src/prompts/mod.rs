//! The agents: prompt assembly from template files, one backend call each,
//! and schema-checked parsing of the reply.

mod schema;
mod template;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest, FinishReason};
use crate::emotion::{EmotionGroup, EmotionTerm};
use crate::memory::EmotionMemory;
use crate::role_card::RoleCard;
use crate::transcript::{last_seeker, render_history, Utterance};

pub use schema::{
    extract_json, parse_reactions, reactions_to_reply, strip_end_token, Behavior, CounselorDraft,
    EmotionAnalysis, ParseError, PredictedReaction, SafetyVerdict, SeekerOutput, Stage,
    CARD_DERIVATION, COT_COMPILER, COUNSELOR, EMOTION_TRACKING, END_TOKEN, LLM_COUNSELOR,
    REACTION_PREDICTION, SAFETY_ANALYSIS, SEEKER,
};
pub(crate) use schema::parse_json;
pub use template::{PromptTemplate, TemplateError};

const GUIDELINE: &str = include_str!("../../data/eft_guideline.md");
const USER_SEPARATOR: &str = "===USER===";

const BUILTIN: [(&str, &str); 8] = [
    (SEEKER, include_str!("../../templates/seeker.txt")),
    (EMOTION_TRACKING, include_str!("../../templates/emotion_tracking.txt")),
    (COUNSELOR, include_str!("../../templates/counselor.txt")),
    (REACTION_PREDICTION, include_str!("../../templates/reaction_prediction.txt")),
    (SAFETY_ANALYSIS, include_str!("../../templates/safety_analysis.txt")),
    (LLM_COUNSELOR, include_str!("../../templates/llm_counselor.txt")),
    (COT_COMPILER, include_str!("../../templates/cot_compiler.txt")),
    (CARD_DERIVATION, include_str!("../../templates/card_derivation.txt")),
];

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// System and user halves of one agent's prompt.
#[derive(Debug, Clone)]
pub struct AgentTemplate {
    pub system: PromptTemplate,
    pub user: PromptTemplate,
}

impl AgentTemplate {
    /// Splits a template file on its `===USER===` line.
    pub fn parse(agent: &str, text: &str) -> Result<Self, TemplateError> {
        let (system, user) = text.split_once(USER_SEPARATOR).ok_or_else(|| TemplateError::File {
            path: agent.to_string(),
            reason: format!("missing `{USER_SEPARATOR}` separator"),
        })?;
        Ok(Self {
            system: PromptTemplate::new(format!("{agent}.system"), system.trim())?,
            user: PromptTemplate::new(format!("{agent}.user"), user.trim_start_matches(['\r', '\n']).trim_end())?,
        })
    }

    fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<Vec<ChatMessage>, TemplateError> {
        Ok(vec![
            ChatMessage::system(self.system.render(bindings)?),
            ChatMessage::user(self.user.render(bindings)?),
        ])
    }
}

#[derive(Debug, Clone)]
pub struct Templates {
    by_agent: BTreeMap<String, AgentTemplate>,
    guideline: String,
}

impl Templates {
    pub fn builtin() -> Self {
        let by_agent = BUILTIN
            .iter()
            .map(|(name, text)| {
                let t = AgentTemplate::parse(name, text).expect("shipped templates are well-formed");
                (name.to_string(), t)
            })
            .collect();
        Self {
            by_agent,
            guideline: GUIDELINE.to_string(),
        }
    }

    /// Builtins overridden by any `<agent>.txt` (and `eft_guideline.md`) in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut templates = Self::builtin();
        let read = |path: &Path| {
            std::fs::read_to_string(path).map_err(|e| TemplateError::File {
                path: path.display().to_string(),
                reason: e.to_string(),
            })
        };
        for (name, _) in BUILTIN {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = read(&path)?;
                templates.by_agent.insert(name.to_string(), AgentTemplate::parse(name, &text)?);
            }
        }
        let guideline = dir.join("eft_guideline.md");
        if guideline.exists() {
            templates.guideline = read(&guideline)?;
        }
        Ok(templates)
    }

    pub fn get(&self, agent: &str) -> &AgentTemplate {
        &self.by_agent[agent]
    }

    pub fn guideline(&self) -> &str {
        &self.guideline
    }
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

/// `Joy: Serenity, Joy, Ecstasy` lines for all eight groups.
pub fn vocabulary_listing() -> String {
    EmotionGroup::ALL
        .iter()
        .map(|g| {
            let labels: Vec<&str> = EmotionTerm::all()
                .filter(|t| t.group() == *g)
                .map(|t| t.label())
                .collect();
            format!("{g}: {}", labels.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_reactions(reactions: &[PredictedReaction]) -> String {
    reactions
        .iter()
        .enumerate()
        .map(|(i, r)| format!("[{i}] ({}) {}", r.behavior, r.reaction_text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_analysis(analysis: &EmotionAnalysis) -> String {
    format!(
        "Current emotion: {}\nRecent shifts: {}\nOverall trend: {}\nUnderlying causes: {}",
        analysis.state.describe(),
        analysis.recent_shifts,
        analysis.overall_trend,
        analysis.causes
    )
}

fn render_persona(card: &RoleCard) -> String {
    let b = &card.big_five;
    format!(
        "Gender: {}\nAge: {}\nOccupation: {}\nBig Five: openness {}, conscientiousness {}, extraversion {}, agreeableness {}, neuroticism {}\nCharacter: {}\nLanguage style: {}\nHobbies: {}\nProblems: {}\nInner monologue: {}\nTopic: {}\nHow you feel right now: {}",
        card.gender,
        card.age,
        card.occupation,
        b.openness,
        b.conscientiousness,
        b.extraversion,
        b.agreeableness,
        b.neuroticism,
        card.character,
        card.language_style,
        card.hobbies.join(", "),
        card.problems,
        card.inner_monologue,
        card.topic,
        card.initial_emotion.describe(),
    )
}

/// Bundles templates and prompt options; stateless apart from that.
#[derive(Debug, Clone)]
pub struct Agents {
    templates: Arc<Templates>,
    /// Whether the safety reviewer sees the dialogue history.
    pub safety_sees_history: bool,
    pub max_tokens: Option<u32>,
}

impl Default for Agents {
    fn default() -> Self {
        Self::new(Templates::builtin())
    }
}

impl Agents {
    pub fn new(templates: Templates) -> Self {
        Self {
            templates: Arc::new(templates),
            safety_sees_history: true,
            max_tokens: None,
        }
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    /// Renders an agent's messages without calling a backend.
    pub fn render(&self, agent: &str, bindings: &BTreeMap<&str, String>) -> Result<Vec<ChatMessage>, TemplateError> {
        self.templates.get(agent).render(bindings)
    }

    fn call(
        &self,
        backend: &dyn ChatBackend,
        agent: &str,
        messages: Vec<ChatMessage>,
    ) -> Result<String, AgentError> {
        let mut request = ChatRequest::new(messages).with_agent(agent);
        request.max_tokens = self.max_tokens;
        let resp = backend.complete(&request)?;
        if resp.finish_reason == FinishReason::Error {
            return Err(BackendError::Decode(format!("{agent} completion finished with an error")).into());
        }
        Ok(resp.content)
    }

    pub fn seeker_messages(&self, card: &RoleCard, history: &[Utterance]) -> Result<Vec<ChatMessage>, TemplateError> {
        let goals = card
            .goals
            .iter()
            .map(|g| format!("- [{}] {}", g.kind, g.description))
            .collect::<Vec<_>>()
            .join("\n");
        let triggers = if card.triggers.is_empty() {
            "(none noted)".to_string()
        } else {
            card.triggers
                .iter()
                .map(|t| format!("- {} -> {}", t.event, t.resulting_emotion.describe()))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let turn = history.iter().filter(|u| u.speaker == crate::transcript::Speaker::Seeker).count() + 1;
        let b = BTreeMap::from([
            ("persona", render_persona(card)),
            ("goals", goals),
            ("triggers", triggers),
            ("vocabulary", vocabulary_listing()),
            ("history", render_history(history)),
            ("turn", turn.to_string()),
        ]);
        self.render(SEEKER, &b)
    }

    pub fn run_seeker(
        &self,
        card: &RoleCard,
        history: &[Utterance],
        backend: &dyn ChatBackend,
    ) -> Result<SeekerOutput, AgentError> {
        let messages = self.seeker_messages(card, history)?;
        let reply = self.call(backend, SEEKER, messages)?;
        Ok(SeekerOutput::parse(&reply)?)
    }

    pub fn tracking_messages(
        &self,
        history: &[Utterance],
        memory: &EmotionMemory,
        window: usize,
    ) -> Result<Vec<ChatMessage>, AgentError> {
        let latest = last_seeker(history)
            .ok_or_else(|| AgentError::Precondition("history has no seeker turn".into()))?;
        let b = BTreeMap::from([
            ("vocabulary", vocabulary_listing()),
            ("memory", memory.render(window)),
            ("history", render_history(history)),
            ("latest", latest.text.clone()),
        ]);
        Ok(self.render(EMOTION_TRACKING, &b)?)
    }

    pub fn run_emotion_tracking(
        &self,
        history: &[Utterance],
        memory: &EmotionMemory,
        window: usize,
        backend: &dyn ChatBackend,
    ) -> Result<EmotionAnalysis, AgentError> {
        let messages = self.tracking_messages(history, memory, window)?;
        let reply = self.call(backend, EMOTION_TRACKING, messages)?;
        Ok(EmotionAnalysis::parse(&reply)?)
    }

    pub fn counselor_messages(
        &self,
        history: &[Utterance],
        analysis: Option<&EmotionAnalysis>,
        suggestions: Option<&str>,
    ) -> Result<Vec<ChatMessage>, TemplateError> {
        let analysis_block = analysis
            .map(|a| format!("\nEmotion analysis of the seeker:\n{}\n", render_analysis(a)))
            .unwrap_or_default();
        let suggestions_block = suggestions
            .map(|s| {
                format!("\nYour previous draft was judged risky. Revise it following these safety suggestions:\n{s}\n")
            })
            .unwrap_or_default();
        let b = BTreeMap::from([
            ("guideline", self.templates.guideline().to_string()),
            ("history", render_history(history)),
            ("analysis_block", analysis_block),
            ("suggestions_block", suggestions_block),
        ]);
        self.render(COUNSELOR, &b)
    }

    pub fn run_counselor(
        &self,
        history: &[Utterance],
        analysis: Option<&EmotionAnalysis>,
        suggestions: Option<&str>,
        backend: &dyn ChatBackend,
    ) -> Result<CounselorDraft, AgentError> {
        let messages = self.counselor_messages(history, analysis, suggestions)?;
        let reply = self.call(backend, COUNSELOR, messages)?;
        Ok(CounselorDraft::parse(&reply)?)
    }

    /// Built from the history and draft only; the role card never reaches
    /// this agent.
    pub fn reaction_messages(
        &self,
        history: &[Utterance],
        draft: &str,
        behaviors: &[Behavior],
    ) -> Result<Vec<ChatMessage>, AgentError> {
        if draft.trim().is_empty() {
            return Err(AgentError::Precondition("empty draft".into()));
        }
        if behaviors.is_empty() {
            return Err(AgentError::Precondition("no behaviors requested".into()));
        }
        let behaviors = behaviors.iter().map(|b| b.as_str()).collect::<Vec<_>>().join(", ");
        let b = BTreeMap::from([
            ("history", render_history(history)),
            ("draft", draft.to_string()),
            ("behaviors", behaviors),
        ]);
        Ok(self.render(REACTION_PREDICTION, &b)?)
    }

    pub fn run_reaction_prediction(
        &self,
        history: &[Utterance],
        draft: &str,
        behaviors: &[Behavior],
        backend: &dyn ChatBackend,
    ) -> Result<Vec<PredictedReaction>, AgentError> {
        let messages = self.reaction_messages(history, draft, behaviors)?;
        let reply = self.call(backend, REACTION_PREDICTION, messages)?;
        Ok(parse_reactions(&reply, behaviors)?)
    }

    pub fn safety_messages(
        &self,
        history: &[Utterance],
        draft: &str,
        reactions: &[PredictedReaction],
    ) -> Result<Vec<ChatMessage>, AgentError> {
        if reactions.is_empty() {
            return Err(AgentError::Precondition("no predicted reactions".into()));
        }
        let history_block = if self.safety_sees_history {
            format!("Conversation so far:\n{}\n\n", render_history(history))
        } else {
            String::new()
        };
        let b = BTreeMap::from([
            ("history_block", history_block),
            ("draft", draft.to_string()),
            ("reactions", render_reactions(reactions)),
        ]);
        Ok(self.render(SAFETY_ANALYSIS, &b)?)
    }

    pub fn run_safety_analysis(
        &self,
        history: &[Utterance],
        draft: &str,
        reactions: &[PredictedReaction],
        backend: &dyn ChatBackend,
    ) -> Result<SafetyVerdict, AgentError> {
        let messages = self.safety_messages(history, draft, reactions)?;
        let reply = self.call(backend, SAFETY_ANALYSIS, messages)?;
        Ok(SafetyVerdict::parse(&reply, reactions.len())?)
    }

    pub fn llm_counselor_messages(&self, history: &[Utterance]) -> Result<Vec<ChatMessage>, TemplateError> {
        let b = BTreeMap::from([
            ("guideline", self.templates.guideline().to_string()),
            ("history", render_history(history)),
        ]);
        self.render(LLM_COUNSELOR, &b)
    }

    pub(crate) fn complete_raw(
        &self,
        backend: &dyn ChatBackend,
        agent: &str,
        messages: Vec<ChatMessage>,
    ) -> Result<String, AgentError> {
        self.call(backend, agent, messages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Matcher, Script, ScriptRule, ScriptedBackend};
    use crate::emotion::parse_emotion;
    use crate::role_card::fixtures::card;

    fn history() -> Vec<Utterance> {
        vec![
            Utterance::seeker("I can't sleep before my shifts."),
            Utterance::counselor("That sounds exhausting."),
            Utterance::seeker("It is. I feel like I'm failing everyone."),
        ]
    }

    #[test]
    fn builtin_templates_parse_and_bind() {
        let t = Templates::builtin();
        assert!(t.get(COUNSELOR).user.required_placeholders().contains("suggestions_block"));
        assert!(t.get(REACTION_PREDICTION).system.required_placeholders().is_empty());
        assert!(t.guideline().contains("Processing core painful emotions"));
    }

    #[test]
    fn template_dir_overrides() {
        let dir = std::env::temp_dir().join(format!("counsel-tpl-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("counselor.txt"), "SYS {{guideline}}\n===USER===\nU {{history}}{{analysis_block}}{{suggestions_block}}").unwrap();
        std::fs::write(dir.join("eft_guideline.md"), "custom guideline").unwrap();
        let agents = Agents::new(Templates::load_dir(&dir).unwrap());
        let msgs = agents.counselor_messages(&history(), None, None).unwrap();
        assert_eq!(msgs[0].content, "SYS custom guideline");
        std::fs::write(dir.join("seeker.txt"), "no separator").unwrap();
        assert!(Templates::load_dir(&dir).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn seeker_prompt_carries_card_and_turn() {
        let agents = Agents::default();
        let c = card("c1", "Career", "Sadness");
        let msgs = agents.seeker_messages(&c, &history()).unwrap();
        assert!(msgs[0].content.contains("nurse"));
        assert!(msgs[0].content.contains("a plan to talk with the head nurse"));
        assert!(msgs[1].content.contains("turn number 3"));
    }

    #[test]
    fn run_seeker_parses_goal_reference() {
        let backend = ScriptedBackend::from_replies([
            r#"```json
{"current_emotion":{"primary":"Serenity"},"completed_goals":["advice"],"response":"That plan helps."}
```"#,
        ]);
        let out = Agents::default()
            .run_seeker(&card("c1", "Career", "Sadness"), &history(), &backend)
            .unwrap();
        assert_eq!(out.completed_goals, vec![crate::role_card::GoalKind::Advice]);
        assert_eq!(backend.requests()[0].agent.as_deref(), Some(SEEKER));
    }

    #[test]
    fn tracking_prompt_with_empty_memory_has_marker() {
        let backend = ScriptedBackend::from_replies([
            r#"{"state":{"primary":"Fear","secondary":["Pensiveness"]},"recent_shifts":"","overall_trend":"","causes":""}"#,
        ]);
        let memory = EmotionMemory::new("s");
        let a = Agents::default()
            .run_emotion_tracking(&history(), &memory, 5, &backend)
            .unwrap();
        assert_eq!(a.state.primary(), parse_emotion("Fear").unwrap());
        assert_eq!(a.state.secondary(), &[parse_emotion("Pensiveness").unwrap()]);
        let prompt = backend.requests()[0].text();
        assert!(prompt.contains(crate::memory::NO_RECORDS_MARKER));
        assert!(prompt.contains("It is. I feel like I'm failing everyone."));
    }

    #[test]
    fn tracking_requires_seeker_turn() {
        let backend = ScriptedBackend::from_replies(["{}"]);
        let err = Agents::default()
            .run_emotion_tracking(&[], &EmotionMemory::new("s"), 5, &backend)
            .unwrap_err();
        assert!(matches!(err, AgentError::Precondition(_)));
        assert_eq!(backend.request_count(), 0);
    }

    #[test]
    fn counselor_prompt_binds_optional_blocks() {
        let agents = Agents::default();
        let plain = agents.counselor_messages(&history(), None, None).unwrap();
        assert!(!plain[1].content.contains("Emotion analysis"));
        assert!(!plain[1].content.contains("safety suggestions"));
        assert!(plain[0].content.contains("Emotional access and regulation"));
        let with = agents
            .counselor_messages(&history(), None, Some("soften the tone"))
            .unwrap();
        assert!(with[1].content.contains("safety suggestions:\nsoften the tone"));
    }

    #[test]
    fn counselor_rejects_unknown_stage() {
        let backend = ScriptedBackend::from_replies([r#"{"stage":"diagnosis","strategies":["x"],"draft":"y"}"#]);
        let err = Agents::default()
            .run_counselor(&history(), None, None, &backend)
            .unwrap_err();
        assert!(matches!(err, AgentError::Parse(_)));
    }

    #[test]
    fn reaction_prompt_has_no_card_values() {
        let c = card("card-77", "Career", "Sadness");
        let msgs = Agents::default()
            .reaction_messages(&history(), "Would you tell me more?", &Behavior::ALL)
            .unwrap();
        let text: String = msgs.iter().map(|m| m.content.as_str()).collect();
        for v in c.field_values() {
            assert!(!text.contains(&v), "leaked `{v}`");
        }
    }

    #[test]
    fn safety_history_is_optional() {
        let mut agents = Agents::default();
        let reactions = vec![PredictedReaction {
            behavior: Behavior::Silence,
            reaction_text: "...".into(),
        }];
        let with = agents.safety_messages(&history(), "d", &reactions).unwrap();
        assert!(with[1].content.contains("failing everyone"));
        agents.safety_sees_history = false;
        let without = agents.safety_messages(&history(), "d", &reactions).unwrap();
        assert!(!without[1].content.contains("failing everyone"));
        assert!(agents.safety_messages(&history(), "d", &[]).is_err());
    }

    #[test]
    fn error_finish_reason_is_a_backend_error() {
        let script = Script::default().rule(ScriptRule {
            matcher: Matcher::default(),
            responses: [crate::backend::ChatResponse {
                content: String::new(),
                finish_reason: FinishReason::Error,
                usage: Default::default(),
            }]
            .into(),
            repeat_last: false,
        });
        let backend = ScriptedBackend::new(script);
        let err = Agents::default()
            .run_counselor(&history(), None, None, &backend)
            .unwrap_err();
        assert!(matches!(err, AgentError::Backend(_)));
    }
}

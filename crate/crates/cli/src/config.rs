//! Engine configuration: a TOML file whose values command-line flags may
//! override. Relative paths resolve against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use counsel_core::backend::{
    BackendProvider, OpenAiCompatible, OpenAiConfig, RetryPolicy, Script, ScriptedProvider, SharedBackend,
};
use counsel_core::emotion::{EmotionGroup, ScorePolicy, ValenceTable};
use counsel_core::memory::Clock;
use counsel_core::pipeline::{Pipeline, PipelineConfig};
use counsel_core::prompts::{Agents, Templates};
use counsel_core::role_card::CellGranularity;

pub const DEFAULT_PROFILE: &str = "default";

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendProfile {
    Openai {
        base_url: String,
        model: String,
        /// Name of the environment variable holding the key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        max_retries: u32,
    },
    Scripted {
        script: PathBuf,
        #[serde(default)]
        delay_ms: Option<u64>,
    },
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    3
}

fn default_profile() -> String {
    DEFAULT_PROFILE.to_string()
}

/// Which backend profile each party uses.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Roles {
    pub counselor: String,
    pub seeker: String,
    pub compiler: String,
    pub deriver: String,
}

impl Default for Roles {
    fn default() -> Self {
        Self {
            counselor: default_profile(),
            seeker: default_profile(),
            compiler: default_profile(),
            deriver: default_profile(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSettings {
    pub safety_sees_history: bool,
    pub max_tokens: Option<u32>,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            safety_sees_history: true,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSettings {
    pub max_turns: u32,
    /// 0 means one worker per core.
    pub parallelism: usize,
    pub out_dir: PathBuf,
    /// Draw this many cards by stratified sampling before running.
    pub sample: Option<usize>,
    pub granularity: CellGranularity,
    pub seed: u64,
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        Self {
            max_turns: 20,
            parallelism: 0,
            out_dir: PathBuf::from("out"),
            sample: None,
            granularity: CellGranularity::Group,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub n_cards: Option<usize>,
    pub seed: u64,
    pub max_turns: u32,
    pub score_policy: ScorePolicy,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_cards: None,
            seed: 0,
            max_turns: 10,
            score_policy: ScorePolicy::PrimaryOnly,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EmotionSettings {
    /// Sign overrides on top of the default table.
    pub valence: BTreeMap<EmotionGroup, i8>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub backends: BTreeMap<String, BackendProfile>,
    pub roles: Roles,
    pub agents: AgentSettings,
    pub pipeline: PipelineConfig,
    pub synthesis: SynthesisSettings,
    pub eval: EvalSettings,
    pub emotion: EmotionSettings,
    pub clock: Clock,
    pub templates_dir: Option<PathBuf>,
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: EngineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for profile in self.backends.values_mut() {
            if let BackendProfile::Scripted { script, .. } = profile {
                fix(script);
            }
        }
        fix(&mut self.synthesis.out_dir);
        if let Some(dir) = &mut self.templates_dir {
            fix(dir);
        }
    }

    /// Fails when a referenced profile, script or template directory is
    /// missing or the pipeline settings are inconsistent.
    pub fn check(&self, roles: &[&str]) -> Result<()> {
        if let Err(e) = self.pipeline.validate() {
            bail!("pipeline config: {e}");
        }
        for role in roles {
            let name = self.role_profile(role)?;
            let profile = self.profile(name)?;
            if let BackendProfile::Scripted { script, .. } = profile {
                if !script.is_file() {
                    bail!("script for profile `{name}` not found: {}", script.display());
                }
            }
        }
        if let Some(dir) = &self.templates_dir {
            if !dir.is_dir() {
                bail!("templates_dir not found: {}", dir.display());
            }
        }
        Ok(())
    }

    fn role_profile(&self, role: &str) -> Result<&str> {
        Ok(match role {
            "counselor" => &self.roles.counselor,
            "seeker" => &self.roles.seeker,
            "compiler" => &self.roles.compiler,
            "deriver" => &self.roles.deriver,
            other => bail!("unknown role `{other}`"),
        })
    }

    fn profile(&self, name: &str) -> Result<&BackendProfile> {
        self.backends
            .get(name)
            .with_context(|| format!("no backend profile named `{name}` in [backends]"))
    }

    pub fn provider(&self, role: &str) -> Result<Arc<dyn BackendProvider>> {
        let name = self.role_profile(role)?;
        match self.profile(name)? {
            BackendProfile::Openai {
                base_url,
                model,
                api_key_env,
                timeout_secs,
                max_retries,
            } => {
                let api_key = match api_key_env {
                    Some(var) => Some(
                        std::env::var(var)
                            .with_context(|| format!("profile `{name}` reads its key from ${var}, which is unset"))?,
                    ),
                    None => None,
                };
                let config = OpenAiConfig {
                    api_key,
                    timeout: Duration::from_secs(*timeout_secs),
                    retry: RetryPolicy {
                        max_retries: *max_retries,
                        ..RetryPolicy::default()
                    },
                    ..OpenAiConfig::new(base_url.clone(), model.clone())
                };
                let client = OpenAiCompatible::new(config).with_context(|| format!("building client `{name}`"))?;
                Ok(Arc::new(SharedBackend(Arc::new(client))))
            }
            BackendProfile::Scripted { script, delay_ms } => {
                let text = std::fs::read_to_string(script)
                    .with_context(|| format!("reading script {}", script.display()))?;
                let script: Script =
                    serde_json::from_str(&text).with_context(|| format!("parsing script {}", script.display()))?;
                let mut provider = ScriptedProvider::new(script);
                if let Some(ms) = delay_ms {
                    provider = provider.with_delay(Duration::from_millis(*ms));
                }
                Ok(Arc::new(provider))
            }
        }
    }

    pub fn valence(&self) -> ValenceTable {
        ValenceTable::default().with_overrides(self.emotion.valence.iter().map(|(g, s)| (*g, *s)))
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        let templates = match &self.templates_dir {
            Some(dir) => Templates::load_dir(dir).with_context(|| format!("loading templates from {}", dir.display()))?,
            None => Templates::builtin(),
        };
        let mut agents = Agents::new(templates);
        agents.safety_sees_history = self.agents.safety_sees_history;
        agents.max_tokens = self.agents.max_tokens;
        Ok(Pipeline::new(agents, self.pipeline.clone()).with_clock(self.clock))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_file() {
        let cfg = EngineConfig::default();
        assert_eq!(cfg.synthesis.max_turns, 20);
        assert!(cfg.pipeline.em_enabled && cfg.pipeline.rc_enabled);
        assert!(cfg.provider("counselor").is_err());
    }

    #[test]
    fn parses_profiles_and_resolves_paths() {
        let text = r#"
            templates_dir = "tpl"
            clock = { kind = "fixed", at_ms = 5 }

            [backends.default]
            kind = "scripted"
            script = "script.json"

            [backends.remote]
            kind = "openai"
            base_url = "http://localhost:9/v1"
            model = "m"
            api_key_env = "SOME_KEY"

            [roles]
            counselor = "remote"

            [pipeline]
            mode = "llm"
            max_regenerations = 2

            [emotion.valence]
            Surprise = 1
        "#;
        let mut cfg: EngineConfig = toml::from_str(text).unwrap();
        cfg.resolve_paths(Path::new("/etc/x"));
        assert_eq!(cfg.templates_dir.as_deref(), Some(Path::new("/etc/x/tpl")));
        assert_eq!(cfg.roles.seeker, "default");
        assert_eq!(cfg.pipeline.max_regenerations, 2);
        assert_eq!(cfg.clock, Clock::Fixed(5));
        assert_eq!(cfg.valence().sign(EmotionGroup::Surprise), 1);
        match &cfg.backends["default"] {
            BackendProfile::Scripted { script, .. } => assert_eq!(script, Path::new("/etc/x/script.json")),
            other => panic!("{other:?}"),
        }
        assert!(cfg.check(&["seeker"]).is_err());
    }

    #[test]
    fn documented_example_parses() {
        let doc = include_str!("../../../docs/formats.md");
        let start = doc.find("```toml\n").unwrap() + "```toml\n".len();
        let end = start + doc[start..].find("```").unwrap();
        let cfg: EngineConfig = toml::from_str(&doc[start..end]).unwrap();
        assert_eq!(cfg.backends.len(), 2);
        assert_eq!(cfg.pipeline, PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<EngineConfig>("[synthesis]\nmax_turnz = 3").is_err());
    }
}

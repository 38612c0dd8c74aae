//! The run configuration file. Relative paths are resolved against the
//! directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uxsim_core::agent::AgentSettings;
use uxsim_core::browser::BrowserConfig;
use uxsim_core::interview::InterviewSettings;
use uxsim_core::llm::LlmConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmMode {
    #[default]
    Stub,
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    #[serde(default)]
    pub mode: LlmMode,
    /// Stub mode only; the bundled jacket-purchase script when absent.
    #[serde(default)]
    pub stub_script: Option<PathBuf>,
    /// Record and replay modes.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    #[serde(default)]
    pub provider: LlmConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    /// Start the bundled shop and test browser in-process and use them.
    #[serde(default)]
    pub fixture: bool,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub recipe_path: Option<PathBuf>,
    #[serde(default)]
    pub browser: Option<BrowserConfig>,
}

fn default_intent() -> String {
    "buy a jacket".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaSection {
    #[serde(default)]
    pub spec_path: Option<PathBuf>,
    #[serde(default)]
    pub personas_path: Option<PathBuf>,
    /// For personas without an intent of their own.
    #[serde(default = "default_intent")]
    pub intent: String,
}

impl Default for PersonaSection {
    fn default() -> Self {
        PersonaSection {
            spec_path: None,
            personas_path: None,
            intent: default_intent(),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    /// Defaults to `batch-{seed}`.
    #[serde(default)]
    pub batch_id: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out(),
            batch_id: None,
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub agent: AgentSettings,
    #[serde(default)]
    pub interview: InterviewSettings,
    #[serde(default)]
    pub target: TargetSection,
    #[serde(default)]
    pub personas: PersonaSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn must_exist(field: &str, p: &Option<PathBuf>) -> Result<(), CliError> {
    match p {
        Some(path) if !path.exists() => Err(CliError::Config(format!("{field}: {} does not exist", path.display()))),
        _ => Ok(()),
    }
}

impl RunConfig {
    /// Parses `path`, reporting the failing field by its dotted path.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            CliError::Config(format!("{}: {field}: {}", path.display(), e.inner()))
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve_paths(&base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.llm.stub_script);
        resolve(base, &mut self.llm.transcript);
        resolve(base, &mut self.target.recipe_path);
        resolve(base, &mut self.personas.spec_path);
        resolve(base, &mut self.personas.personas_path);
        resolve(base, &mut self.agent.prompts_dir);
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
    }

    /// Checks everything that does not depend on the command.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |m: String| Err(CliError::Config(m));
        if self.parallelism < 1 {
            return cfg("parallelism: must be at least 1".into());
        }
        self.agent.validate().map_err(|e| CliError::Config(format!("agent: {e}")))?;
        match self.llm.mode {
            LlmMode::Record | LlmMode::Replay if self.llm.transcript.is_none() => {
                return cfg("llm.transcript: required in record and replay modes".into())
            }
            LlmMode::Live | LlmMode::Record if self.llm.provider.model.is_none() => {
                return cfg("llm.provider.model: required for live calls".into())
            }
            _ => {}
        }
        must_exist("llm.stub_script", &self.llm.stub_script)?;
        if self.llm.mode == LlmMode::Replay {
            must_exist("llm.transcript", &self.llm.transcript)?;
        }
        must_exist("target.recipe_path", &self.target.recipe_path)?;
        must_exist("personas.spec_path", &self.personas.spec_path)?;
        must_exist("personas.personas_path", &self.personas.personas_path)?;
        must_exist("agent.prompts_dir", &self.agent.prompts_dir)?;
        if self.personas.intent.trim().is_empty() {
            return cfg("personas.intent: must not be empty".into());
        }
        Ok(())
    }

    /// Extra checks for commands that drive a browser.
    pub fn validate_target(&self) -> Result<(), CliError> {
        if !self.target.fixture {
            if self.target.url.is_none() {
                return Err(CliError::Config("target.url: required unless target.fixture is true".into()));
            }
            if self.target.recipe_path.is_none() {
                return Err(CliError::Config(
                    "target.recipe_path: required unless target.fixture is true".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn batch_id(&self) -> String {
        self.output.batch_id.clone().unwrap_or_else(|| format!("batch-{}", self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_paths_in_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"llm": {"mode": "psychic"}}"#).unwrap();
        let e = RunConfig::load(&p).unwrap_err().to_string();
        assert!(e.contains("llm.mode"), "{e}");
        std::fs::write(&p, r#"{"agent": {"max_step": 3}}"#).unwrap();
        let e = RunConfig::load(&p).unwrap_err().to_string();
        assert!(e.contains("max_step"), "{e}");
    }

    #[test]
    fn paths_resolve_and_must_exist() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"llm": {"stub_script": "s.json"}, "target": {"fixture": true}}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.llm.stub_script.as_deref(), Some(dir.path().join("s.json").as_path()));
        assert!(c.validate().unwrap_err().to_string().contains("llm.stub_script"));
        std::fs::write(dir.path().join("s.json"), "{}").unwrap();
        c.validate().unwrap();
        assert_eq!(c.batch_id(), "batch-0");
    }

    #[test]
    fn target_needs_url_and_recipe_without_fixture() {
        let c = RunConfig::default();
        assert!(c.validate_target().unwrap_err().to_string().contains("target.url"));
    }
}

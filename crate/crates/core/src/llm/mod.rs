//! Provider-agnostic chat completion and embeddings: a live HTTP provider,
//! a scripted stub, and transcript record/replay.

pub mod embed;
mod gateway;
mod provider;
pub mod ratelimit;
pub mod stub;
mod transcript;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use embed::{hash_embed, HASH_DIM};
pub use gateway::{CapturedPrompt, Gateway, GatewayMode};
pub use provider::{OpenAiProvider, Provider};
pub use stub::StubScript;
pub use transcript::TranscriptEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// The reply shape a caller will parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    FreeText,
    StructuredAction,
    StructuredPersona,
    IntegerScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    /// Which prompt this is (`plan`, `act`, `importance`, ...). Routes stub
    /// replies and labels captures; not part of the digest.
    #[serde(default)]
    pub purpose: String,
    pub system: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub expect: Expect,
}

impl CompletionRequest {
    pub fn new(purpose: &str, system: impl Into<String>, user: impl Into<String>, expect: Expect) -> Self {
        CompletionRequest {
            purpose: purpose.to_string(),
            system: system.into(),
            messages: vec![Message::user(user)],
            temperature: 0.7,
            max_tokens: 1024,
            expect,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("messages must not be empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over system, messages, temperature and expect.
    pub fn digest(&self) -> String {
        let canonical = serde_json::json!({
            "system": self.system,
            "messages": self.messages.iter().map(|m| (m.role, &m.content)).collect::<Vec<_>>(),
            "temperature": self.temperature,
            "expect": self.expect,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }

    /// All prompt text, for substring matching.
    pub fn full_text(&self) -> String {
        let mut s = self.system.clone();
        for m in &self.messages {
            s.push('\n');
            s.push_str(&m.content);
        }
        s
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("provider unreachable after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned {status}: {message}")]
    Provider { status: u16, message: String },
    #[error("replay miss: no recorded reply for {purpose} request {digest}")]
    ReplayMiss { digest: String, purpose: String },
    #[error("stub script has no reply left for purpose {0:?}")]
    StubExhausted(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transcript: {0}")]
    Transcript(String),
    #[error("configuration: {0}")]
    Config(String),
}

fn default_endpoint() -> String {
    "https://api.openai.com/v1".into()
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_temperature() -> f64 {
    0.7
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_secs() -> u64 {
    120
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Offline hash embedding.
    #[default]
    Hash,
    /// The provider's embeddings endpoint.
    Provider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    /// Required for live and record modes.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub requests_per_second: Option<f64>,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub embeddings: EmbeddingSource,
    #[serde(default)]
    pub embedding_model: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_max_tokens_and_purpose() {
        let a = CompletionRequest::new("plan", "sys", "hello", Expect::FreeText);
        let mut b = a.clone();
        b.max_tokens = 7;
        b.purpose = "other".into();
        assert_eq!(a.digest(), b.digest());
        b.temperature = 0.1;
        assert_ne!(a.digest(), b.digest());
        let mut c = a.clone();
        c.expect = Expect::IntegerScore;
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn empty_messages_rejected() {
        let mut r = CompletionRequest::new("p", "s", "u", Expect::FreeText);
        r.messages.clear();
        assert!(r.validate().is_err());
    }
}

//! Browser connector: drives a WebDriver session, turns the live page into
//! simplified observations and executes abstract actions on named elements.

mod session;
pub mod webdriver;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::recipe::ParseError;

pub use session::BrowserSession;
pub use webdriver::{ElementId, RetryPolicy, WebDriverClient};

/// What the agent sees after each step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub url: String,
    pub page: String,
    pub clickables: Vec<String>,
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    Type,
    TypeAndSubmit,
    Clear,
    Back,
    Terminate,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::Type => "type",
            ActionKind::TypeAndSubmit => "type_and_submit",
            ActionKind::Clear => "clear",
            ActionKind::Back => "back",
            ActionKind::Terminate => "terminate",
        }
    }

    pub fn needs_target(self) -> bool {
        matches!(
            self,
            ActionKind::Click | ActionKind::Type | ActionKind::TypeAndSubmit | ActionKind::Clear
        )
    }

    pub fn needs_text(self) -> bool {
        matches!(self, ActionKind::Type | ActionKind::TypeAndSubmit)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default)]
    pub description: String,
}

impl AgentAction {
    pub fn new(kind: ActionKind, description: impl Into<String>) -> Self {
        AgentAction {
            kind,
            target: None,
            text: None,
            description: description.into(),
        }
    }

    pub fn click(target: &str, description: impl Into<String>) -> Self {
        AgentAction {
            target: Some(target.into()),
            ..Self::new(ActionKind::Click, description)
        }
    }

    pub fn type_text(kind: ActionKind, target: &str, text: &str, description: impl Into<String>) -> Self {
        AgentAction {
            target: Some(target.into()),
            text: Some(text.into()),
            ..Self::new(kind, description)
        }
    }

    /// Checks field presence for the action kind.
    pub fn validate(&self) -> Result<(), String> {
        match &self.target {
            Some(t) if t.trim().is_empty() => return Err("target must not be empty".into()),
            None if self.kind.needs_target() => {
                return Err(format!("a {} action needs a target", self.kind))
            }
            _ => {}
        }
        if self.kind.needs_text() && self.text.is_none() {
            return Err(format!("a {} action needs text", self.kind));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionResult {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    pub resulting_url: String,
}

impl ActionResult {
    pub fn success(url: String) -> Self {
        ActionResult {
            ok: true,
            error_message: None,
            resulting_url: url,
        }
    }

    pub fn failure(message: String, url: String) -> Self {
        ActionResult {
            ok: false,
            error_message: Some(message),
            resulting_url: url,
        }
    }
}

#[derive(Debug, Error)]
pub enum BrowserError {
    #[error("browser endpoint unreachable after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("webdriver command {command} failed ({status} {error}): {message}")]
    Protocol {
        command: String,
        status: u16,
        error: String,
        message: String,
    },
    #[error("page snapshot failed after {attempts} attempt(s): {message}")]
    Snapshot { attempts: u32, message: String },
    #[error("browser session is closed")]
    Closed,
    #[error("out of order: {0}")]
    OutOfOrder(&'static str),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("writing screenshot: {0}")]
    Io(#[from] std::io::Error),
}

impl BrowserError {
    pub(crate) fn is_stale(&self) -> bool {
        matches!(self, BrowserError::Protocol { error, .. } if error == "stale element reference")
    }
}

fn default_capabilities() -> Value {
    json!({
        "browserName": "chrome",
        "goog:chromeOptions": { "args": ["--headless=new", "--window-size=1280,2000"] }
    })
}

fn default_endpoint() -> String {
    "http://127.0.0.1:9515".into()
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

fn default_timeout_secs() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrowserConfig {
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_capabilities")]
    pub capabilities: Value,
    /// Transport retries per command.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Retries when reading the page source fails.
    #[serde(default = "default_retries")]
    pub snapshot_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl Default for BrowserConfig {
    fn default() -> Self {
        BrowserConfig {
            endpoint: default_endpoint(),
            capabilities: default_capabilities(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            snapshot_retries: default_retries(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

impl BrowserConfig {
    pub fn with_endpoint(endpoint: impl Into<String>) -> Self {
        BrowserConfig {
            endpoint: endpoint.into(),
            ..Default::default()
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.retries,
            initial_backoff: Duration::from_millis(self.backoff_ms),
        }
    }

    pub fn snapshot_policy(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.snapshot_retries,
            initial_backoff: Duration::from_millis(self.backoff_ms),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_presence_per_kind() {
        assert!(AgentAction::new(ActionKind::Back, "").validate().is_ok());
        assert!(AgentAction::new(ActionKind::Click, "").validate().is_err());
        let mut a = AgentAction::click("  ", "");
        assert!(a.validate().is_err());
        a.target = Some("x".into());
        assert!(a.validate().is_ok());
        let mut t = AgentAction::type_text(ActionKind::TypeAndSubmit, "search", "q", "");
        assert!(t.validate().is_ok());
        t.text = None;
        assert!(t.validate().is_err());
    }

    #[test]
    fn action_json_shape() {
        let a = AgentAction::type_text(ActionKind::TypeAndSubmit, "search", "woman's jacket", "d");
        let v = serde_json::to_value(&a).unwrap();
        assert_eq!(v["kind"], "type_and_submit");
        assert_eq!(serde_json::from_value::<AgentAction>(v).unwrap(), a);
    }
}

//! The persisted result of one simulated session and its text exports.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::browser::{ActionResult, AgentAction};
use crate::memory::{MemoryKind, MemoryPiece};
use crate::money::Money;
use crate::persona::Persona;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Purchased,
    Terminated,
    MaxStepsReached,
    Error,
}

impl OutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::Purchased => "purchased",
            OutcomeKind::Terminated => "terminated",
            OutcomeKind::MaxStepsReached => "max_steps_reached",
            OutcomeKind::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurchasedItem {
    pub name: String,
    pub price: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub kind: OutcomeKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub items: Vec<PurchasedItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<Money>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl SessionOutcome {
    pub fn purchased(items: Vec<PurchasedItem>) -> Self {
        let total = items.iter().map(|i| i.price).sum();
        SessionOutcome {
            kind: OutcomeKind::Purchased,
            items,
            total: Some(total),
            detail: None,
        }
    }

    pub fn other(kind: OutcomeKind, detail: Option<String>) -> Self {
        debug_assert_ne!(kind, OutcomeKind::Purchased);
        SessionOutcome {
            kind,
            items: vec![],
            total: None,
            detail,
        }
    }

    pub fn error(detail: impl Into<String>) -> Self {
        Self::other(OutcomeKind::Error, Some(detail.into()))
    }
}

/// One executed action, numbered from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub index: usize,
    pub action: AgentAction,
    pub result: ActionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub persona: Persona,
    pub config: AgentConfig,
    pub target_url: String,
    pub recipe_id: String,
    pub actions: Vec<ActionRecord>,
    pub memories: Vec<MemoryPiece>,
    /// One entry per action, relative to the session directory; `None`
    /// where the capture failed.
    pub screenshots: Vec<Option<String>>,
    pub outcome: SessionOutcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub started: DateTime<Utc>,
    pub ended: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl SessionRecord {
    /// Checks the structural invariants of a record.
    pub fn check(&self) -> Result<(), String> {
        if self.screenshots.len() != self.actions.len() {
            return Err(format!(
                "{} screenshots for {} actions",
                self.screenshots.len(),
                self.actions.len()
            ));
        }
        for (i, a) in self.actions.iter().enumerate() {
            if a.index != i + 1 {
                return Err(format!("action at position {} has index {}", i + 1, a.index));
            }
        }
        let purchased = self.outcome.kind == OutcomeKind::Purchased;
        if purchased != self.outcome.total.is_some() {
            return Err("outcome total must be present exactly when purchased".into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), RecordError> {
        let json = serde_json::to_string_pretty(self).expect("record serializes");
        std::fs::write(path, json + "\n").map_err(|e| RecordError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RecordError> {
        let text = std::fs::read_to_string(path).map_err(|e| RecordError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| RecordError::Invalid {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }
}

/// `Action {k}: {kind}, description: {description}`, one line per action.
pub fn export_action_trace(actions: &[ActionRecord]) -> String {
    let mut out = String::new();
    for a in actions {
        let _ = writeln!(out, "Action {}: {}, description: {}", a.index, a.action.kind, a.action.description);
    }
    out
}

fn is_thought(kind: MemoryKind) -> bool {
    matches!(kind, MemoryKind::Plan | MemoryKind::Reflection | MemoryKind::Wonder)
}

fn flush(out: &mut String, bucket: &mut Vec<&MemoryPiece>, k: usize) {
    for m in bucket.iter().filter(|m| is_thought(m.kind)) {
        let _ = writeln!(out, "Before action {k}, I thought: {}", m.text);
    }
    for m in bucket.iter().filter(|m| m.kind == MemoryKind::Observation) {
        let _ = writeln!(out, "Before action {k}, I saw: {}", m.text);
    }
    bucket.clear();
}

/// Memory trace in reading order. Memories between action `k - 1` and
/// action `k` are listed as "Before action k", thoughts first and then
/// observations, each group in creation order. Action memories already
/// read "For action k, I will: ..." and are printed as they are.
pub fn export_memory_trace(memories: &[MemoryPiece]) -> String {
    let mut out = String::new();
    let mut bucket = Vec::new();
    let mut k = 1;
    for m in memories {
        if m.kind == MemoryKind::Action {
            flush(&mut out, &mut bucket, k);
            let _ = writeln!(out, "{}", m.text);
            k += 1;
        } else {
            bucket.push(m);
        }
    }
    flush(&mut out, &mut bucket, k);
    out
}

/// The text stored for the `k`-th action memory.
pub fn action_memory_text(k: usize, description: &str) -> String {
    format!("For action {k}, I will: {description}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::browser::ActionKind;

    fn mem(id: u64, kind: MemoryKind, text: &str) -> MemoryPiece {
        MemoryPiece {
            id,
            kind,
            text: text.into(),
            timestamp: DateTime::<Utc>::from_timestamp(0, 0).unwrap(),
            step: 0,
            importance: 5.0,
            embedding: None,
        }
    }

    #[test]
    fn action_lines() {
        let a = ActionRecord {
            index: 1,
            action: AgentAction::click("x", "Clicking x."),
            result: ActionResult::success("u".into()),
        };
        assert_eq!(export_action_trace(&[a]), "Action 1: click, description: Clicking x.\n");
        assert_eq!(export_action_trace(&[]), "");
        assert_eq!(ActionKind::TypeAndSubmit.to_string(), "type_and_submit");
    }

    #[test]
    fn buckets() {
        let ms = [
            mem(1, MemoryKind::Observation, "home"),
            mem(2, MemoryKind::Plan, "search"),
            mem(3, MemoryKind::Action, &action_memory_text(1, "Typing.")),
            mem(4, MemoryKind::Wonder, "hm"),
            mem(5, MemoryKind::Observation, "results"),
            mem(6, MemoryKind::Reflection, "worked"),
        ];
        assert_eq!(
            export_memory_trace(&ms),
            "Before action 1, I thought: search\nBefore action 1, I saw: home\nFor action 1, I will: Typing.\n\
             Before action 2, I thought: hm\nBefore action 2, I thought: worked\nBefore action 2, I saw: results\n"
        );
        let only = [mem(1, MemoryKind::Action, &action_memory_text(1, "a"))];
        assert_eq!(export_memory_trace(&only), "For action 1, I will: a\n");
    }
}

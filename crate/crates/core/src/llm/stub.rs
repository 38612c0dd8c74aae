//! Scripted replies keyed by prompt purpose.
//!
//! ```json
//! {
//!   "queues":   { "plan": ["first plan", "second plan", {"error": "boom"}] },
//!   "rules":    [ { "purpose": "perceive", "contains": "error", "reply": "..." } ],
//!   "defaults": { "importance": "5" },
//!   "personas": { "Ava": { "queues": { ... } } }
//! }
//! ```
//! A request is answered by the first matching rule (substring `contains`
//! and/or regex `matches`, whose captures expand in the reply), else the next queued
//! reply for its purpose, else the purpose default. A matching entry under
//! `personas` replaces the top-level sections it defines.

use std::collections::{HashMap, VecDeque};

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{CompletionRequest, LlmError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StubReply {
    Text(String),
    Error { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubRule {
    #[serde(default)]
    pub purpose: Option<String>,
    /// Substring the prompt must contain.
    #[serde(default)]
    pub contains: Option<String>,
    /// Regex the prompt must match. Its named groups can be spliced into a
    /// text reply as `${name}`.
    #[serde(default)]
    pub matches: Option<String>,
    pub reply: StubReply,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubSection {
    #[serde(default)]
    pub queues: Option<IndexMap<String, Vec<StubReply>>>,
    #[serde(default)]
    pub rules: Option<Vec<StubRule>>,
    #[serde(default)]
    pub defaults: Option<HashMap<String, String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubScript {
    #[serde(default)]
    pub queues: IndexMap<String, Vec<StubReply>>,
    #[serde(default)]
    pub rules: Vec<StubRule>,
    #[serde(default)]
    pub defaults: HashMap<String, String>,
    #[serde(default)]
    pub personas: HashMap<String, StubSection>,
}

impl StubScript {
    pub fn from_json(json: &str) -> Result<Self, LlmError> {
        let script: StubScript =
            serde_json::from_str(json).map_err(|e| LlmError::Config(format!("stub script: {e}")))?;
        let sections = script.personas.values().filter_map(|s| s.rules.as_ref());
        for rule in sections.flatten().chain(&script.rules) {
            if let Some(re) = &rule.matches {
                Regex::new(re).map_err(|e| LlmError::Config(format!("stub rule regex {re:?}: {e}")))?;
            }
        }
        Ok(script)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("stub script {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The script a session of `persona` sees.
    pub fn for_persona(&self, persona: Option<&str>) -> StubScript {
        let mut out = self.clone();
        out.personas.clear();
        if let Some(section) = persona.and_then(|p| self.personas.get(p)) {
            if let Some(q) = &section.queues {
                out.queues = q.clone();
            }
            if let Some(r) = &section.rules {
                out.rules = r.clone();
            }
            if let Some(d) = &section.defaults {
                out.defaults = d.clone();
            }
        }
        out
    }
}

/// Playback position over a script.
#[derive(Debug, Clone)]
pub struct StubState {
    queues: HashMap<String, VecDeque<StubReply>>,
    rules: Vec<(StubRule, Option<Regex>)>,
    defaults: HashMap<String, String>,
}

impl StubState {
    pub fn new(script: &StubScript) -> Self {
        StubState {
            queues: script
                .queues
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
                .collect(),
            rules: script
                .rules
                .iter()
                .map(|r| {
                    let re = r.matches.as_deref().map(|m| Regex::new(m).expect("validated at load"));
                    (r.clone(), re)
                })
                .collect(),
            defaults: script.defaults.clone(),
        }
    }

    pub fn reply(&mut self, req: &CompletionRequest) -> Result<String, LlmError> {
        let text = req.full_text();
        let mut ruled = None;
        for (r, re) in &self.rules {
            if r.purpose.as_deref().is_some_and(|p| p != req.purpose)
                || r.contains.as_deref().is_some_and(|c| !text.contains(c))
            {
                continue;
            }
            match (re, &r.reply) {
                (None, reply) => ruled = Some(reply.clone()),
                (Some(re), reply) => {
                    let Some(caps) = re.captures(&text) else { continue };
                    ruled = Some(match reply {
                        StubReply::Text(t) => {
                            let mut out = String::new();
                            caps.expand(&t.replace("$$", "\u{0}"), &mut out);
                            StubReply::Text(out.replace('\u{0}', "$"))
                        }
                        other => other.clone(),
                    });
                }
            }
            break;
        }
        let reply = match ruled {
            Some(r) => r,
            None => match self.queues.get_mut(&req.purpose).and_then(VecDeque::pop_front) {
                Some(r) => r,
                None => match self.defaults.get(&req.purpose) {
                    Some(d) => StubReply::Text(d.clone()),
                    None => return Err(LlmError::StubExhausted(req.purpose.clone())),
                },
            },
        };
        match reply {
            StubReply::Text(t) => Ok(t),
            StubReply::Error { error } => Err(LlmError::Scripted(error)),
        }
    }

    pub fn remaining(&self, purpose: &str) -> usize {
        self.queues.get(purpose).map_or(0, VecDeque::len)
    }
}

//! Chat context for questioning a simulated participant after its session.

use serde::{Deserialize, Serialize};

use crate::llm::{CompletionRequest, Expect, Message};
use crate::memory::MemoryPiece;
use crate::persona::Persona;
use crate::prompt::fill;
use crate::record::SessionRecord;

fn default_threshold() -> f64 {
    3.0
}

fn default_budget() -> usize {
    12_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterviewSettings {
    /// Memories rated below this are left out of the chat context.
    #[serde(default = "default_threshold")]
    pub importance_threshold: f64,
    /// Upper bound on the memory block, in characters. The most recent
    /// memories are kept when it overflows.
    #[serde(default = "default_budget")]
    pub memory_budget_chars: usize,
}

impl Default for InterviewSettings {
    fn default() -> Self {
        InterviewSettings {
            importance_threshold: default_threshold(),
            memory_budget_chars: default_budget(),
        }
    }
}

/// How one memory appears in the chat context.
pub fn memory_line(m: &MemoryPiece) -> String {
    format!("- [{}] {}", m.kind.as_str(), m.text)
}

/// Memories at or above the threshold, oldest first, trimmed from the
/// oldest end to fit the budget.
pub fn condense(memories: &[MemoryPiece], settings: &InterviewSettings) -> Vec<String> {
    let kept: Vec<String> = memories
        .iter()
        .filter(|m| m.importance >= settings.importance_threshold)
        .map(memory_line)
        .collect();
    let mut used = 0;
    let mut start = kept.len();
    while start > 0 {
        let cost = kept[start - 1].len() + 1;
        if used + cost > settings.memory_budget_chars {
            break;
        }
        used += cost;
        start -= 1;
    }
    kept[start..].to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Researcher,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    /// Set on an agent turn whose reply could not be generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterviewContext {
    pub interview_id: String,
    pub session_id: String,
    pub persona: Persona,
    pub condensed_memories: Vec<String>,
    pub history: Vec<Turn>,
}

impl InterviewContext {
    pub fn new(interview_id: impl Into<String>, record: &SessionRecord, settings: &InterviewSettings) -> Self {
        InterviewContext {
            interview_id: interview_id.into(),
            session_id: record.session_id.clone(),
            persona: record.persona.clone(),
            condensed_memories: condense(&record.memories, settings),
            history: Vec::new(),
        }
    }

    pub fn system_prompt(&self, template: &str) -> String {
        let memories = if self.condensed_memories.is_empty() {
            "(nothing)".to_string()
        } else {
            self.condensed_memories.join("\n")
        };
        fill(template, &[("persona", self.persona.render().trim_end()), ("memories", &memories)])
    }

    /// The request for answering `question` after the turns so far.
    /// Exchanges whose reply failed are left out.
    pub fn request(&self, template: &str, question: &str) -> CompletionRequest {
        let mut messages = Vec::new();
        for pair in self.history.chunks(2) {
            if let [q, a] = pair {
                if a.error.is_none() {
                    messages.push(Message::user(q.text.clone()));
                    messages.push(Message::assistant(a.text.clone()));
                }
            }
        }
        messages.push(Message::user(question));
        let mut req = CompletionRequest::new("interview", self.system_prompt(template), "", Expect::FreeText);
        req.messages = messages;
        req
    }

    /// Appends one researcher turn and the agent's answer or failure.
    pub fn record_exchange(&mut self, question: &str, answer: Result<String, String>) {
        self.history.push(Turn {
            speaker: Speaker::Researcher,
            text: question.to_string(),
            error: None,
        });
        self.history.push(match answer {
            Ok(text) => Turn {
                speaker: Speaker::Agent,
                text,
                error: None,
            },
            Err(e) => Turn {
                speaker: Speaker::Agent,
                text: String::new(),
                error: Some(e),
            },
        });
    }
}

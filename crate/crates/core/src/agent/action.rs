use serde::Deserialize;

use crate::browser::{ActionKind, AgentAction, Observation};

#[derive(Deserialize)]
struct Raw {
    kind: String,
    #[serde(default)]
    target: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    description: Option<String>,
}

fn kind_of(s: &str) -> Option<ActionKind> {
    Some(match s.trim().to_ascii_lowercase().as_str() {
        "click" => ActionKind::Click,
        "type" => ActionKind::Type,
        "type_and_submit" => ActionKind::TypeAndSubmit,
        "clear" => ActionKind::Clear,
        "back" => ActionKind::Back,
        "terminate" => ActionKind::Terminate,
        _ => return None,
    })
}

/// Reads the model's action object. The JSON may be wrapped in prose or a
/// code fence; the outermost braces are taken.
pub fn parse_action(reply: &str) -> Result<AgentAction, String> {
    let (Some(start), Some(end)) = (reply.find('{'), reply.rfind('}')) else {
        return Err("no JSON object found".into());
    };
    if end < start {
        return Err("no JSON object found".into());
    }
    let raw: Raw = serde_json::from_str(&reply[start..=end]).map_err(|e| format!("invalid JSON: {e}"))?;
    let kind = kind_of(&raw.kind).ok_or_else(|| {
        format!(
            "unknown kind {:?}; use click, type, type_and_submit, clear, back or terminate",
            raw.kind
        )
    })?;
    let action = AgentAction {
        kind,
        target: raw.target.filter(|t| !t.trim().is_empty()).map(|t| t.trim().to_string()),
        text: raw.text,
        description: raw.description.unwrap_or_default().trim().to_string(),
    };
    action.validate()?;
    if action.description.is_empty() {
        return Err("description must not be empty".into());
    }
    Ok(action)
}

/// Why `action` cannot run against the names in `obs`, if it cannot.
pub fn registry_error(action: &AgentAction, obs: &Observation) -> Option<String> {
    let target = action.target.as_deref()?;
    let clickable = obs.clickables.iter().any(|c| c == target);
    let input = obs.inputs.iter().any(|c| c == target);
    let missing = || {
        format!("Element \"{target}\" does not exist on the current page; use a name from the clickables or inputs list.")
    };
    match action.kind {
        ActionKind::Click if !(clickable || input) => Some(missing()),
        ActionKind::Type | ActionKind::TypeAndSubmit | ActionKind::Clear if !input => Some(if clickable {
            format!(
                "Element \"{target}\" is not a text input; {} only works on names listed under inputs.",
                action.kind
            )
        } else {
            missing()
        }),
        _ => None,
    }
}

//! Prompt templates with `{name}` placeholders.
//!
//! The built-in set is compiled in. A directory holding files of the same
//! names overrides them one by one.

use std::path::Path;

/// Fills `{key}` placeholders in one pass. Unknown braces, including JSON
/// examples inside a template, are left alone, and substituted values are
/// never re-scanned.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub system: String,
    pub perceive: String,
    pub importance: String,
    pub plan: String,
    pub act: String,
    pub act_repair: String,
    pub wonder: String,
    pub reflect: String,
    pub interview: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts {
            system: include_str!("../prompts/system.txt").into(),
            perceive: include_str!("../prompts/perceive.txt").into(),
            importance: include_str!("../prompts/importance.txt").into(),
            plan: include_str!("../prompts/plan.txt").into(),
            act: include_str!("../prompts/act.txt").into(),
            act_repair: include_str!("../prompts/act_repair.txt").into(),
            wonder: include_str!("../prompts/wonder.txt").into(),
            reflect: include_str!("../prompts/reflect.txt").into(),
            interview: include_str!("../prompts/interview.txt").into(),
        }
    }
}

impl Prompts {
    /// Built-ins, replaced by any `<name>.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut p = Prompts::default();
        let slots: [(&str, &mut String); 9] = [
            ("system", &mut p.system),
            ("perceive", &mut p.perceive),
            ("importance", &mut p.importance),
            ("plan", &mut p.plan),
            ("act", &mut p.act),
            ("act_repair", &mut p.act_repair),
            ("wonder", &mut p.wonder),
            ("reflect", &mut p.reflect),
            ("interview", &mut p.interview),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(&path)?;
            }
        }
        Ok(p)
    }
}

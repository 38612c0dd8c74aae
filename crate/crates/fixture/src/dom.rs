//! Document model behind the test browser: element indexing, control
//! state and the default actions of clicks, typing and form submission.

use std::collections::HashMap;

use ego_tree::NodeId;
use scraper::{ElementRef, Html, Selector};
use url::Url;

/// Control state changed by user actions, layered over the markup defaults.
#[derive(Debug, Clone, Default)]
pub struct ControlState {
    pub value: Option<String>,
    pub checked: Option<bool>,
}

pub type Controls = HashMap<usize, ControlState>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NavRequest {
    pub method: Method,
    pub url: Url,
    pub form: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    None,
    Navigate(NavRequest),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomError {
    NotInteractable(String),
    InvalidSelector(String),
}

pub struct Dom {
    html: Html,
    elements: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
}

const TEXT_INPUTS: &[&str] = &[
    "", "text", "search", "email", "number", "password", "tel", "url",
];

impl Dom {
    pub fn parse(source: &str) -> Self {
        let html = Html::parse_document(source);
        let elements: Vec<NodeId> = html
            .tree
            .root()
            .descendants()
            .filter(|n| n.value().is_element())
            .map(|n| n.id())
            .collect();
        let index = elements.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        Dom {
            html,
            elements,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, idx: usize) -> Option<ElementRef<'_>> {
        self.elements
            .get(idx)
            .and_then(|id| self.html.tree.get(*id))
            .and_then(ElementRef::wrap)
    }

    pub fn index_of(&self, el: ElementRef<'_>) -> usize {
        self.index[&el.id()]
    }

    pub fn title(&self) -> String {
        let sel = Selector::parse("title").expect("static selector");
        self.html
            .select(&sel)
            .next()
            .map(|t| collapse(&t.text().collect::<String>()))
            .unwrap_or_default()
    }

    /// Descendants of `scope` (the whole document when `None`) matching
    /// `css`, in document order.
    pub fn select(&self, scope: Option<usize>, css: &str) -> Result<Vec<usize>, DomError> {
        let sel = Selector::parse(css).map_err(|e| DomError::InvalidSelector(e.to_string()))?;
        Ok(match scope.and_then(|i| self.element(i)) {
            Some(el) => el.select(&sel).map(|e| self.index_of(e)).collect(),
            None => self.html.select(&sel).map(|e| self.index_of(e)).collect(),
        })
    }

    pub fn matches(&self, idx: usize, css: &str) -> Result<bool, DomError> {
        let sel = Selector::parse(css).map_err(|e| DomError::InvalidSelector(e.to_string()))?;
        Ok(self.element(idx).is_some_and(|e| sel.matches(&e)))
    }

    pub fn parent(&self, idx: usize) -> Option<usize> {
        let el = self.element(idx)?;
        el.parent()
            .and_then(ElementRef::wrap)
            .map(|p| self.index_of(p))
    }

    pub fn ancestors_and_self(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![idx];
        let mut cur = idx;
        while let Some(p) = self.parent(cur) {
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn children(&self, idx: usize) -> Vec<usize> {
        self.element(idx)
            .map(|el| {
                el.children()
                    .filter_map(ElementRef::wrap)
                    .map(|c| self.index_of(c))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn tag(&self, idx: usize) -> String {
        self.element(idx)
            .map(|e| e.value().name().to_ascii_lowercase())
            .unwrap_or_default()
    }

    pub fn attr(&self, idx: usize, name: &str) -> Option<String> {
        self.element(idx)
            .and_then(|e| e.value().attr(name))
            .map(str::to_string)
    }

    pub fn text_content(&self, idx: usize) -> String {
        self.element(idx)
            .map(|e| e.text().collect())
            .unwrap_or_default()
    }

    /// Text with whitespace collapsed, approximating `innerText`.
    pub fn inner_text(&self, idx: usize) -> String {
        collapse(&self.text_content(idx))
    }

    fn input_type(&self, idx: usize) -> String {
        self.attr(idx, "type")
            .unwrap_or_default()
            .to_ascii_lowercase()
    }

    pub fn by_id(&self, id: &str) -> Option<usize> {
        self.element_ids().find(|(_, v)| *v == id).map(|(i, _)| i)
    }

    fn element_ids(&self) -> impl Iterator<Item = (usize, &str)> {
        (0..self.len()).filter_map(|i| self.element(i).and_then(|e| e.value().id()).map(|v| (i, v)))
    }

    pub fn value(&self, idx: usize, controls: &Controls) -> Option<String> {
        let state = controls.get(&idx);
        match self.tag(idx).as_str() {
            "input" => Some(
                state
                    .and_then(|s| s.value.clone())
                    .or_else(|| self.attr(idx, "value"))
                    .unwrap_or_else(|| {
                        if matches!(self.input_type(idx).as_str(), "checkbox" | "radio") {
                            "on".into()
                        } else {
                            String::new()
                        }
                    }),
            ),
            "textarea" => Some(
                state
                    .and_then(|s| s.value.clone())
                    .unwrap_or_else(|| self.text_content(idx)),
            ),
            "select" => Some(state.and_then(|s| s.value.clone()).unwrap_or_else(|| {
                let options = self.select(Some(idx), "option").unwrap_or_default();
                options
                    .iter()
                    .find(|o| self.attr(**o, "selected").is_some())
                    .or(options.first())
                    .map(|o| self.option_value(*o))
                    .unwrap_or_default()
            })),
            "option" => Some(self.option_value(idx)),
            "button" => Some(self.attr(idx, "value").unwrap_or_default()),
            _ => None,
        }
    }

    fn option_value(&self, idx: usize) -> String {
        self.attr(idx, "value")
            .unwrap_or_else(|| self.inner_text(idx))
    }

    pub fn checked(&self, idx: usize, controls: &Controls) -> Option<bool> {
        match self.tag(idx).as_str() {
            "input" if matches!(self.input_type(idx).as_str(), "checkbox" | "radio") => Some(
                controls
                    .get(&idx)
                    .and_then(|s| s.checked)
                    .unwrap_or_else(|| self.attr(idx, "checked").is_some()),
            ),
            "input" => Some(false),
            "option" => {
                let select = self
                    .ancestors_and_self(idx)
                    .into_iter()
                    .find(|a| self.tag(*a) == "select")?;
                Some(self.value(select, controls)? == self.option_value(idx))
            }
            _ => None,
        }
    }

    fn form_owner(&self, idx: usize) -> Option<usize> {
        if let Some(id) = self.attr(idx, "form") {
            return self.by_id(&id).filter(|f| self.tag(*f) == "form");
        }
        self.ancestors_and_self(idx)
            .into_iter()
            .skip(1)
            .find(|a| self.tag(*a) == "form")
    }

    fn is_disabled(&self, idx: usize) -> bool {
        self.attr(idx, "disabled").is_some()
    }

    fn resolve(&self, base: &Url, href: &str) -> Option<Url> {
        base.join(href.trim()).ok()
    }

    /// Activation behaviour of a click on element `idx`.
    pub fn click(&self, idx: usize, controls: &mut Controls, base: &Url) -> Result<Effect, DomError> {
        for target in self.ancestors_and_self(idx) {
            let tag = self.tag(target);
            match tag.as_str() {
                "a" => {
                    let Some(href) = self.attr(target, "href") else {
                        continue;
                    };
                    let h = href.trim();
                    if h.starts_with('#') || h.to_ascii_lowercase().starts_with("javascript:") {
                        return Ok(Effect::None);
                    }
                    return Ok(match self.resolve(base, h) {
                        Some(url) => Effect::Navigate(NavRequest {
                            method: Method::Get,
                            url,
                            form: vec![],
                        }),
                        None => Effect::None,
                    });
                }
                "button" => {
                    if self.is_disabled(target) {
                        return Ok(Effect::None);
                    }
                    let kind = self.input_type(target);
                    if kind.is_empty() || kind == "submit" {
                        if let Some(form) = self.form_owner(target) {
                            return Ok(Effect::Navigate(self.submit(form, Some(target), controls, base)));
                        }
                    }
                    return Ok(Effect::None);
                }
                "input" => return self.click_input(target, controls, base),
                "label" => {
                    let control = match self.attr(target, "for") {
                        Some(id) => self.by_id(&id),
                        None => self
                            .select(Some(target), "input, select, textarea, button")
                            .ok()
                            .and_then(|v| v.first().copied()),
                    };
                    return match control {
                        Some(c) if c != idx => self.click(c, controls, base),
                        _ => Ok(Effect::None),
                    };
                }
                "option" => {
                    if let Some(select) = self
                        .ancestors_and_self(target)
                        .into_iter()
                        .find(|a| self.tag(*a) == "select")
                    {
                        controls.entry(select).or_default().value = Some(self.option_value(target));
                    }
                    return Ok(Effect::None);
                }
                "select" | "textarea" => return Ok(Effect::None),
                _ => {}
            }
        }
        Ok(Effect::None)
    }

    fn click_input(&self, idx: usize, controls: &mut Controls, base: &Url) -> Result<Effect, DomError> {
        if self.is_disabled(idx) {
            return Ok(Effect::None);
        }
        match self.input_type(idx).as_str() {
            "hidden" => Err(DomError::NotInteractable("hidden input".into())),
            "checkbox" => {
                let now = !self.checked(idx, controls).unwrap_or(false);
                controls.entry(idx).or_default().checked = Some(now);
                Ok(Effect::None)
            }
            "radio" => {
                let name = self.attr(idx, "name");
                let owner = self.form_owner(idx);
                if let Some(name) = name {
                    let group: Vec<usize> = self
                        .select(None, "input")
                        .unwrap_or_default()
                        .into_iter()
                        .filter(|i| {
                            self.input_type(*i) == "radio"
                                && self.attr(*i, "name").as_deref() == Some(name.as_str())
                                && self.form_owner(*i) == owner
                        })
                        .collect();
                    for other in group {
                        controls.entry(other).or_default().checked = Some(false);
                    }
                }
                controls.entry(idx).or_default().checked = Some(true);
                Ok(Effect::None)
            }
            "submit" | "image" => Ok(match self.form_owner(idx) {
                Some(form) => Effect::Navigate(self.submit(form, Some(idx), controls, base)),
                None => Effect::None,
            }),
            _ => Ok(Effect::None),
        }
    }

    /// Appends `text` to a text control. U+E007 (Enter) and U+E006 (Return)
    /// submit the owning form.
    pub fn send_keys(&self, idx: usize, text: &str, controls: &mut Controls, base: &Url) -> Result<Effect, DomError> {
        self.check_editable(idx)?;
        let mut value = self.value(idx, controls).unwrap_or_default();
        let mut enter = false;
        for c in text.chars() {
            match c {
                '\u{E007}' | '\u{E006}' => enter = true,
                '\u{E003}' => {
                    value.pop();
                }
                c if ('\u{E000}'..='\u{F8FF}').contains(&c) => {}
                c => value.push(c),
            }
        }
        controls.entry(idx).or_default().value = Some(value);
        if enter {
            if let Some(form) = self.form_owner(idx) {
                return Ok(Effect::Navigate(self.submit(form, None, controls, base)));
            }
        }
        Ok(Effect::None)
    }

    pub fn clear(&self, idx: usize, controls: &mut Controls) -> Result<(), DomError> {
        self.check_editable(idx)?;
        controls.entry(idx).or_default().value = Some(String::new());
        Ok(())
    }

    fn check_editable(&self, idx: usize) -> Result<(), DomError> {
        let tag = self.tag(idx);
        let editable = match tag.as_str() {
            "textarea" => true,
            "input" => TEXT_INPUTS.contains(&self.input_type(idx).as_str()),
            _ => false,
        };
        if !editable || self.is_disabled(idx) || self.attr(idx, "readonly").is_some() {
            return Err(DomError::NotInteractable(format!("<{tag}> does not accept text")));
        }
        Ok(())
    }

    /// Builds the request a form submission would send.
    pub fn submit(&self, form: usize, submitter: Option<usize>, controls: &Controls, base: &Url) -> NavRequest {
        let mut pairs = Vec::new();
        for field in self.select(Some(form), "input, select, textarea, button").unwrap_or_default() {
            if self.form_owner(field) != Some(form) || self.is_disabled(field) {
                continue;
            }
            let Some(name) = self.attr(field, "name").filter(|n| !n.is_empty()) else {
                continue;
            };
            let tag = self.tag(field);
            let kind = self.input_type(field);
            let include = match (tag.as_str(), kind.as_str()) {
                ("input", "checkbox" | "radio") => self.checked(field, controls).unwrap_or(false),
                ("input", "submit" | "image" | "button" | "reset") | ("button", _) => {
                    submitter == Some(field)
                }
                ("input", "file") => false,
                _ => true,
            };
            if include {
                pairs.push((name, self.value(field, controls).unwrap_or_default()));
            }
        }
        let method = match self.attr(form, "method").map(|m| m.to_ascii_lowercase()) {
            Some(m) if m == "post" => Method::Post,
            _ => Method::Get,
        };
        let mut url = self
            .attr(form, "action")
            .filter(|a| !a.trim().is_empty())
            .and_then(|a| self.resolve(base, &a))
            .unwrap_or_else(|| base.clone());
        url.set_fragment(None);
        if method == Method::Get {
            url.set_query(None);
            if !pairs.is_empty() {
                url.query_pairs_mut().extend_pairs(pairs.iter());
            }
            pairs.clear();
        }
        NavRequest {
            method,
            url,
            form: pairs,
        }
    }
}

pub fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

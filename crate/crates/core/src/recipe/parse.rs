use std::collections::{BTreeMap, BTreeSet, HashMap};

use ego_tree::{NodeId, NodeRef};
use scraper::{ElementRef, Html, Node};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{render, slugify, CompiledNode, Recipe, SimplifiedNode};

/// Element state that only exists in the live page: form control values and
/// results of recipe scripts.
///
/// Keys are document-order element indices: the position of the element in
/// `document.getElementsByTagName('*')`, which is also the preorder position
/// among elements of the parsed markup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LiveState {
    pub elements: HashMap<usize, ElementLiveState>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ElementLiveState {
    pub value: Option<String>,
    pub checked: Option<bool>,
    /// Script source → evaluation result (error text on failure).
    pub scripts: HashMap<String, Result<String, String>>,
}

impl LiveState {
    pub fn element_mut(&mut self, index: usize) -> &mut ElementLiveState {
        self.elements.entry(index).or_default()
    }

    fn get(&self, index: usize) -> Option<&ElementLiveState> {
        self.elements.get(&index)
    }
}

/// Something the browser must read before a page can be parsed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LiveQuery {
    pub element_index: usize,
    pub kind: LiveQueryKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LiveQueryKind {
    /// Current `value` / `checked` of a form control.
    Control,
    /// Evaluate the script with the element as `arguments[0]`.
    Script(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Clickable,
    Input,
    Static,
}

/// One hop of a selector chain: the `index`-th match of `selector` inside
/// the previous hop's element (or the document for the first hop).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocatorStep {
    pub selector: String,
    pub index: usize,
}

/// How to find a named element again in the live page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementLocator {
    pub steps: Vec<LocatorStep>,
    pub click_selector: Option<String>,
    pub role: NodeRole,
    /// Tag of the raw element, before any `tag_name` override.
    pub tag: String,
    pub input_type: Option<String>,
}

impl ElementLocator {
    /// Whether typing into this element makes sense.
    pub fn accepts_text(&self) -> bool {
        match self.tag.as_str() {
            "textarea" => true,
            "input" => !matches!(
                self.input_type.as_deref(),
                Some(
                    "checkbox" | "radio" | "submit" | "button" | "reset" | "image" | "file"
                        | "hidden"
                )
            ),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractiveRegistry {
    pub clickables: Vec<String>,
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedPage {
    pub nodes: Vec<SimplifiedNode>,
    pub registry: InteractiveRegistry,
    pub locators: BTreeMap<String, ElementLocator>,
    pub warnings: Vec<String>,
}

impl ParsedPage {
    pub fn render(&self) -> String {
        render(&self.nodes)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("duplicate element names: {}", .0.join(", "))]
    DuplicateNames(Vec<String>),
}

#[derive(Clone, Copy)]
enum Scope<'a> {
    Document(&'a Html),
    Element(ElementRef<'a>),
}

fn matches_for<'a>(scope: Scope<'a>, node: &CompiledNode) -> Vec<ElementRef<'a>> {
    let all: Vec<ElementRef<'a>> = match scope {
        Scope::Document(html) => html.select(&node.selector).collect(),
        Scope::Element(el) => el.select(&node.selector).collect(),
    };
    // A static name identifies a single element; everything else repeats.
    if node.spec.name.is_some() {
        all.into_iter().take(1).collect()
    } else {
        all
    }
}

fn document_index(html: &Html) -> HashMap<NodeId, usize> {
    html.tree
        .root()
        .descendants()
        .filter(|n| n.value().is_element())
        .enumerate()
        .map(|(i, n)| (n.id(), i))
        .collect()
}

const SKIPPED_TEXT_PARENTS: &[&str] = &["script", "style", "noscript", "template"];

fn push_text(node: NodeRef<'_, Node>, out: &mut String) {
    for child in node.children() {
        match child.value() {
            Node::Text(t) => out.push_str(t),
            Node::Element(e) if SKIPPED_TEXT_PARENTS.contains(&e.name()) => {}
            Node::Element(_) => push_text(child, out),
            _ => {}
        }
    }
}

pub(crate) fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Full text content of an element with whitespace collapsed.
fn text_content(el: ElementRef<'_>) -> String {
    let mut raw = String::new();
    push_text(*el, &mut raw);
    collapse_whitespace(&raw)
}

fn is_control(tag: &str) -> bool {
    matches!(tag, "input" | "select" | "textarea")
}

fn scripts_of(node: &CompiledNode) -> impl Iterator<Item = &String> {
    node.spec
        .text_js
        .iter()
        .chain(node.spec.override_attr.values())
}

/// Lists the live reads `parse_page` will consult for this markup.
pub fn plan_live_queries(raw_markup: &str, recipe: &Recipe) -> Vec<LiveQuery> {
    let html = Html::parse_document(raw_markup);
    let index = document_index(&html);
    let mut out = BTreeSet::new();
    fn walk(
        scope: Scope<'_>,
        nodes: &[CompiledNode],
        index: &HashMap<NodeId, usize>,
        out: &mut BTreeSet<LiveQuery>,
    ) {
        for node in nodes {
            for el in matches_for(scope, node) {
                let element_index = index[&el.id()];
                if is_control(el.value().name()) {
                    out.insert(LiveQuery {
                        element_index,
                        kind: LiveQueryKind::Control,
                    });
                }
                for script in scripts_of(node) {
                    out.insert(LiveQuery {
                        element_index,
                        kind: LiveQueryKind::Script(script.clone()),
                    });
                }
                walk(Scope::Element(el), &node.children, index, out);
            }
        }
    }
    walk(Scope::Document(&html), &recipe.nodes, &index, &mut out);
    out.into_iter().collect()
}

struct Parser<'a> {
    index: HashMap<NodeId, usize>,
    live: &'a LiveState,
    warnings: Vec<String>,
    names: Vec<String>,
    locators: BTreeMap<String, ElementLocator>,
}

impl Parser<'_> {
    fn warn(&mut self, node: &CompiledNode, message: String) {
        self.warnings.push(format!("{}: {message}", node.path));
    }

    fn script_result(&mut self, node: &CompiledNode, el_index: usize, script: &str) -> Option<String> {
        match self.live.get(el_index).and_then(|s| s.scripts.get(script)) {
            Some(Ok(v)) => Some(v.clone()),
            Some(Err(e)) => {
                self.warn(node, format!("script failed: {e}"));
                None
            }
            None => {
                self.warn(node, "script result unavailable".into());
                None
            }
        }
    }

    fn local_name(&self, node: &CompiledNode, el: ElementRef<'_>, position: usize) -> Option<String> {
        if let Some(name) = &node.spec.name {
            return Some(name.clone());
        }
        let source = node.spec.name_source.as_ref()?;
        let source_el = match &node.name_selector {
            Some(sel) => el.select(sel).next(),
            None => Some(el),
        };
        let raw = match (source_el, &source.attr) {
            (Some(e), Some(attr)) => e.value().attr(attr).unwrap_or_default().to_string(),
            (Some(e), None) => text_content(e),
            (None, _) => String::new(),
        };
        let slug = slugify(&raw);
        if slug.is_empty() {
            let prefix = source.fallback.as_deref().unwrap_or("item");
            Some(format!("{prefix}_{}", position + 1))
        } else {
            Some(slug)
        }
    }

    fn extract_text(&mut self, node: &CompiledNode, el: ElementRef<'_>, el_index: usize) -> String {
        let text = if let Some(script) = &node.spec.text_js {
            self.script_result(node, el_index, script)
                .map(|s| collapse_whitespace(&s))
                .unwrap_or_default()
        } else if let Some(sel) = &node.text_selector {
            match el.select(sel).next() {
                Some(target) => text_content(target),
                None => {
                    let sel_src = node.spec.text_selector.as_deref().unwrap_or_default();
                    self.warn(node, format!("text_selector {sel_src:?} matched nothing"));
                    String::new()
                }
            }
        } else {
            text_content(el)
        };
        match &node.spec.text_format {
            Some(format) => collapse_whitespace(&format.replacen("{}", &text, 1)),
            None => text,
        }
    }

    fn reflect_state(&self, el: ElementRef<'_>, el_index: usize, attrs: &mut indexmap::IndexMap<String, String>) {
        let live = self.live.get(el_index);
        let element = el.value();
        match element.name() {
            "input" => {
                let input_type = element.attr("type").unwrap_or("text").to_ascii_lowercase();
                match input_type.as_str() {
                    "checkbox" | "radio" => {
                        let checked = live
                            .and_then(|s| s.checked)
                            .unwrap_or_else(|| element.attr("checked").is_some());
                        attrs.insert("checked".into(), checked.to_string());
                    }
                    "submit" | "button" | "reset" | "image" | "hidden" | "file" => {}
                    _ => {
                        let value = live
                            .and_then(|s| s.value.clone())
                            .or_else(|| element.attr("value").map(str::to_string))
                            .unwrap_or_default();
                        attrs.insert("value".into(), value);
                    }
                }
            }
            "textarea" => {
                let value = live.and_then(|s| s.value.clone()).unwrap_or_else(|| {
                    let mut raw = String::new();
                    push_text(*el, &mut raw);
                    raw
                });
                attrs.insert("value".into(), value);
            }
            "select" => {
                let selected = live.and_then(|s| s.value.clone()).or_else(|| {
                    let options: Vec<ElementRef<'_>> = el
                        .descendants()
                        .filter_map(ElementRef::wrap)
                        .filter(|e| e.value().name() == "option")
                        .collect();
                    options
                        .iter()
                        .find(|o| o.value().attr("selected").is_some())
                        .or(options.first())
                        .map(|o| {
                            o.value()
                                .attr("value")
                                .map(str::to_string)
                                .unwrap_or_else(|| text_content(*o))
                        })
                });
                attrs.insert("selected".into(), selected.unwrap_or_default());
            }
            _ => {}
        }
    }

    fn parse_level(
        &mut self,
        scope: Scope<'_>,
        nodes: &[CompiledNode],
        parent_name: Option<&str>,
        parent_steps: &[LocatorStep],
    ) -> Vec<SimplifiedNode> {
        let mut out: Vec<(usize, SimplifiedNode)> = Vec::new();
        for node in nodes {
            for (position, el) in matches_for(scope, node).into_iter().enumerate() {
                let el_index = self.index[&el.id()];
                let mut steps = parent_steps.to_vec();
                steps.push(LocatorStep {
                    selector: node.spec.selector.clone(),
                    index: position,
                });

                let full_name = self.local_name(node, el, position).map(|local| match parent_name {
                    Some(parent) => format!("{parent}.{local}"),
                    None => local,
                });

                let mut attrs = indexmap::IndexMap::new();
                for key in &node.spec.keep_attr {
                    if let Some(v) = el.value().attr(key) {
                        attrs.insert(key.clone(), v.to_string());
                    }
                }
                for (key, script) in &node.spec.override_attr {
                    if let Some(v) = self.script_result(node, el_index, script) {
                        attrs.insert(key.clone(), v);
                    }
                }
                self.reflect_state(el, el_index, &mut attrs);

                let text = if node.spec.add_text {
                    Some(self.extract_text(node, el, el_index)).filter(|t| !t.is_empty())
                } else {
                    None
                };

                let child_parent = full_name.as_deref().or(parent_name);
                let children = self.parse_level(Scope::Element(el), &node.children, child_parent, &steps);

                if let Some(name) = &full_name {
                    self.names.push(name.clone());
                    let role = if node.spec.clickable {
                        NodeRole::Clickable
                    } else if node.spec.input {
                        NodeRole::Input
                    } else {
                        NodeRole::Static
                    };
                    self.locators.insert(
                        name.clone(),
                        ElementLocator {
                            steps,
                            click_selector: node.spec.click_selector.clone(),
                            role,
                            tag: el.value().name().to_string(),
                            input_type: el.value().attr("type").map(|t| t.to_ascii_lowercase()),
                        },
                    );
                }

                out.push((
                    el_index,
                    SimplifiedNode {
                        tag: node
                            .spec
                            .tag_name
                            .clone()
                            .unwrap_or_else(|| el.value().name().to_string()),
                        name: full_name,
                        attrs,
                        text,
                        children,
                    },
                ));
            }
        }
        out.sort_by_key(|(i, _)| *i);
        out.into_iter().map(|(_, n)| n).collect()
    }
}

fn collect_registry(nodes: &[SimplifiedNode], locators: &BTreeMap<String, ElementLocator>, reg: &mut InteractiveRegistry) {
    for node in nodes {
        if let Some(name) = &node.name {
            match locators.get(name).map(|l| l.role) {
                Some(NodeRole::Clickable) => reg.clickables.push(name.clone()),
                Some(NodeRole::Input) => reg.inputs.push(name.clone()),
                _ => {}
            }
        }
        collect_registry(&node.children, locators, reg);
    }
}

/// Simplifies `raw_markup` according to `recipe`.
///
/// Pure: the output depends only on the three arguments. Missing live
/// state falls back to what the markup itself says (attribute values,
/// `checked`/`selected` flags); missing script results leave the text or
/// attribute empty and add a warning.
pub fn parse_page(raw_markup: &str, recipe: &Recipe, live: &LiveState) -> Result<ParsedPage, ParseError> {
    let html = Html::parse_document(raw_markup);
    let mut parser = Parser {
        index: document_index(&html),
        live,
        warnings: Vec::new(),
        names: Vec::new(),
        locators: BTreeMap::new(),
    };
    let nodes = parser.parse_level(Scope::Document(&html), &recipe.nodes, None, &[]);

    let mut seen = BTreeSet::new();
    let mut duplicates = BTreeSet::new();
    for name in &parser.names {
        if !seen.insert(name.as_str()) {
            duplicates.insert(name.clone());
        }
    }
    if !duplicates.is_empty() {
        return Err(ParseError::DuplicateNames(duplicates.into_iter().collect()));
    }

    let mut registry = InteractiveRegistry::default();
    collect_registry(&nodes, &parser.locators, &mut registry);
    Ok(ParsedPage {
        nodes,
        registry,
        locators: parser.locators,
        warnings: parser.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recipe::{normalize_whitespace, RecipeNode};
    use scraper::Selector;

    fn node(selector: &str) -> RecipeNode {
        RecipeNode {
            selector: selector.into(),
            ..Default::default()
        }
    }

    fn recipe(nodes: Vec<RecipeNode>) -> Recipe {
        Recipe::from_nodes(nodes).unwrap()
    }

    fn parse(markup: &str, nodes: Vec<RecipeNode>) -> ParsedPage {
        parse_page(markup, &recipe(nodes), &LiveState::default()).unwrap()
    }

    #[test]
    fn unmatched_recipe_contributes_nothing() {
        let page = parse(
            "<html><body><p>hi</p></body></html>",
            vec![RecipeNode {
                name: Some("cart".into()),
                clickable: true,
                ..node("#cart")
            }],
        );
        assert!(page.nodes.is_empty());
        assert!(page.registry.clickables.is_empty());
        assert!(page.registry.inputs.is_empty());
        assert_eq!(page.render(), "");
    }

    #[test]
    fn wrapper_levels_are_elided() {
        let markup = r#"<div class="parent"><div class="child-wrapper"><div class="child">A</div></div>
            <div class="child-wrapper"><div class="deco"><div class="child">B</div></div></div></div>"#;
        let page = parse(
            markup,
            vec![RecipeNode {
                name: Some("parent".into()),
                children: vec![RecipeNode {
                    add_text: true,
                    ..node(".child")
                }],
                ..node(".parent")
            }],
        );
        assert_eq!(
            normalize_whitespace(&page.render()),
            r#"<div name="parent"><div>A</div><div>B</div></div>"#
        );
    }

    #[test]
    fn leaf_match_drops_descendants_and_visual_attrs() {
        let markup = r#"<div class="box" style="color:red" id="x"><b>bold</b><script>var a=1;</script><i class="icon"></i></div>"#;
        let page = parse(
            markup,
            vec![RecipeNode {
                add_text: true,
                keep_attr: vec!["id".into()],
                ..node("div.box")
            }],
        );
        assert_eq!(page.render().trim(), r#"<div id="x">bold</div>"#);
    }

    #[test]
    fn name_paths_follow_named_ancestors() {
        let markup = r#"<div id="dp"><section><form><button id="atc">Add</button></form></section></div>"#;
        let page = parse(
            markup,
            vec![RecipeNode {
                name: Some("product".into()),
                children: vec![RecipeNode {
                    children: vec![RecipeNode {
                        name: Some("add_to_cart".into()),
                        clickable: true,
                        ..node("#atc")
                    }],
                    ..node("form")
                }],
                ..node("#dp")
            }],
        );
        assert_eq!(page.registry.clickables, vec!["product.add_to_cart"]);
        let loc = &page.locators["product.add_to_cart"];
        assert_eq!(loc.steps.len(), 3);
        assert_eq!(loc.tag, "button");
    }

    #[test]
    fn empty_slug_falls_back_to_position() {
        let markup = r#"<ul><li><a>!!!</a></li><li><a>Second</a></li><li><a></a></li></ul>"#;
        let page = parse(
            markup,
            vec![RecipeNode {
                name_source: Some(crate::recipe::NameSource {
                    fallback: Some("link".into()),
                    ..Default::default()
                }),
                clickable: true,
                ..node("li a")
            }],
        );
        assert_eq!(page.registry.clickables, vec!["link_1", "second", "link_3"]);
    }

    #[test]
    fn duplicate_names_are_reported() {
        let markup = r#"<div class="c"><a>Same</a></div><div class="c"><a>Same</a></div><div class="c"><a>Other</a></div>"#;
        let err = parse_page(
            markup,
            &recipe(vec![RecipeNode {
                name_source: Some(Default::default()),
                clickable: true,
                ..node("div.c")
            }]),
            &LiveState::default(),
        )
        .unwrap_err();
        assert_eq!(err, ParseError::DuplicateNames(vec!["same".into()]));
    }

    #[test]
    fn control_state_reflected_from_live_state_or_markup() {
        let markup = r#"<form>
            <input id="q" type="text" value="old">
            <input id="r1" type="radio" name="c" value="Navy">
            <input id="r2" type="radio" name="c" value="Black" checked>
            <select id="s"><option value="a">A</option><option value="b" selected>B</option></select>
        </form>"#;
        let nodes = vec![
            RecipeNode { name: Some("q".into()), input: true, ..node("#q") },
            RecipeNode { name: Some("r1".into()), clickable: true, ..node("#r1") },
            RecipeNode { name: Some("r2".into()), clickable: true, ..node("#r2") },
            RecipeNode { name: Some("s".into()), input: true, ..node("#s") },
        ];
        let r = recipe(nodes);
        let static_page = parse_page(markup, &r, &LiveState::default()).unwrap();
        assert_eq!(
            normalize_whitespace(&static_page.render()),
            r#"<input name="q" value="old" /><input name="r1" checked="false" /><input name="r2" checked="true" /><select name="s" selected="b"></select>"#
        );

        let queries = plan_live_queries(markup, &r);
        assert_eq!(queries.len(), 4);
        assert!(queries.iter().all(|q| q.kind == LiveQueryKind::Control));
        let mut live = LiveState::default();
        live.element_mut(queries[0].element_index).value = Some("woman's jacket".into());
        live.element_mut(queries[1].element_index).checked = Some(true);
        live.element_mut(queries[2].element_index).checked = Some(false);
        live.element_mut(queries[3].element_index).value = Some("a".into());
        let live_page = parse_page(markup, &r, &live).unwrap();
        assert_eq!(
            normalize_whitespace(&live_page.render()),
            r#"<input name="q" value="woman's jacket" /><input name="r1" checked="true" /><input name="r2" checked="false" /><select name="s" selected="a"></select>"#
        );
        assert_eq!(live_page.registry.inputs, vec!["q", "s"]);
    }

    #[test]
    fn text_selector_miss_warns() {
        let page = parse(
            "<div class='x'><span>t</span></div>",
            vec![RecipeNode {
                add_text: true,
                text_selector: Some("em".into()),
                ..node("div.x")
            }],
        );
        assert_eq!(page.nodes[0].text, None);
        assert_eq!(page.warnings.len(), 1);
        assert!(page.warnings[0].contains("matched nothing"));
    }

    #[test]
    fn text_js_uses_live_script_results() {
        let markup = r#"<div id="opts"><input type="radio" id="std" value="standard"><label for="std">Standard Shipping</label></div>"#;
        let script = "return arguments[0].nextElementSibling.textContent.trim();";
        let r = recipe(vec![RecipeNode {
            name_source: Some(crate::recipe::NameSource {
                attr: Some("value".into()),
                ..Default::default()
            }),
            clickable: true,
            add_text: true,
            text_js: Some(script.into()),
            ..node("#opts input")
        }]);
        let queries = plan_live_queries(markup, &r);
        let script_query = queries
            .iter()
            .find(|q| matches!(&q.kind, LiveQueryKind::Script(s) if s == script))
            .expect("script query planned");

        let missing = parse_page(markup, &r, &LiveState::default()).unwrap();
        assert_eq!(missing.nodes[0].text, None);
        assert!(missing.warnings[0].contains("unavailable"));

        let mut live = LiveState::default();
        live.element_mut(script_query.element_index)
            .scripts
            .insert(script.into(), Ok("Standard Shipping".into()));
        let page = parse_page(markup, &r, &live).unwrap();
        assert_eq!(page.nodes[0].text.as_deref(), Some("Standard Shipping"));
        assert_eq!(page.nodes[0].name.as_deref(), Some("standard"));
        assert!(page.warnings.is_empty());

        let mut failing = LiveState::default();
        failing
            .element_mut(script_query.element_index)
            .scripts
            .insert(script.into(), Err("ReferenceError".into()));
        let page = parse_page(markup, &r, &failing).unwrap();
        assert_eq!(page.nodes[0].text, None);
        assert!(page.warnings[0].contains("ReferenceError"));
    }

    #[test]
    fn override_attr_and_tag_name() {
        let markup = r#"<div class="btn big" role="button" id="b"><span>Go</span></div>"#;
        let script = "return arguments[0].getAttribute('role');";
        let r = recipe(vec![RecipeNode {
            name: Some("go".into()),
            tag_name: Some("button".into()),
            clickable: true,
            add_text: true,
            override_attr: [("aria-role".to_string(), script.to_string())].into_iter().collect(),
            ..node("#b")
        }]);
        let q = &plan_live_queries(markup, &r)[0];
        let mut live = LiveState::default();
        live.element_mut(q.element_index)
            .scripts
            .insert(script.into(), Ok("button".into()));
        let page = parse_page(markup, &r, &live).unwrap();
        assert_eq!(
            page.render().trim(),
            r#"<button name="go" aria-role="button">Go</button>"#
        );
    }

    #[test]
    fn document_order_index_counts_every_element() {
        let html = Html::parse_document("<p>a</p><p>b</p>");
        let index = document_index(&html);
        // html, head, body, p, p
        assert_eq!(index.len(), 5);
        let sel = Selector::parse("p").unwrap();
        let positions: Vec<usize> = html.select(&sel).map(|e| index[&e.id()]).collect();
        assert_eq!(positions, vec![3, 4]);
    }
}

//! Recipe-driven page simplification.
//!
//! A recipe is a tree of [`RecipeNode`]s. Each node selects elements
//! inside the element matched by its parent, and the parser keeps only the
//! matched elements. Wrapper levels between two matches disappear, and
//! descendants of a leaf match are dropped unless their text is pulled up
//! through `add_text`. Interactive nodes get a dotted `name` built from
//! their named ancestors, which is what the agent uses to address them.

mod parse;
mod render;
mod slug;

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use scraper::Selector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{
    parse_page, plan_live_queries, ElementLiveState, ElementLocator, InteractiveRegistry,
    LiveQuery, LiveQueryKind, LiveState, LocatorStep, NodeRole, ParseError, ParsedPage,
};
pub use render::{normalize_whitespace, parse_simplified, render, render_node, RenderParseError};
pub use slug::{build_name_path, slugify};

/// How a repeated node derives its local name from page content.
///
/// With neither `selector` nor `attr` set, the element's own text is used.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NameSource {
    /// Descendant whose text (or attribute) supplies the name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<String>,
    /// Read this attribute instead of the text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attr: Option<String>,
    /// Prefix for the positional name used when the slug comes out empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One parsing rule of a site recipe.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeNode {
    pub selector: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name_source: Option<NameSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_name: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub add_text: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_selector: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_js: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_format: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keep_attr: Vec<String>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub override_attr: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub clickable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub click_selector: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub input: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<RecipeNode>,
}

/// Marks the confirmation element whose presence means an item was bought.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PurchaseMarker {
    /// Full name of the confirmation node.
    pub marker: String,
    /// Local name of the nodes carrying item titles inside the marker.
    pub item_name: String,
    /// Local name of the nodes carrying item prices inside the marker.
    pub item_price: String,
}

/// On-disk recipe document, one per site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeFile {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purchase: Option<PurchaseMarker>,
    pub nodes: Vec<RecipeNode>,
}

#[derive(Debug, Error)]
pub enum RecipeError {
    #[error("recipe node {path}: {message}")]
    InvalidNode { path: String, message: String },
    #[error("recipe node {path}: malformed selector {selector:?}: {message}")]
    MalformedSelector {
        path: String,
        selector: String,
        message: String,
    },
    #[error("recipe file {path}: {message}")]
    Io { path: String, message: String },
    #[error("recipe document: {0}")]
    Json(#[from] serde_json::Error),
}

/// A recipe node whose selectors have been compiled.
#[derive(Debug, Clone)]
pub struct CompiledNode {
    pub spec: RecipeNode,
    pub path: String,
    pub(crate) selector: Selector,
    pub(crate) text_selector: Option<Selector>,
    pub(crate) name_selector: Option<Selector>,
    pub children: Vec<CompiledNode>,
}

/// A validated, compiled site recipe. Immutable and shareable across sessions.
#[derive(Debug, Clone)]
pub struct Recipe {
    pub id: String,
    pub purchase: Option<PurchaseMarker>,
    pub nodes: Vec<CompiledNode>,
}

impl Recipe {
    pub fn new(file: RecipeFile) -> Result<Self, RecipeError> {
        let nodes = file
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| compile(n, format!("nodes[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            id: file.id,
            purchase: file.purchase,
            nodes,
        })
    }

    /// Builds an anonymous recipe straight from a node list.
    pub fn from_nodes(nodes: Vec<RecipeNode>) -> Result<Self, RecipeError> {
        Self::new(RecipeFile {
            id: "inline".into(),
            purchase: None,
            nodes,
        })
    }

    pub fn from_json(json: &str) -> Result<Self, RecipeError> {
        Self::new(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RecipeError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RecipeError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_file(&self) -> RecipeFile {
        RecipeFile {
            id: self.id.clone(),
            purchase: self.purchase.clone(),
            nodes: self.nodes.iter().map(|n| n.spec.clone()).collect(),
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "recipe {} ({} root nodes)", self.id, self.nodes.len())
    }
}

fn compile_selector(path: &str, selector: &str) -> Result<Selector, RecipeError> {
    Selector::parse(selector).map_err(|e| RecipeError::MalformedSelector {
        path: path.to_string(),
        selector: selector.to_string(),
        message: e.to_string(),
    })
}

fn is_valid_attr_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == ':')
}

fn compile(node: &RecipeNode, path: String) -> Result<CompiledNode, RecipeError> {
    let invalid = |message: &str| RecipeError::InvalidNode {
        path: path.clone(),
        message: message.to_string(),
    };

    if node.selector.trim().is_empty() {
        return Err(invalid("selector must not be empty"));
    }
    if node.text_selector.is_some() && node.text_js.is_some() {
        return Err(invalid("text_selector and text_js are mutually exclusive"));
    }
    if (node.text_selector.is_some() || node.text_js.is_some()) && !node.add_text {
        return Err(invalid("text_selector/text_js require add_text = true"));
    }
    if let Some(format) = &node.text_format {
        if !node.add_text {
            return Err(invalid("text_format requires add_text = true"));
        }
        if format.matches("{}").count() != 1 {
            return Err(invalid("text_format must contain exactly one \"{}\""));
        }
    }
    if node.clickable && node.input {
        return Err(invalid("clickable and input are mutually exclusive"));
    }
    if node.name.is_some() && node.name_source.is_some() {
        return Err(invalid("name and name_source are mutually exclusive"));
    }
    if let Some(name) = &node.name {
        if !slug::is_valid_static_name(name) {
            return Err(invalid(&format!("name {name:?} must match ^[a-z0-9_]+$")));
        }
    }
    if let Some(fallback) = node.name_source.as_ref().and_then(|s| s.fallback.as_ref()) {
        if !slug::is_valid_static_name(fallback) {
            return Err(invalid(&format!(
                "name_source.fallback {fallback:?} must match ^[a-z0-9_]+$"
            )));
        }
    }
    if (node.clickable || node.input) && node.name.is_none() && node.name_source.is_none() {
        return Err(invalid(
            "interactive nodes need a name or name_source so they can be addressed",
        ));
    }
    if node.click_selector.is_some() && !node.clickable {
        return Err(invalid("click_selector requires clickable = true"));
    }
    if let Some(tag) = &node.tag_name {
        let ok = tag.chars().next().is_some_and(|c| c.is_ascii_lowercase())
            && tag
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-');
        if !ok {
            return Err(invalid(&format!("tag_name {tag:?} is not a valid element name")));
        }
    }
    for attr in node.keep_attr.iter().chain(node.override_attr.keys()) {
        if !is_valid_attr_name(attr) {
            return Err(invalid(&format!("attribute name {attr:?} is not valid")));
        }
        if attr == "name" {
            return Err(invalid("the name attribute is reserved for name paths"));
        }
    }

    let selector = compile_selector(&path, &node.selector)?;
    let text_selector = node
        .text_selector
        .as_deref()
        .map(|s| compile_selector(&path, s))
        .transpose()?;
    let name_selector = node
        .name_source
        .as_ref()
        .and_then(|s| s.selector.as_deref())
        .map(|s| compile_selector(&path, s))
        .transpose()?;
    if let Some(click) = &node.click_selector {
        compile_selector(&path, click)?;
    }

    let children = node
        .children
        .iter()
        .enumerate()
        .map(|(i, c)| compile(c, format!("{path}.children[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(CompiledNode {
        spec: node.clone(),
        path,
        selector,
        text_selector,
        name_selector,
        children,
    })
}

/// One element of the simplified page.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplifiedNode {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub attrs: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<SimplifiedNode>,
}

impl SimplifiedNode {
    /// Depth-first search for the node carrying `name`.
    pub fn find(&self, name: &str) -> Option<&SimplifiedNode> {
        if self.name.as_deref() == Some(name) {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(name))
    }

    /// All nodes of this subtree in document order, self first.
    pub fn descendants(&self) -> Vec<&SimplifiedNode> {
        let mut out = vec![self];
        for child in &self.children {
            out.extend(child.descendants());
        }
        out
    }

    /// The last segment of the dotted name.
    pub fn local_name(&self) -> Option<&str> {
        self.name.as_deref().map(|n| n.rsplit('.').next().unwrap_or(n))
    }
}

/// Finds a node by full name anywhere in a page.
pub fn find_named<'a>(nodes: &'a [SimplifiedNode], name: &str) -> Option<&'a SimplifiedNode> {
    nodes.iter().find_map(|n| n.find(name))
}

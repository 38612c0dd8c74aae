use indexmap::IndexMap;
use thiserror::Error;

use super::SimplifiedNode;

const VOID_ELEMENTS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track",
    "wbr",
];

fn escape_text(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
}

fn escape_attr(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
}

fn render_into(node: &SimplifiedNode, depth: usize, out: &mut String) {
    let indent = "  ".repeat(depth);
    out.push_str(&indent);
    out.push('<');
    out.push_str(&node.tag);
    if let Some(name) = &node.name {
        out.push_str(" name=\"");
        escape_attr(name, out);
        out.push('"');
    }
    for (k, v) in &node.attrs {
        out.push(' ');
        out.push_str(k);
        out.push_str("=\"");
        escape_attr(v, out);
        out.push('"');
    }
    let text = node.text.as_deref().filter(|t| !t.is_empty());
    if node.children.is_empty() {
        if text.is_none() && VOID_ELEMENTS.contains(&node.tag.as_str()) {
            out.push_str(" />\n");
            return;
        }
        out.push('>');
        if let Some(t) = text {
            escape_text(t, out);
        }
    } else {
        out.push_str(">\n");
        if let Some(t) = text {
            out.push_str(&indent);
            out.push_str("  ");
            escape_text(t, out);
            out.push('\n');
        }
        for child in &node.children {
            render_into(child, depth + 1, out);
        }
        out.push_str(&indent);
    }
    out.push_str("</");
    out.push_str(&node.tag);
    out.push_str(">\n");
}

/// Serializes a simplified page as indented markup. `name` always comes
/// first, the rest keep their stored order.
pub fn render(nodes: &[SimplifiedNode]) -> String {
    let mut out = String::new();
    for node in nodes {
        render_into(node, 0, &mut out);
    }
    out
}

pub fn render_node(node: &SimplifiedNode) -> String {
    render(std::slice::from_ref(node))
}

/// Collapses whitespace runs and drops whitespace that touches a tag, so
/// two renderings that differ only in layout compare equal.
pub fn normalize_whitespace(markup: &str) -> String {
    let collapsed = markup.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut out = String::with_capacity(collapsed.len());
    let mut chars = collapsed.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            ' ' if chars.peek() == Some(&'<') || out.ends_with('>') => {}
            _ => out.push(c),
        }
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("simplified markup, byte {offset}: {message}")]
pub struct RenderParseError {
    pub offset: usize,
    pub message: String,
}

struct Reader<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> RenderParseError {
        RenderParseError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<&'a str, RenderParseError> {
        let rest = self.rest();
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == ':'))
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(self.err("expected a name"));
        }
        self.pos += len;
        Ok(&rest[..len])
    }

    fn node(&mut self) -> Result<SimplifiedNode, RenderParseError> {
        if !self.eat("<") {
            return Err(self.err("expected '<'"));
        }
        let tag = self.ident()?.to_string();
        let mut node = SimplifiedNode {
            tag,
            ..Default::default()
        };
        let mut attrs = IndexMap::new();
        loop {
            self.skip_ws();
            if self.eat("/>") {
                node.attrs = attrs;
                return Ok(node);
            }
            if self.eat(">") {
                break;
            }
            let key = self.ident()?.to_string();
            if !self.eat("=\"") {
                return Err(self.err("expected =\""));
            }
            let end = self
                .rest()
                .find('"')
                .ok_or_else(|| self.err("unterminated attribute"))?;
            let value = unescape(&self.rest()[..end]);
            self.pos += end + 1;
            if key == "name" {
                node.name = Some(value);
            } else {
                attrs.insert(key, value);
            }
        }
        node.attrs = attrs;

        let mut text = String::new();
        loop {
            if self.eat("</") {
                let close = self.ident()?;
                if close != node.tag {
                    return Err(self.err(format!("expected </{}>, found </{close}>", node.tag)));
                }
                if !self.eat(">") {
                    return Err(self.err("expected '>'"));
                }
                break;
            }
            if self.rest().starts_with('<') {
                node.children.push(self.node()?);
                continue;
            }
            let end = self
                .rest()
                .find('<')
                .ok_or_else(|| self.err(format!("unterminated <{}>", node.tag)))?;
            text.push_str(&self.rest()[..end]);
            text.push(' ');
            self.pos += end;
        }
        let text = unescape(&text.split_whitespace().collect::<Vec<_>>().join(" "));
        node.text = Some(text).filter(|t| !t.is_empty());
        Ok(node)
    }
}

fn unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&amp;", "&")
}

/// Reads markup produced by [`render`] back into nodes.
pub fn parse_simplified(markup: &str) -> Result<Vec<SimplifiedNode>, RenderParseError> {
    let mut reader = Reader { src: markup, pos: 0 };
    let mut out = Vec::new();
    loop {
        reader.skip_ws();
        if reader.rest().is_empty() {
            return Ok(out);
        }
        out.push(reader.node()?);
    }
}

//! Evaluator for the small family of DOM expressions recipes use with
//! `text_js`, e.g. `return arguments[0].nextElementSibling.textContent.trim();`.
//!
//! Grammar: `["return"] expr ("||" expr)* [";"]`, where `expr` is a root
//! (`arguments[N]`, `document`, a string or number literal, `true`,
//! `false`, `null`) followed by property reads, method calls and `[N]`.

use crate::dom::{Controls, Dom};

#[derive(Debug, Clone, PartialEq)]
pub enum Val {
    Elem(usize),
    List(Vec<usize>),
    Str(String),
    Num(f64),
    Bool(bool),
    Null,
}

impl Val {
    fn truthy(&self) -> bool {
        match self {
            Val::Elem(_) | Val::List(_) => true,
            Val::Str(s) => !s.is_empty(),
            Val::Num(n) => *n != 0.0 && !n.is_nan(),
            Val::Bool(b) => *b,
            Val::Null => false,
        }
    }

    fn describe(&self) -> &'static str {
        match self {
            Val::Elem(_) => "element",
            Val::List(_) => "element list",
            Val::Str(_) => "string",
            Val::Num(_) => "number",
            Val::Bool(_) => "boolean",
            Val::Null => "null",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Dot,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Or,
}

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '.' => {
                out.push(Tok::Dot);
                i += 1
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1
            }
            '[' => {
                out.push(Tok::LBracket);
                i += 1
            }
            ']' => {
                out.push(Tok::RBracket);
                i += 1
            }
            ',' => {
                out.push(Tok::Comma);
                i += 1
            }
            ';' => {
                out.push(Tok::Semi);
                i += 1
            }
            '|' if chars.get(i + 1) == Some(&'|') => {
                out.push(Tok::Or);
                i += 2
            }
            '\'' | '"' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err("unterminated string literal".into()),
                        Some(&q) if q == quote => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let esc = chars.get(i + 1).ok_or("unterminated escape")?;
                            s.push(match esc {
                                'n' => '\n',
                                't' => '\t',
                                other => *other,
                            });
                            i += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                out.push(Tok::Str(s));
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                out.push(Tok::Num(text.parse().map_err(|_| format!("bad number {text}"))?));
            }
            c if c.is_alphabetic() || c == '_' || c == '$' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(format!("unexpected character {other:?}")),
        }
    }
    Ok(out)
}

struct Eval<'a> {
    dom: &'a Dom,
    controls: &'a Controls,
    args: &'a [Val],
    toks: Vec<Tok>,
    pos: usize,
}

impl Eval<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), String> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            other => Err(format!("expected {want:?}, found {other:?}")),
        }
    }

    fn program(&mut self) -> Result<Val, String> {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == "return") {
            self.pos += 1;
        }
        let v = self.or_expr()?;
        while matches!(self.peek(), Some(Tok::Semi)) {
            self.pos += 1;
        }
        match self.peek() {
            None => Ok(v),
            Some(t) => Err(format!("unsupported syntax near {t:?}")),
        }
    }

    fn or_expr(&mut self) -> Result<Val, String> {
        let mut v = self.chain()?;
        while matches!(self.peek(), Some(Tok::Or)) {
            self.pos += 1;
            let rhs = self.chain()?;
            if !v.truthy() {
                v = rhs;
            }
        }
        Ok(v)
    }

    fn chain(&mut self) -> Result<Val, String> {
        let mut is_document = false;
        let mut v = match self.next() {
            Some(Tok::Ident(id)) => match id.as_str() {
                "arguments" => {
                    self.expect(Tok::LBracket)?;
                    let n = self.index()?;
                    self.args.get(n).cloned().unwrap_or(Val::Null)
                }
                "document" => {
                    is_document = true;
                    Val::Null
                }
                "true" => Val::Bool(true),
                "false" => Val::Bool(false),
                "null" | "undefined" => Val::Null,
                other => return Err(format!("unknown identifier {other}")),
            },
            Some(Tok::Str(s)) => Val::Str(s),
            Some(Tok::Num(n)) => Val::Num(n),
            Some(Tok::LParen) => {
                let v = self.or_expr()?;
                self.expect(Tok::RParen)?;
                v
            }
            other => return Err(format!("expected an expression, found {other:?}")),
        };
        loop {
            match self.peek() {
                Some(Tok::Dot) => {
                    self.pos += 1;
                    let Some(Tok::Ident(name)) = self.next() else {
                        return Err("expected a property name".into());
                    };
                    if matches!(self.peek(), Some(Tok::LParen)) {
                        self.pos += 1;
                        let mut args = Vec::new();
                        if !matches!(self.peek(), Some(Tok::RParen)) {
                            loop {
                                args.push(self.or_expr()?);
                                if matches!(self.peek(), Some(Tok::Comma)) {
                                    self.pos += 1;
                                } else {
                                    break;
                                }
                            }
                        }
                        self.expect(Tok::RParen)?;
                        v = self.call(&v, is_document, &name, &args)?;
                    } else {
                        v = self.prop(&v, is_document, &name)?;
                    }
                    is_document = false;
                }
                Some(Tok::LBracket) => {
                    self.pos += 1;
                    let n = self.index()?;
                    v = match v {
                        Val::List(items) => items.get(n).map(|i| Val::Elem(*i)).unwrap_or(Val::Null),
                        Val::Str(s) => s.chars().nth(n).map(|c| Val::Str(c.to_string())).unwrap_or(Val::Null),
                        other => return Err(format!("cannot index a {}", other.describe())),
                    };
                    is_document = false;
                }
                _ => return Ok(v),
            }
        }
    }

    fn index(&mut self) -> Result<usize, String> {
        let n = match self.next() {
            Some(Tok::Num(n)) if n >= 0.0 && n.fract() == 0.0 => n as usize,
            other => return Err(format!("expected an index, found {other:?}")),
        };
        self.expect(Tok::RBracket)?;
        Ok(n)
    }

    fn prop(&self, v: &Val, is_document: bool, name: &str) -> Result<Val, String> {
        let dom = self.dom;
        if is_document {
            return match name {
                "title" => Ok(Val::Str(dom.title())),
                "body" => Ok(first(dom.select(None, "body").map_err(err)?)),
                "documentElement" => Ok(first(dom.select(None, "html").map_err(err)?)),
                other => Err(format!("unsupported document property {other}")),
            };
        }
        match v {
            Val::Null => Err(format!("cannot read properties of null (reading '{name}')")),
            Val::Str(s) => match name {
                "length" => Ok(Val::Num(s.chars().count() as f64)),
                other => Err(format!("unsupported string property {other}")),
            },
            Val::List(items) => match name {
                "length" => Ok(Val::Num(items.len() as f64)),
                other => Err(format!("unsupported list property {other}")),
            },
            Val::Elem(i) => {
                let i = *i;
                let sibling = |step: isize| -> Val {
                    let Some(parent) = dom.parent(i) else {
                        return Val::Null;
                    };
                    let kids = dom.children(parent);
                    let pos = kids.iter().position(|k| *k == i).unwrap_or(0) as isize + step;
                    usize::try_from(pos)
                        .ok()
                        .and_then(|p| kids.get(p))
                        .map(|k| Val::Elem(*k))
                        .unwrap_or(Val::Null)
                };
                Ok(match name {
                    "textContent" => Val::Str(dom.text_content(i)),
                    "innerText" => Val::Str(dom.inner_text(i)),
                    "value" => dom.value(i, self.controls).map(Val::Str).unwrap_or(Val::Null),
                    "checked" => dom.checked(i, self.controls).map(Val::Bool).unwrap_or(Val::Null),
                    "tagName" | "nodeName" => Val::Str(dom.tag(i).to_ascii_uppercase()),
                    "id" => Val::Str(dom.attr(i, "id").unwrap_or_default()),
                    "className" => Val::Str(dom.attr(i, "class").unwrap_or_default()),
                    "href" | "name" | "type" | "placeholder" | "title" | "alt" | "src" => {
                        dom.attr(i, name).map(Val::Str).unwrap_or(Val::Str(String::new()))
                    }
                    "parentElement" | "parentNode" => dom.parent(i).map(Val::Elem).unwrap_or(Val::Null),
                    "nextElementSibling" => sibling(1),
                    "previousElementSibling" => sibling(-1),
                    "children" => Val::List(dom.children(i)),
                    "firstElementChild" => dom.children(i).first().map(|c| Val::Elem(*c)).unwrap_or(Val::Null),
                    "lastElementChild" => dom.children(i).last().map(|c| Val::Elem(*c)).unwrap_or(Val::Null),
                    "labels" => Val::List(self.labels(i)),
                    other => return Err(format!("unsupported element property {other}")),
                })
            }
            other => Err(format!("cannot read {name} of a {}", other.describe())),
        }
    }

    fn labels(&self, i: usize) -> Vec<usize> {
        let dom = self.dom;
        let mut out: Vec<usize> = match dom.attr(i, "id") {
            Some(id) => dom
                .select(None, "label")
                .unwrap_or_default()
                .into_iter()
                .filter(|l| dom.attr(*l, "for").as_deref() == Some(id.as_str()))
                .collect(),
            None => vec![],
        };
        for a in dom.ancestors_and_self(i).into_iter().skip(1) {
            if dom.tag(a) == "label" && !out.contains(&a) {
                out.push(a);
            }
        }
        out.sort_unstable();
        out
    }

    fn call(&self, v: &Val, is_document: bool, name: &str, args: &[Val]) -> Result<Val, String> {
        let dom = self.dom;
        let str_arg = |n: usize| -> Result<String, String> {
            match args.get(n) {
                Some(Val::Str(s)) => Ok(s.clone()),
                _ => Err(format!("{name} expects a string argument")),
            }
        };
        let scope = match (is_document, v) {
            (true, _) => Some(None),
            (false, Val::Elem(i)) => Some(Some(*i)),
            _ => None,
        };
        if let Some(scope) = scope {
            match name {
                "querySelector" => return Ok(first(dom.select(scope, &str_arg(0)?).map_err(err)?)),
                "querySelectorAll" => return Ok(Val::List(dom.select(scope, &str_arg(0)?).map_err(err)?)),
                _ => {}
            }
        }
        match v {
            Val::Elem(i) if !is_document => {
                let i = *i;
                match name {
                    "getAttribute" => Ok(dom.attr(i, &str_arg(0)?).map(Val::Str).unwrap_or(Val::Null)),
                    "hasAttribute" => Ok(Val::Bool(dom.attr(i, &str_arg(0)?).is_some())),
                    "matches" => Ok(Val::Bool(dom.matches(i, &str_arg(0)?).map_err(err)?)),
                    "closest" => {
                        let css = str_arg(0)?;
                        for a in dom.ancestors_and_self(i) {
                            if dom.matches(a, &css).map_err(err)? {
                                return Ok(Val::Elem(a));
                            }
                        }
                        Ok(Val::Null)
                    }
                    other => Err(format!("unsupported element method {other}")),
                }
            }
            Val::Str(s) => match name {
                "trim" => Ok(Val::Str(s.trim().to_string())),
                "toLowerCase" => Ok(Val::Str(s.to_lowercase())),
                "toUpperCase" => Ok(Val::Str(s.to_uppercase())),
                "toString" => Ok(Val::Str(s.clone())),
                other => Err(format!("unsupported string method {other}")),
            },
            Val::List(items) if !is_document => match name {
                "item" => match args.first() {
                    Some(Val::Num(n)) => Ok(items.get(*n as usize).map(|i| Val::Elem(*i)).unwrap_or(Val::Null)),
                    _ => Err("item expects an index".into()),
                },
                other => Err(format!("unsupported list method {other}")),
            },
            Val::Null => Err(format!("cannot read properties of null (reading '{name}')")),
            other => Err(format!("unsupported method {name} on a {}", other.describe())),
        }
    }
}

fn first(v: Vec<usize>) -> Val {
    v.first().map(|i| Val::Elem(*i)).unwrap_or(Val::Null)
}

fn err(e: crate::dom::DomError) -> String {
    format!("{e:?}")
}

/// Runs `script` against `dom`. Errors read like a browser's JavaScript
/// error messages.
pub fn eval(dom: &Dom, controls: &Controls, script: &str, args: &[Val]) -> Result<Val, String> {
    let toks = lex(script)?;
    Eval {
        dom,
        controls,
        args,
        toks,
        pos: 0,
    }
    .program()
}

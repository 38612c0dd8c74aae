//! An in-process browser that speaks the W3C WebDriver wire protocol over
//! HTTP. It fetches real pages, keeps control state and runs the default
//! actions of links, buttons, radios, checkboxes and forms. Scripts are
//! limited to the expression subset in [`crate::script`].

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde_json::{json, Value};
use url::Url;

use crate::dom::{Controls, Dom, DomError, Effect, Method, NavRequest};
use crate::screenshot;
use crate::script::{self, Val};

pub const ELEMENT_KEY: &str = "element-6066-11e4-a52e-4f735466cecf";

const BLANK: &str = "<html><head></head><body></body></html>";

/// Knobs for exercising client error handling.
#[derive(Debug, Default)]
pub struct Faults {
    /// The next N page-source requests fail with `unknown error`.
    pub source_failures: AtomicU32,
    /// Every page-source request fails while set.
    pub source_down: AtomicBool,
    /// The next N navigations fail as if the network dropped.
    pub navigation_failures: AtomicU32,
}

fn take(counter: &AtomicU32) -> bool {
    counter
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
}

#[derive(Default)]
pub struct BrowserState {
    tabs: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Tab>>>>,
    next_id: AtomicU64,
    pub faults: Faults,
    /// Commands served, for tests that count round trips.
    pub commands: AtomicU64,
}

impl BrowserState {
    pub fn open_sessions(&self) -> usize {
        self.tabs.lock().unwrap().len()
    }
}

struct Page {
    url: Url,
    source: String,
}

struct Tab {
    client: reqwest::Client,
    page: Option<Page>,
    history: Vec<Url>,
    generation: u64,
    controls: Controls,
}

impl Tab {
    fn url(&self) -> String {
        self.page
            .as_ref()
            .map(|p| p.url.to_string())
            .unwrap_or_else(|| "about:blank".into())
    }

    fn base(&self) -> Url {
        self.page
            .as_ref()
            .map(|p| p.url.clone())
            .unwrap_or_else(|| Url::parse("about:blank").expect("static url"))
    }

    fn source(&self) -> &str {
        self.page.as_ref().map(|p| p.source.as_str()).unwrap_or(BLANK)
    }

    async fn load(&mut self, req: NavRequest, faults: &Faults, push: bool) -> Result<(), WdError> {
        if req.url.scheme() == "about" {
            self.page = None;
            self.generation += 1;
            self.controls.clear();
            return Ok(());
        }
        if !matches!(req.url.scheme(), "http" | "https") {
            return Err(WdError::invalid_argument(format!("unsupported url {}", req.url)));
        }
        if take(&faults.navigation_failures) {
            return Err(WdError::unknown("net::ERR_CONNECTION_RESET"));
        }
        let builder = match req.method {
            Method::Get => self.client.get(req.url.clone()),
            Method::Post => self.client.post(req.url.clone()).form(&req.form),
        };
        let resp = builder
            .send()
            .await
            .map_err(|e| WdError::unknown(format!("navigation to {} failed: {e}", req.url)))?;
        let url = resp.url().clone();
        let source = resp
            .text()
            .await
            .map_err(|e| WdError::unknown(format!("reading {url} failed: {e}")))?;
        if push {
            self.history.push(url.clone());
        }
        self.page = Some(Page { url, source });
        self.generation += 1;
        self.controls.clear();
        Ok(())
    }

    fn element_id(&self, idx: usize) -> String {
        format!("e{}-{}", self.generation, idx)
    }

    fn element_ref(&self, idx: usize) -> Value {
        json!({ ELEMENT_KEY: self.element_id(idx) })
    }

    fn resolve(&self, id: &str) -> Result<usize, WdError> {
        let (gen, idx) = id
            .strip_prefix('e')
            .and_then(|r| r.split_once('-'))
            .and_then(|(g, i)| Some((g.parse::<u64>().ok()?, i.parse::<usize>().ok()?)))
            .ok_or_else(|| WdError::no_such_element(format!("unknown element {id}")))?;
        if gen != self.generation {
            return Err(WdError::stale(id));
        }
        Ok(idx)
    }
}

#[derive(Debug)]
pub struct WdError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl WdError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        WdError {
            status,
            code,
            message: message.into(),
        }
    }
    fn unknown(m: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "unknown error", m)
    }
    fn invalid_argument(m: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid argument", m)
    }
    fn no_such_element(m: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "no such element", m)
    }
    fn stale(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "stale element reference",
            format!("element {id} is no longer attached to the page"),
        )
    }
    fn invalid_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "invalid session id", format!("no session {id}"))
    }
    fn javascript(m: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "javascript error", m)
    }
}

impl From<DomError> for WdError {
    fn from(e: DomError) -> Self {
        match e {
            DomError::NotInteractable(m) => Self::new(StatusCode::BAD_REQUEST, "element not interactable", m),
            DomError::InvalidSelector(m) => Self::new(StatusCode::BAD_REQUEST, "invalid selector", m),
        }
    }
}

impl IntoResponse for WdError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "value": { "error": self.code, "message": self.message, "stacktrace": "" } })),
        )
            .into_response()
    }
}

type WdResult = Result<Json<Value>, WdError>;

fn ok(v: Value) -> WdResult {
    Ok(Json(json!({ "value": v })))
}

fn body_json(body: &Bytes) -> Result<Value, WdError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(json!({}));
    }
    serde_json::from_slice(body).map_err(|e| WdError::invalid_argument(format!("bad json body: {e}")))
}

fn str_field<'a>(body: &'a Value, key: &str) -> Result<&'a str, WdError> {
    body.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| WdError::invalid_argument(format!("missing string field {key}")))
}

pub fn router(state: Arc<BrowserState>) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/session", post(new_session))
        .route("/session/{sid}", delete(delete_session))
        .route("/session/{sid}/url", get(get_url).post(navigate))
        .route("/session/{sid}/back", post(back))
        .route("/session/{sid}/refresh", post(refresh))
        .route("/session/{sid}/title", get(title))
        .route("/session/{sid}/source", get(source))
        .route("/session/{sid}/timeouts", post(accept))
        .route("/session/{sid}/window/rect", get(window_rect).post(window_rect))
        .route("/session/{sid}/element", post(find_one))
        .route("/session/{sid}/elements", post(find_all))
        .route("/session/{sid}/element/{eid}/element", post(find_one_from))
        .route("/session/{sid}/element/{eid}/elements", post(find_all_from))
        .route("/session/{sid}/element/{eid}/click", post(click))
        .route("/session/{sid}/element/{eid}/clear", post(clear))
        .route("/session/{sid}/element/{eid}/value", post(send_keys))
        .route("/session/{sid}/element/{eid}/text", get(text))
        .route("/session/{sid}/element/{eid}/name", get(tag_name))
        .route("/session/{sid}/element/{eid}/attribute/{name}", get(attribute))
        .route("/session/{sid}/element/{eid}/property/{name}", get(property))
        .route("/session/{sid}/execute/sync", post(execute))
        .route("/session/{sid}/screenshot", get(screenshot))
        .with_state(state)
}

async fn tab(state: &BrowserState, sid: &str) -> Result<Arc<tokio::sync::Mutex<Tab>>, WdError> {
    state.commands.fetch_add(1, Ordering::Relaxed);
    state
        .tabs
        .lock()
        .unwrap()
        .get(sid)
        .cloned()
        .ok_or_else(|| WdError::invalid_session(sid))
}

async fn status() -> WdResult {
    ok(json!({ "ready": true, "message": "uxsim test browser" }))
}

async fn new_session(State(state): State<Arc<BrowserState>>) -> WdResult {
    let client = reqwest::Client::builder()
        .cookie_store(true)
        .timeout(Duration::from_secs(30))
        .user_agent("uxsim-test-browser/0.1")
        .build()
        .map_err(|e| WdError::unknown(e.to_string()))?;
    let id = format!("tb{:04}", state.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    let tab = Tab {
        client,
        page: None,
        history: vec![],
        generation: 0,
        controls: Controls::new(),
    };
    state
        .tabs
        .lock()
        .unwrap()
        .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(tab)));
    ok(json!({
        "sessionId": id,
        "capabilities": { "browserName": "uxsim-test-browser", "browserVersion": env!("CARGO_PKG_VERSION"), "acceptInsecureCerts": false }
    }))
}

async fn delete_session(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>) -> WdResult {
    match state.tabs.lock().unwrap().remove(&sid) {
        Some(_) => ok(Value::Null),
        None => Err(WdError::invalid_session(&sid)),
    }
}

async fn accept(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>) -> WdResult {
    tab(&state, &sid).await?;
    ok(Value::Null)
}

async fn window_rect(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>) -> WdResult {
    tab(&state, &sid).await?;
    ok(json!({ "x": 0, "y": 0, "width": screenshot::WIDTH * 4, "height": screenshot::HEIGHT * 4 }))
}

async fn get_url(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let url = tab.lock().await.url();
    ok(json!(url))
}

async fn navigate(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>, body: Bytes) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let body = body_json(&body)?;
    let url = Url::parse(str_field(&body, "url")?).map_err(|e| WdError::invalid_argument(e.to_string()))?;
    let mut t = tab.lock().await;
    let req = NavRequest {
        method: Method::Get,
        url,
        form: vec![],
    };
    t.load(req, &state.faults, true).await?;
    ok(Value::Null)
}

async fn reload(state: &BrowserState, t: &mut Tab, url: Url) -> Result<(), WdError> {
    let req = NavRequest {
        method: Method::Get,
        url,
        form: vec![],
    };
    t.load(req, &state.faults, false).await
}

async fn back(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let mut t = tab.lock().await;
    if t.history.len() > 1 {
        t.history.pop();
        let prev = t.history.last().cloned().expect("history has an entry");
        reload(&state, &mut t, prev).await?;
    }
    ok(Value::Null)
}

async fn refresh(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let mut t = tab.lock().await;
    if let Some(url) = t.page.as_ref().map(|p| p.url.clone()) {
        reload(&state, &mut t, url).await?;
    }
    ok(Value::Null)
}

async fn title(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let t = tab.lock().await;
    let title = Dom::parse(t.source()).title();
    ok(json!(title))
}

async fn source(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>) -> WdResult {
    let tab = tab(&state, &sid).await?;
    if state.faults.source_down.load(Ordering::SeqCst) || take(&state.faults.source_failures) {
        return Err(WdError::unknown("renderer crashed while serializing the page"));
    }
    let t = tab.lock().await;
    ok(json!(t.source()))
}

fn locate(t: &Tab, scope: Option<&str>, body: &Bytes) -> Result<Vec<usize>, WdError> {
    let body = body_json(body)?;
    let using = str_field(&body, "using")?;
    let value = str_field(&body, "value")?;
    let css = match using {
        "css selector" => value.to_string(),
        "tag name" => value.to_string(),
        "id" => format!("#{value}"),
        other => return Err(WdError::invalid_argument(format!("unsupported locator strategy {other}"))),
    };
    let scope = scope.map(|s| t.resolve(s)).transpose()?;
    let dom = Dom::parse(t.source());
    if let Some(s) = scope {
        if s >= dom.len() {
            return Err(WdError::no_such_element(format!("element {s} is out of range")));
        }
    }
    Ok(dom.select(scope, &css)?)
}

async fn find_one(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>, body: Bytes) -> WdResult {
    find(&state, &sid, None, &body, true).await
}

async fn find_all(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>, body: Bytes) -> WdResult {
    find(&state, &sid, None, &body, false).await
}

async fn find_one_from(
    State(state): State<Arc<BrowserState>>,
    Path((sid, eid)): Path<(String, String)>,
    body: Bytes,
) -> WdResult {
    find(&state, &sid, Some(&eid), &body, true).await
}

async fn find_all_from(
    State(state): State<Arc<BrowserState>>,
    Path((sid, eid)): Path<(String, String)>,
    body: Bytes,
) -> WdResult {
    find(&state, &sid, Some(&eid), &body, false).await
}

async fn find(state: &BrowserState, sid: &str, scope: Option<&str>, body: &Bytes, single: bool) -> WdResult {
    let tab = tab(state, sid).await?;
    let t = tab.lock().await;
    let found = locate(&t, scope, body)?;
    if single {
        match found.first() {
            Some(i) => ok(t.element_ref(*i)),
            None => Err(WdError::no_such_element("no element matches the locator")),
        }
    } else {
        ok(Value::Array(found.into_iter().map(|i| t.element_ref(i)).collect()))
    }
}

fn with_element<T>(t: &mut Tab, eid: &str, f: impl FnOnce(&Dom, usize, &mut Controls, &Url) -> Result<T, WdError>) -> Result<T, WdError> {
    let idx = t.resolve(eid)?;
    let base = t.base();
    let dom = Dom::parse(t.source());
    if idx >= dom.len() {
        return Err(WdError::no_such_element(format!("element {eid} is out of range")));
    }
    f(&dom, idx, &mut t.controls, &base)
}

async fn follow(state: &BrowserState, t: &mut Tab, effect: Effect) -> Result<(), WdError> {
    if let Effect::Navigate(req) = effect {
        t.load(req, &state.faults, true).await?;
    }
    Ok(())
}

async fn click(State(state): State<Arc<BrowserState>>, Path((sid, eid)): Path<(String, String)>) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let mut t = tab.lock().await;
    let effect = with_element(&mut t, &eid, |dom, idx, controls, base| Ok(dom.click(idx, controls, base)?))?;
    follow(&state, &mut t, effect).await?;
    ok(Value::Null)
}

async fn send_keys(
    State(state): State<Arc<BrowserState>>,
    Path((sid, eid)): Path<(String, String)>,
    body: Bytes,
) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let body = body_json(&body)?;
    let text = str_field(&body, "text")?.to_string();
    let mut t = tab.lock().await;
    let effect = with_element(&mut t, &eid, |dom, idx, controls, base| {
        Ok(dom.send_keys(idx, &text, controls, base)?)
    })?;
    follow(&state, &mut t, effect).await?;
    ok(Value::Null)
}

async fn clear(State(state): State<Arc<BrowserState>>, Path((sid, eid)): Path<(String, String)>) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let mut t = tab.lock().await;
    with_element(&mut t, &eid, |dom, idx, controls, _| Ok(dom.clear(idx, controls)?))?;
    ok(Value::Null)
}

async fn text(State(state): State<Arc<BrowserState>>, Path((sid, eid)): Path<(String, String)>) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let mut t = tab.lock().await;
    let s = with_element(&mut t, &eid, |dom, idx, _, _| Ok(dom.inner_text(idx)))?;
    ok(json!(s))
}

async fn tag_name(State(state): State<Arc<BrowserState>>, Path((sid, eid)): Path<(String, String)>) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let mut t = tab.lock().await;
    let s = with_element(&mut t, &eid, |dom, idx, _, _| Ok(dom.tag(idx)))?;
    ok(json!(s))
}

async fn attribute(
    State(state): State<Arc<BrowserState>>,
    Path((sid, eid, name)): Path<(String, String, String)>,
) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let mut t = tab.lock().await;
    let v = with_element(&mut t, &eid, |dom, idx, _, _| Ok(dom.attr(idx, &name)))?;
    ok(json!(v))
}

async fn property(
    State(state): State<Arc<BrowserState>>,
    Path((sid, eid, name)): Path<(String, String, String)>,
) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let mut t = tab.lock().await;
    let v = with_element(&mut t, &eid, |dom, idx, controls, _| {
        Ok(match name.as_str() {
            "value" => json!(dom.value(idx, controls)),
            "checked" | "selected" => json!(dom.checked(idx, controls)),
            "tagName" => json!(dom.tag(idx).to_ascii_uppercase()),
            "textContent" => json!(dom.text_content(idx)),
            "innerText" => json!(dom.inner_text(idx)),
            "className" => json!(dom.attr(idx, "class").unwrap_or_default()),
            other => json!(dom.attr(idx, other)),
        })
    })?;
    ok(v)
}

fn to_json(t: &Tab, v: Val) -> Value {
    match v {
        Val::Elem(i) => t.element_ref(i),
        Val::List(items) => Value::Array(items.into_iter().map(|i| t.element_ref(i)).collect()),
        Val::Str(s) => json!(s),
        Val::Num(n) => json!(n),
        Val::Bool(b) => json!(b),
        Val::Null => Value::Null,
    }
}

fn from_json(t: &Tab, v: &Value) -> Result<Val, WdError> {
    Ok(match v {
        Value::Object(m) if m.contains_key(ELEMENT_KEY) => {
            let id = m[ELEMENT_KEY].as_str().unwrap_or_default();
            Val::Elem(t.resolve(id)?)
        }
        Value::String(s) => Val::Str(s.clone()),
        Value::Number(n) => Val::Num(n.as_f64().unwrap_or(0.0)),
        Value::Bool(b) => Val::Bool(*b),
        Value::Array(items) => {
            let mut out = Vec::new();
            for item in items {
                match from_json(t, item)? {
                    Val::Elem(i) => out.push(i),
                    _ => return Err(WdError::invalid_argument("only element arrays are supported")),
                }
            }
            Val::List(out)
        }
        _ => Val::Null,
    })
}

async fn execute(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>, body: Bytes) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let body = body_json(&body)?;
    let script_src = str_field(&body, "script")?.to_string();
    let t = tab.lock().await;
    let args = body
        .get("args")
        .and_then(Value::as_array)
        .map(|a| a.iter().map(|v| from_json(&t, v)).collect::<Result<Vec<_>, _>>())
        .transpose()?
        .unwrap_or_default();
    let result = {
        let dom = Dom::parse(t.source());
        script::eval(&dom, &t.controls, &script_src, &args)
    };
    match result {
        Ok(v) => ok(to_json(&t, v)),
        Err(m) => Err(WdError::javascript(m)),
    }
}

async fn screenshot(State(state): State<Arc<BrowserState>>, Path(sid): Path<String>) -> WdResult {
    let tab = tab(&state, &sid).await?;
    let t = tab.lock().await;
    let png = {
        let dom = Dom::parse(t.source());
        screenshot::render(&t.url(), &dom, &t.controls)
    };
    ok(json!(base64::engine::general_purpose::STANDARD.encode(png)))
}

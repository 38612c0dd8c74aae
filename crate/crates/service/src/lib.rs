//! REST API for browsing stored sessions and interviewing their personas.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/sessions?offset=&limit=` | summaries |
//! | GET | `/sessions/{id}` | full record |
//! | GET | `/sessions/{id}/actions` | action trace |
//! | GET | `/sessions/{id}/memories` | memory trace |
//! | GET | `/sessions/{id}/screenshots` | screenshot URLs |
//! | GET | `/sessions/{id}/screenshots/{k}` | PNG for action `k` |
//! | GET | `/stats?group_by=gender\|income_bin` | aggregate rows |
//! | POST | `/interviews` `{session_id}` | start an interview |
//! | GET | `/interviews/{id}` | context and history |
//! | POST | `/interviews/{id}/messages` `{text}` | NDJSON reply stream |

mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uxsim_core::interview::{InterviewContext, InterviewSettings};
use uxsim_core::llm::{CapturedPrompt, Gateway};
use uxsim_core::money::Money;
use uxsim_core::persona::standard_income_bins;
use uxsim_core::record::{export_action_trace, export_memory_trace, OutcomeKind};
use uxsim_core::stats::{aggregate_stats, GroupBy};

pub use store::{SessionEntry, SessionStore};

const DEFAULT_LIMIT: usize = 50;
/// Words per streamed chunk of an interview reply.
const CHUNK_WORDS: usize = 4;

struct Interview {
    context: tokio::sync::Mutex<InterviewContext>,
    gateway: Gateway,
}

pub struct AppState {
    store: SessionStore,
    gateway: Arc<Gateway>,
    template: String,
    settings: InterviewSettings,
    interviews: Mutex<HashMap<String, Arc<Interview>>>,
    next_interview: AtomicU64,
}

impl AppState {
    pub fn new(store: SessionStore, gateway: Arc<Gateway>, template: String, settings: InterviewSettings) -> Self {
        AppState {
            store,
            gateway,
            template,
            settings,
            interviews: Mutex::new(HashMap::new()),
            next_interview: AtomicU64::new(1),
        }
    }

    fn interview(&self, id: &str) -> Option<Arc<Interview>> {
        self.interviews.lock().unwrap().get(id).cloned()
    }

    /// Prompts sent on behalf of one interview, oldest first.
    pub fn captures(&self, interview_id: &str) -> Vec<CapturedPrompt> {
        self.interview(interview_id).map(|i| i.gateway.captures()).unwrap_or_default()
    }
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn not_found(what: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: what.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: message.into(),
        }
    }

    fn unsupported(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::UNSUPPORTED_MEDIA_TYPE,
            code: "unsupported_feature",
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize)]
struct SessionListing {
    id: String,
    session_id: String,
    persona: String,
    age: u32,
    gender: String,
    income: u64,
    income_bin: Option<String>,
    outcome: OutcomeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    total: Option<Money>,
    actions: usize,
}

#[derive(Debug, Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default)]
    limit: Option<usize>,
}

async fn list_sessions(State(app): State<Arc<AppState>>, Query(page): Query<Page>) -> Json<Value> {
    let bins = standard_income_bins();
    let all = app.store.records();
    let total = all.len();
    let limit = page.limit.unwrap_or(DEFAULT_LIMIT);
    let sessions: Vec<SessionListing> = all
        .into_iter()
        .skip(page.offset)
        .take(limit)
        .map(|(e, r)| SessionListing {
            id: e.id,
            session_id: r.session_id.clone(),
            income_bin: bins.iter().find(|b| b.contains(r.persona.income)).map(|b| b.label()),
            persona: r.persona.name.clone(),
            age: r.persona.age,
            gender: r.persona.gender.clone(),
            income: r.persona.income,
            outcome: r.outcome.kind,
            total: r.outcome.total,
            actions: r.actions.len(),
        })
        .collect();
    Json(json!({ "total": total, "offset": page.offset, "limit": limit, "sessions": sessions }))
}

fn load(app: &AppState, id: &str) -> ApiResult<(SessionEntry, uxsim_core::record::SessionRecord)> {
    let entry = app
        .store
        .find(id)
        .ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))?;
    let record = app.store.load(&entry).map_err(ApiError::internal)?;
    Ok((entry, record))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (_, record) = load(&app, &id)?;
    Ok(Json(serde_json::to_value(record).expect("record serializes")))
}

async fn get_actions(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (_, record) = load(&app, &id)?;
    Ok(Json(json!({
        "trace": export_action_trace(&record.actions),
        "actions": record.actions,
    })))
}

async fn get_memories(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (_, mut record) = load(&app, &id)?;
    for m in &mut record.memories {
        m.embedding = None;
    }
    Ok(Json(json!({
        "trace": export_memory_trace(&record.memories),
        "memories": record.memories,
    })))
}

async fn list_screenshots(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (_, record) = load(&app, &id)?;
    let shots: Vec<Value> = record
        .screenshots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let url = s.as_ref().map(|_| format!("/sessions/{id}/screenshots/{}", i + 1));
            json!({ "action": i + 1, "url": url })
        })
        .collect();
    Ok(Json(json!({ "screenshots": shots })))
}

async fn get_screenshot(
    State(app): State<Arc<AppState>>,
    Path((id, k)): Path<(String, usize)>,
) -> ApiResult<Response> {
    let (entry, record) = load(&app, &id)?;
    let name = k
        .checked_sub(1)
        .and_then(|i| record.screenshots.get(i))
        .and_then(|s| s.as_deref())
        .ok_or_else(|| ApiError::not_found(format!("session {id:?} has no screenshot {k}")))?;
    // Names come from our own records but are still kept to one component.
    if name.contains('/') || name.contains("..") {
        return Err(ApiError::internal(format!("bad screenshot name {name:?}")));
    }
    let bytes = tokio::fs::read(entry.dir.join(name))
        .await
        .map_err(|e| ApiError::not_found(format!("screenshot {k}: {e}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct StatsQuery {
    group_by: Option<String>,
}

async fn get_stats(State(app): State<Arc<AppState>>, Query(q): Query<StatsQuery>) -> ApiResult<Json<Value>> {
    let group_by: GroupBy = q
        .group_by
        .as_deref()
        .unwrap_or("income_bin")
        .parse()
        .map_err(ApiError::bad_request)?;
    let records: Vec<_> = app.store.records().into_iter().map(|(_, r)| r).collect();
    Ok(Json(json!({ "group_by": group_by, "rows": aggregate_stats(&records, group_by) })))
}

fn json_body(headers: &HeaderMap, body: &Bytes) -> ApiResult<Value> {
    let ctype = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("application/json");
    if ctype.starts_with("image/") || ctype.starts_with("multipart/") {
        return Err(ApiError::unsupported(
            "image uploads are not supported; send a JSON body with a text field",
        ));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn start_interview(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let body = json_body(&headers, &body)?;
    let session_id = body
        .get("session_id")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::bad_request("session_id is required"))?;
    let (_, record) = load(&app, session_id)?;
    let id = format!("i{}", app.next_interview.fetch_add(1, Ordering::SeqCst));
    let mut context = InterviewContext::new(id.clone(), &record, &app.settings);
    context.session_id = session_id.to_string();
    let reply = json!({
        "interview_id": id,
        "session_id": session_id,
        "persona": context.persona,
        "condensed_memories": context.condensed_memories,
    });
    let interview = Interview {
        context: tokio::sync::Mutex::new(context),
        gateway: app.gateway.fork(Some(&record.persona.name)),
    };
    app.interviews.lock().unwrap().insert(id, Arc::new(interview));
    Ok((StatusCode::CREATED, Json(reply)))
}

async fn get_interview(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let interview = app
        .interview(&id)
        .ok_or_else(|| ApiError::not_found(format!("no interview {id:?}")))?;
    let ctx = interview.context.lock().await;
    Ok(Json(serde_json::to_value(&*ctx).expect("context serializes")))
}

/// Splits `text` into pieces of a few words that concatenate back to it.
pub fn reply_chunks(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut words = 0;
    for piece in text.split_inclusive(char::is_whitespace) {
        cur.push_str(piece);
        if !piece.trim().is_empty() && piece.ends_with(char::is_whitespace) {
            words += 1;
            if words == CHUNK_WORDS {
                out.push(std::mem::take(&mut cur));
                words = 0;
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

const IMAGE_FIELDS: [&str; 4] = ["image", "images", "attachment", "attachments"];

async fn send_message(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let interview = app
        .interview(&id)
        .ok_or_else(|| ApiError::not_found(format!("no interview {id:?}")))?;
    let body = json_body(&headers, &body)?;
    if IMAGE_FIELDS.iter().any(|f| body.get(f).is_some()) {
        return Err(ApiError::unsupported(
            "image input is not supported in interviews; ask in text instead",
        ));
    }
    let text = body
        .get("text")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| ApiError::bad_request("text must be a non-empty string"))?
        .to_string();

    // Held across the model call so turns of one interview stay ordered.
    let mut ctx = interview.context.lock().await;
    let req = ctx.request(&app.template, &text);
    let answer = interview.gateway.complete(req).await.map(|r| r.trim().to_string());
    let mut lines: Vec<Value> = Vec::new();
    match &answer {
        Ok(reply) => lines.extend(reply_chunks(reply).into_iter().map(|c| json!({ "chunk": c }))),
        Err(e) => lines.push(json!({ "error": e.to_string() })),
    }
    ctx.record_exchange(&text, answer.map_err(|e| e.to_string()));
    lines.push(json!({ "done": true, "turns": ctx.history.len() }));
    drop(ctx);

    let stream = futures::stream::iter(
        lines
            .into_iter()
            .map(|v| Ok::<_, std::convert::Infallible>(Bytes::from(format!("{v}\n")))),
    );
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(stream)).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/actions", get(get_actions))
        .route("/sessions/{id}/memories", get(get_memories))
        .route("/sessions/{id}/screenshots", get(list_screenshots))
        .route("/sessions/{id}/screenshots/{k}", get(get_screenshot))
        .route("/stats", get(get_stats))
        .route("/interviews", post(start_interview))
        .route("/interviews/{id}", get(get_interview))
        .route("/interviews/{id}/messages", post(send_message))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_concatenate_back() {
        let text = "I picked Navy because it looks professional and it was the cheapest one.";
        let chunks = reply_chunks(text);
        assert!(chunks.len() > 1);
        assert_eq!(chunks.concat(), text);
        assert_eq!(reply_chunks(""), Vec::<String>::new());
    }
}

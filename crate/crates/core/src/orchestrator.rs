//! Runs a batch of persona sessions on a bounded worker pool and persists
//! each one under `out_dir/batch_id/session_id/`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use crate::agent::{run_session_with_cancel, save_session, AgentConfig, AgentSettings, CancelFlag, SessionTarget};
use crate::browser::BrowserConfig;
use crate::llm::Gateway;
use crate::money::Money;
use crate::persona::Persona;
use crate::recipe::Recipe;
use crate::record::{OutcomeKind, RecordError, SessionOutcome, SessionRecord};

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub batch_id: String,
    pub out_dir: PathBuf,
    pub target_url: String,
    pub recipe: Arc<Recipe>,
    pub browser: BrowserConfig,
    pub settings: AgentSettings,
    /// Used for personas that carry no intent of their own.
    pub default_intent: String,
    pub parallelism: usize,
    /// Stops running sessions at their next step and skips the rest; every
    /// persona still gets a record.
    pub cancel: CancelFlag,
}

impl BatchConfig {
    pub fn batch_dir(&self) -> PathBuf {
        self.out_dir.join(&self.batch_id)
    }
}

/// One line of `index.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub persona: String,
    pub gender: String,
    pub income: u64,
    pub outcome: OutcomeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<Money>,
    pub actions: usize,
}

impl SessionSummary {
    pub fn of(record: &SessionRecord) -> Self {
        SessionSummary {
            session_id: record.session_id.clone(),
            persona: record.persona.name.clone(),
            gender: record.persona.gender.clone(),
            income: record.persona.income,
            outcome: record.outcome.kind,
            total: record.outcome.total,
            actions: record.actions.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchIndex {
    pub batch_id: String,
    pub target_url: String,
    pub recipe_id: String,
    pub started: DateTime<Utc>,
    pub ended: DateTime<Utc>,
    pub sessions: Vec<SessionSummary>,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid batch config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Record(#[from] RecordError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> OrchestratorError + '_ {
    move |e| OrchestratorError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// `s001`, `s002`, ... in persona order.
pub fn session_id(index: usize) -> String {
    format!("s{:03}", index + 1)
}

/// A record for a session that never got to run.
fn failed_record(id: &str, config: AgentConfig, batch: &BatchConfig, detail: String) -> SessionRecord {
    let now = Utc::now();
    SessionRecord {
        session_id: id.to_string(),
        persona: config.persona.clone(),
        config,
        target_url: batch.target_url.clone(),
        recipe_id: batch.recipe.id.clone(),
        actions: vec![],
        memories: vec![],
        screenshots: vec![],
        outcome: SessionOutcome::error(detail),
        warnings: vec![],
        started: now,
        ended: now,
    }
}

/// Runs every persona once. Sessions that fail end with an `error`
/// outcome; only an invalid config or an unwritable output directory
/// stops the batch.
pub async fn run_batch(
    personas: Vec<Persona>,
    gateway: Arc<Gateway>,
    batch: &BatchConfig,
) -> Result<BatchIndex, OrchestratorError> {
    if batch.parallelism < 1 {
        return Err(OrchestratorError::Config("parallelism must be at least 1".into()));
    }
    batch.settings.validate().map_err(OrchestratorError::Config)?;
    let dir = batch.batch_dir();
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let started = Utc::now();

    let permits = Arc::new(Semaphore::new(batch.parallelism));
    let shared = Arc::new(batch.clone());
    let mut tasks = JoinSet::new();
    for (i, persona) in personas.into_iter().enumerate() {
        let id = session_id(i);
        let config = AgentConfig::new(persona, &batch.default_intent, batch.settings.clone());
        let gw = Arc::new(gateway.fork(Some(&config.persona.name)));
        let batch = shared.clone();
        let permits = permits.clone();
        tasks.spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore is never closed");
            if batch.cancel.is_cancelled() {
                return (i, failed_record(&id, config, &batch, "interrupted before the session started".into()));
            }
            let session_dir = batch.batch_dir().join(&id);
            if let Err(e) = std::fs::create_dir_all(&session_dir) {
                let detail = format!("creating {}: {e}", session_dir.display());
                return (i, failed_record(&id, config, &batch, detail));
            }
            let target = SessionTarget {
                session_id: id.clone(),
                url: batch.target_url.clone(),
                recipe: batch.recipe.clone(),
                browser: batch.browser.clone(),
                dir: session_dir,
            };
            // Run inside its own task so a panic costs one session only.
            let run = tokio::spawn({
                let config = config.clone();
                let cancel = batch.cancel.clone();
                async move { run_session_with_cancel(config, gw, &target, &cancel).await }
            });
            let record = match run.await {
                Ok(Ok(r)) => r,
                Ok(Err(e)) => failed_record(&id, config, &batch, e.to_string()),
                Err(e) => failed_record(&id, config, &batch, format!("session task failed: {e}")),
            };
            tracing::info!(session = %id, outcome = record.outcome.kind.as_str(), "session finished");
            (i, record)
        });
    }

    let mut done = Vec::new();
    while let Some(joined) = tasks.join_next().await {
        let (i, record) = joined.expect("batch workers do not panic");
        save_session(&record, &dir.join(&record.session_id))?;
        done.push((i, SessionSummary::of(&record)));
    }
    done.sort_by_key(|(i, _)| *i);

    let index = BatchIndex {
        batch_id: batch.batch_id.clone(),
        target_url: batch.target_url.clone(),
        recipe_id: batch.recipe.id.clone(),
        started,
        ended: Utc::now(),
        sessions: done.into_iter().map(|(_, s)| s).collect(),
    };
    let path = dir.join("index.json");
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(index)
}

/// Every `record.json` under `dir`, for a batch directory or an output
/// directory holding several batches. Sorted by path.
pub fn load_records(dir: &Path) -> Result<Vec<SessionRecord>, OrchestratorError> {
    let mut paths = Vec::new();
    collect_records(dir, &mut paths, 0)?;
    paths.sort();
    paths.iter().map(|p| SessionRecord::load(p).map_err(Into::into)).collect()
}

fn collect_records(dir: &Path, out: &mut Vec<PathBuf>, depth: usize) -> Result<(), OrchestratorError> {
    let record = dir.join("record.json");
    if record.is_file() {
        out.push(record);
        return Ok(());
    }
    if depth >= 3 {
        return Ok(());
    }
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            collect_records(&path, out, depth + 1)?;
        }
    }
    Ok(())
}

//! Append-only memory stream with retrieval scored by importance,
//! relevance and recency.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Recency multiplier per fast-loop step of age.
pub const RECENCY_DECAY: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Observation,
    Plan,
    Action,
    Reflection,
    Wonder,
}

impl MemoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MemoryKind::Observation => "observation",
            MemoryKind::Plan => "plan",
            MemoryKind::Action => "action",
            MemoryKind::Reflection => "reflection",
            MemoryKind::Wonder => "wonder",
        }
    }
}

impl fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryPiece {
    pub id: u64,
    pub kind: MemoryKind,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    pub step: u32,
    pub importance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

/// A memory before the stream assigns its id and timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct NewMemory {
    pub kind: MemoryKind,
    pub text: String,
    pub step: u32,
    pub importance: f64,
    pub embedding: Option<Vec<f32>>,
}

impl NewMemory {
    pub fn new(kind: MemoryKind, text: impl Into<String>, step: u32, importance: f64) -> Self {
        NewMemory {
            kind,
            text: text.into(),
            step,
            importance,
            embedding: None,
        }
    }

    pub fn with_embedding(mut self, embedding: Vec<f32>) -> Self {
        self.embedding = Some(embedding);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalWeights {
    pub w_importance: f64,
    pub w_relevance: f64,
    pub w_recency: f64,
}

impl RetrievalWeights {
    pub const fn new(w_importance: f64, w_relevance: f64, w_recency: f64) -> Self {
        RetrievalWeights {
            w_importance,
            w_relevance,
            w_recency,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [self.w_importance, self.w_relevance, self.w_recency];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err("retrieval weights must be finite and non-negative".into());
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err("retrieval weights must not all be zero".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopProfile {
    Fast,
    Slow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profiles {
    pub fast: RetrievalWeights,
    pub slow: RetrievalWeights,
}

impl Default for Profiles {
    fn default() -> Self {
        Profiles {
            fast: RetrievalWeights::new(1.0, 1.0, 3.0),
            slow: RetrievalWeights::new(1.0, 3.0, 1.0),
        }
    }
}

impl Profiles {
    pub fn get(&self, profile: LoopProfile) -> RetrievalWeights {
        match profile {
            LoopProfile::Fast => self.fast,
            LoopProfile::Slow => self.slow,
        }
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Some(0.0);
    }
    Some(dot / (na.sqrt() * nb.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    /// Relevance was wanted but could not be computed.
    pub missing_relevance: bool,
}

/// Blended score of one memory at fast-loop step `now_step`.
pub fn score(piece: &MemoryPiece, query: Option<&[f32]>, now_step: u32, w: &RetrievalWeights) -> Score {
    let importance = piece.importance / 10.0;
    let age = now_step.saturating_sub(piece.step);
    let recency = RECENCY_DECAY.powi(age as i32);
    let (relevance, missing) = if w.w_relevance > 0.0 {
        match (piece.embedding.as_deref(), query) {
            (Some(e), Some(q)) => match cosine(e, q) {
                Some(c) => (c, false),
                None => (0.0, true),
            },
            _ => (0.0, true),
        }
    } else {
        (0.0, false)
    };
    Score {
        value: w.w_importance * importance + w.w_relevance * relevance + w.w_recency * recency,
        missing_relevance: missing,
    }
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("memory text must not be empty")]
    EmptyText,
    #[error("importance {0} is outside [0, 10]")]
    Importance(f64),
    #[error("memory file {path}: {message}")]
    File { path: String, message: String },
}

type Clock = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Default)]
struct Inner {
    pieces: Vec<MemoryPiece>,
    warnings: Vec<String>,
}

/// One session's memories. Appends from several tasks are serialized by an
/// internal lock, so ids stay dense and timestamps never go backwards.
pub struct MemoryStream {
    inner: Mutex<Inner>,
    clock: Clock,
}

impl Default for MemoryStream {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for MemoryStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryStream").field("len", &self.len()).finish()
    }
}

impl MemoryStream {
    pub fn new() -> Self {
        Self::with_clock(Box::new(Utc::now))
    }

    pub fn with_clock(clock: Clock) -> Self {
        MemoryStream {
            inner: Mutex::new(Inner::default()),
            clock,
        }
    }

    pub fn append(&self, m: NewMemory) -> Result<u64, MemoryError> {
        if m.text.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        if !(0.0..=10.0).contains(&m.importance) {
            return Err(MemoryError::Importance(m.importance));
        }
        let now = (self.clock)();
        let mut inner = self.inner.lock().unwrap();
        let id = inner.pieces.len() as u64 + 1;
        let timestamp = inner.pieces.last().map_or(now, |p| p.timestamp.max(now));
        inner.pieces.push(MemoryPiece {
            id,
            kind: m.kind,
            text: m.text,
            timestamp,
            step: m.step,
            importance: m.importance,
            embedding: m.embedding,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `k` best pieces, best first. Equal scores go to the newer piece.
    pub fn retrieve(&self, query: Option<&[f32]>, now_step: u32, weights: &RetrievalWeights, k: usize) -> Vec<MemoryPiece> {
        if k == 0 {
            return vec![];
        }
        let mut inner = self.inner.lock().unwrap();
        let mut missing = 0usize;
        let mut scored: Vec<(f64, &MemoryPiece)> = inner
            .pieces
            .iter()
            .map(|p| {
                let s = score(p, query, now_step, weights);
                missing += usize::from(s.missing_relevance);
                (s.value, p)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.id.cmp(&a.1.id)));
        let out: Vec<MemoryPiece> = scored.into_iter().take(k).map(|(_, p)| p.clone()).collect();
        if missing > 0 {
            let msg = format!("{missing} memories scored without relevance (no embedding)");
            tracing::warn!("{msg}");
            inner.warnings.push(msg);
        }
        out
    }

    /// Every piece in id order.
    pub fn export_trace(&self) -> Vec<MemoryPiece> {
        self.inner.lock().unwrap().pieces.clone()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.inner.lock().unwrap().warnings.clone()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in self.export_trace() {
            out.push_str(&serde_json::to_string(&p).expect("memory serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        let file_err = |e: std::io::Error| MemoryError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut f = std::fs::File::create(path).map_err(file_err)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(file_err)
    }
}

/// Reads a JSON-lines memory file.
pub fn load_jsonl(path: &Path) -> Result<Vec<MemoryPiece>, MemoryError> {
    let err = |message: String| MemoryError::File {
        path: path.display().to_string(),
        message,
    };
    let f = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

//! JSON-lines transcripts of provider traffic, for record and replay.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptEntry {
    Complete {
        digest: String,
        purpose: String,
        reply: String,
    },
    Embed {
        digest: String,
        embedding: Vec<f32>,
    },
}

impl TranscriptEntry {
    fn digest(&self) -> &str {
        match self {
            TranscriptEntry::Complete { digest, .. } | TranscriptEntry::Embed { digest, .. } => digest,
        }
    }
}

pub(crate) struct Recorder {
    file: Mutex<std::fs::File>,
}

impl Recorder {
    pub(crate) fn create(path: &Path) -> Result<Self, LlmError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| LlmError::Transcript(e.to_string()))?;
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        Ok(Recorder { file: Mutex::new(file) })
    }

    pub(crate) fn write(&self, entry: &TranscriptEntry) -> Result<(), LlmError> {
        let mut line = serde_json::to_string(entry).map_err(|e| LlmError::Transcript(e.to_string()))?;
        line.push('\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| LlmError::Transcript(e.to_string()))
    }
}

/// Recorded replies by digest. Repeated identical requests get the
/// recorded replies in order; once used up, the last one repeats.
pub(crate) struct ReplayIndex {
    entries: HashMap<String, (Vec<TranscriptEntry>, usize)>,
}

impl ReplayIndex {
    pub(crate) fn load(path: &Path) -> Result<Self, LlmError> {
        let f = std::fs::File::open(path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        let mut entries: HashMap<String, (Vec<TranscriptEntry>, usize)> = HashMap::new();
        for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Transcript(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|e| LlmError::Transcript(format!("{} line {}: {e}", path.display(), n + 1)))?;
            entries.entry(entry.digest().to_string()).or_default().0.push(entry);
        }
        Ok(ReplayIndex { entries })
    }

    pub(crate) fn next(&mut self, digest: &str) -> Option<TranscriptEntry> {
        let (list, cursor) = self.entries.get_mut(digest)?;
        let i = (*cursor).min(list.len() - 1);
        *cursor += 1;
        Some(list[i].clone())
    }
}

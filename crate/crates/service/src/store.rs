//! Read-only view over session directories on disk. Nothing is cached, so
//! a restart or a new batch is picked up on the next request.

use std::path::{Path, PathBuf};

use uxsim_core::record::SessionRecord;

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

/// A session directory and the id the API knows it by.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionEntry {
    pub id: String,
    pub dir: PathBuf,
}

fn walk(root: &Path, dir: &Path, depth: usize, out: &mut Vec<SessionEntry>) {
    if dir.join("record.json").is_file() {
        let rel = dir.strip_prefix(root).unwrap_or(dir);
        let id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join(".");
        out.push(SessionEntry {
            id,
            dir: dir.to_path_buf(),
        });
        return;
    }
    if depth >= 3 {
        return;
    }
    let Ok(entries) = std::fs::read_dir(dir) else {
        return;
    };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            walk(root, &p, depth + 1, out);
        }
    }
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SessionStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Every session below the root, sorted by id. Ids are the session's
    /// path relative to the root with `.` between components, such as
    /// `batch-1.s001`.
    pub fn entries(&self) -> Vec<SessionEntry> {
        let mut out = Vec::new();
        walk(&self.root, &self.root, 0, &mut out);
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    pub fn find(&self, id: &str) -> Option<SessionEntry> {
        self.entries().into_iter().find(|e| e.id == id)
    }

    pub fn load(&self, entry: &SessionEntry) -> Result<SessionRecord, String> {
        SessionRecord::load(&entry.dir.join("record.json")).map_err(|e| e.to_string())
    }

    /// All records that load; unreadable ones are skipped with a warning.
    pub fn records(&self) -> Vec<(SessionEntry, SessionRecord)> {
        self.entries()
            .into_iter()
            .filter_map(|e| match self.load(&e) {
                Ok(r) => Some((e, r)),
                Err(err) => {
                    tracing::warn!(session = %e.id, "skipping unreadable record: {err}");
                    None
                }
            })
            .collect()
    }
}

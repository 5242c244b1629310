//! Append-only store of saved unit sequences, one JSON document per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use capacity_core::analytics::StorageSequence;

use crate::error::ServiceError;

#[derive(Debug)]
pub struct SequenceStore {
    path: Option<PathBuf>,
    // the lock is also the single writer
    saved: Mutex<Vec<StorageSequence>>,
}

impl SequenceStore {
    /// A store that lives only as long as the process.
    pub fn in_memory() -> Self {
        SequenceStore {
            path: None,
            saved: Mutex::new(Vec::new()),
        }
    }

    /// Open (or start) the store at `path`, replaying what is already there.
    pub fn open(path: &Path) -> Result<Self, ServiceError> {
        let mut saved = Vec::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| ServiceError::internal(e.to_string()))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| ServiceError::internal(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let sequence: StorageSequence = serde_json::from_str(&line).map_err(|e| {
                    ServiceError::bad_request(format!("{}:{}: {e}", path.display(), i + 1))
                })?;
                saved.push(sequence);
            }
        }
        Ok(SequenceStore {
            path: Some(path.to_path_buf()),
            saved: Mutex::new(saved),
        })
    }

    pub fn list(&self) -> Vec<StorageSequence> {
        self.saved.lock().expect("sequence store poisoned").clone()
    }

    /// Build the next sequence from its number and persist it.
    pub fn append_with(
        &self,
        build: impl FnOnce(u64) -> Result<StorageSequence, ServiceError>,
    ) -> Result<StorageSequence, ServiceError> {
        let mut saved = self.saved.lock().expect("sequence store poisoned");
        let next = saved.last().map_or(1, |s| s.sequence_number + 1);
        let sequence = build(next)?;
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&sequence).expect("sequences serialize");
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(|e| ServiceError::internal(format!("{}: {e}", path.display())))?;
        }
        saved.push(sequence.clone());
        Ok(sequence)
    }
}

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendRequest, BackendResponse};
use crate::chain::ChainOfThought;
use crate::prompt::PromptText;

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub prompt_sha256: String,
    pub prompt: String,
    pub response: String,
    pub recorded_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Inserted,
    /// An entry for the same prompt existed and was replaced.
    Replaced,
}

pub fn prompt_sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Prompt→response store keyed by the SHA-256 of the prompt text.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, ReplayEntry>>,
    writer: Mutex<()>,
}

impl ReplayBackend {
    pub fn in_memory() -> Self {
        ReplayBackend::default()
    }

    /// Loads `path`; later lines override earlier ones for the same prompt.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(line)
                .map_err(|e| BackendError::Io(format!("{} line {}: {e}", path.display(), n + 1)))?;
            if prompt_sha256(&entry.prompt) != entry.prompt_sha256 {
                return Err(BackendError::Io(format!(
                    "{} line {}: prompt_sha256 does not match prompt",
                    path.display(),
                    n + 1
                )));
            }
            entries.insert(entry.prompt_sha256.clone(), entry);
        }
        Ok(ReplayBackend {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(()),
        })
    }

    /// Like [`ReplayBackend::load`] but starts empty when `path` is absent.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(ReplayBackend {
                path: Some(path.to_path_buf()),
                ..Default::default()
            })
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, prompt: &str) -> Option<String> {
        self.entries
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(&prompt_sha256(prompt))
            .map(|e| e.response.clone())
    }

    /// Stores a response; appends it to the backing file when there is one.
    pub fn record(
        &self,
        prompt: &PromptText,
        response_text: &str,
    ) -> Result<RecordOutcome, BackendError> {
        let entry = ReplayEntry {
            prompt_sha256: prompt_sha256(&prompt.text),
            prompt: prompt.text.clone(),
            response: response_text.to_string(),
            recorded_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(path) = &self.path {
            let mut line =
                serde_json::to_string(&entry).map_err(|e| BackendError::Io(e.to_string()))?;
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        }
        let key = entry.prompt_sha256.clone();
        let previous = self
            .entries
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key.clone(), entry);
        Ok(match previous {
            Some(_) => {
                log::warn!("replay entry {key} re-recorded; latest response wins");
                RecordOutcome::Replaced
            }
            None => RecordOutcome::Inserted,
        })
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let start = Instant::now();
        let hash = prompt_sha256(&request.prompt.text);
        let text = self
            .entries
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(&hash)
            .map(|e| e.response.clone())
            .ok_or(BackendError::MissingRecording {
                prompt_sha256: hash,
            })?;
        Ok(BackendResponse {
            text,
            latency: start.elapsed(),
            provider_tag: self.tag().to_string(),
        })
    }

    fn tag(&self) -> &str {
        "replay"
    }
}

/// Forwards to an inner backend and records every successful exchange.
pub struct RecordingBackend<B> {
    inner: B,
    store: Arc<ReplayBackend>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, store: Arc<ReplayBackend>) -> Self {
        RecordingBackend { inner, store }
    }

    pub fn store(&self) -> &ReplayBackend {
        &self.store
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let response = self.inner.complete(request)?;
        self.store.record(&request.prompt, &response.text)?;
        Ok(response)
    }

    fn tag(&self) -> &str {
        self.inner.tag()
    }

    fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight()
    }

    fn annotate(&self, chain: &mut ChainOfThought) {
        self.inner.annotate(chain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptPhase;

    fn prompt(text: &str) -> PromptText {
        PromptText {
            text: text.into(),
            phase: PromptPhase::Combined,
        }
    }

    #[test]
    fn lookup_is_byte_exact() {
        let store = ReplayBackend::in_memory();
        store.record(&prompt("q"), "answer\n").unwrap();
        let r = store.complete(&BackendRequest::new(prompt("q"))).unwrap();
        assert_eq!(r.text, "answer\n");
        assert_eq!(r.provider_tag, "replay");
    }

    #[test]
    fn unknown_prompt_names_its_hash() {
        let store = ReplayBackend::in_memory();
        match store.complete(&BackendRequest::new(prompt("nope"))) {
            Err(BackendError::MissingRecording { prompt_sha256: h }) => {
                assert_eq!(h, prompt_sha256("nope"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn latest_recording_wins() {
        let store = ReplayBackend::in_memory();
        assert_eq!(
            store.record(&prompt("q"), "a").unwrap(),
            RecordOutcome::Inserted
        );
        assert_eq!(
            store.record(&prompt("q"), "b").unwrap(),
            RecordOutcome::Replaced
        );
        assert_eq!(store.get("q").as_deref(), Some("b"));
    }

    #[test]
    fn one_byte_difference_is_a_separate_entry() {
        let store = ReplayBackend::in_memory();
        store.record(&prompt("abc"), "1").unwrap();
        store.record(&prompt("abd"), "2").unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.get("abc").as_deref(), Some("1"));
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.jsonl");
        let store = ReplayBackend::open(&path).unwrap();
        store.record(&prompt("q1"), "r1").unwrap();
        store.record(&prompt("q2"), "r2").unwrap();
        store.record(&prompt("q1"), "r1b").unwrap();
        let reloaded = ReplayBackend::load(&path).unwrap();
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded.get("q1").as_deref(), Some("r1b"));
        let first: ReplayEntry =
            serde_json::from_str(fs::read_to_string(&path).unwrap().lines().next().unwrap())
                .unwrap();
        assert_eq!(first.prompt_sha256, prompt_sha256("q1"));
        assert!(chrono::DateTime::parse_from_rfc3339(&first.recorded_at).is_ok());
    }

    #[test]
    fn tampered_hash_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(
            &path,
            r#"{"prompt_sha256":"00","prompt":"q","response":"r","recorded_at":"2024-01-01T00:00:00Z"}"#,
        )
        .unwrap();
        assert!(ReplayBackend::load(&path).is_err());
    }
}

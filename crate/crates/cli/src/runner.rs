//! Batch execution over a corpus with a bounded worker pool.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use mcot_core::backend::Backend;
use mcot_core::chain::{deserialize_trace, serialize_trace, MultiplexTrace, Task};
use mcot_core::orchestrator::{judge_for, Orchestrator, RunConfig};
use mcot_core::prompt::PromptSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TRACE_DIR: &str = "traces";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("output directory {path} is not writable: {source}")]
    OutDir {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub parallel: usize,
    /// Skip tasks whose trace file already exists and is valid.
    pub resume: bool,
    pub prompts: Option<PromptSet>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            parallel: 1,
            resume: false,
            prompts: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Ok,
    Resumed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub status: TaskStatus,
    /// Trace path relative to the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    pub rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: serde_json::Value,
    pub succeeded: usize,
    pub failed: usize,
    pub tasks: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub succeeded: usize,
    pub failed: usize,
    pub resumed: usize,
    pub manifest: PathBuf,
}

/// File name for a task id. Ids that are not already safe get a short hash
/// suffix so distinct ids never collide.
pub fn trace_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    if safe == id && !id.starts_with('.') {
        format!("{id}.json")
    } else {
        let h = hex::encode(&Sha256::digest(id.as_bytes())[..4]);
        format!("{}-{h}.json", safe.trim_start_matches('.'))
    }
}

fn probe_writable(dir: &Path) -> Result<(), RunnerError> {
    let err = |source| RunnerError::OutDir {
        path: dir.display().to_string(),
        source,
    };
    fs::create_dir_all(dir.join(TRACE_DIR)).map_err(err)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(err)?;
    fs::remove_file(&probe).map_err(err)
}

fn existing_trace(path: &Path) -> Option<MultiplexTrace> {
    let text = fs::read_to_string(path).ok()?;
    deserialize_trace(&text).ok()
}

/// Runs every task and writes `traces/<id>.json` plus `manifest.json`.
///
/// A task failure is recorded in the manifest and does not stop the batch.
/// Fails before any backend call when `out_dir` cannot be written.
pub fn run_corpus(
    tasks: &[Task],
    backend: Arc<dyn Backend>,
    config: &RunConfig,
    options: &RunOptions,
) -> Result<RunSummary, RunnerError> {
    let judge = judge_for(&config.judge_config, backend.clone())
        .map_err(|e| RunnerError::Config(e.to_string()))?;
    let mut orchestrator =
        Orchestrator::new(config.clone(), judge).map_err(|e| RunnerError::Config(e.to_string()))?;
    if let Some(p) = &options.prompts {
        orchestrator = orchestrator.with_prompts(p.clone());
    }
    probe_writable(&options.out_dir)?;

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ManifestEntry, RunnerError>>>> =
        tasks.iter().map(|_| Mutex::new(None)).collect();
    let workers = options.parallel.max(1).min(tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(i) else { break };
                let entry = run_one(task, &orchestrator, backend.as_ref(), options);
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(entry);
            });
        }
    });

    let mut entries = Vec::with_capacity(tasks.len());
    for slot in slots {
        entries.push(
            slot.into_inner()
                .unwrap_or_else(|p| p.into_inner())
                .expect("every task ran")?,
        );
    }
    let failed = entries
        .iter()
        .filter(|e| e.status == TaskStatus::Failed)
        .count();
    let resumed = entries
        .iter()
        .filter(|e| e.status == TaskStatus::Resumed)
        .count();
    let manifest = Manifest {
        config: config.snapshot(backend.tag()),
        succeeded: entries.len() - failed,
        failed,
        tasks: entries,
    };
    let path = options.out_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|source| RunnerError::Write {
        path: path.display().to_string(),
        source,
    })?;
    Ok(RunSummary {
        succeeded: manifest.succeeded,
        failed,
        resumed,
        manifest: path,
    })
}

fn run_one(
    task: &Task,
    orchestrator: &Orchestrator,
    backend: &dyn Backend,
    options: &RunOptions,
) -> Result<ManifestEntry, RunnerError> {
    let rel = format!("{TRACE_DIR}/{}", trace_file_name(&task.id));
    let path = options.out_dir.join(&rel);
    if options.resume {
        if let Some(t) = existing_trace(&path).filter(|t| t.task_id == task.id) {
            log::info!("{}: resumed from existing trace", task.id);
            return Ok(ManifestEntry {
                id: task.id.clone(),
                status: TaskStatus::Resumed,
                trace: Some(rel),
                rounds: t.rounds.len(),
                error: None,
            });
        }
    }
    match orchestrator.run(task, backend) {
        Ok(trace) => {
            let text = serialize_trace(&trace).map_err(|e| RunnerError::Config(e.to_string()))?;
            fs::write(&path, text).map_err(|source| RunnerError::Write {
                path: path.display().to_string(),
                source,
            })?;
            for w in &trace.warnings {
                log::warn!("{}: {w}", task.id);
            }
            Ok(ManifestEntry {
                id: task.id.clone(),
                status: TaskStatus::Ok,
                trace: Some(rel),
                rounds: trace.rounds.len(),
                error: None,
            })
        }
        Err(e) => {
            log::error!("{e}");
            Ok(ManifestEntry {
                id: task.id.clone(),
                status: TaskStatus::Failed,
                trace: None,
                rounds: e.rounds.len(),
                error: Some(e.kind.to_string()),
            })
        }
    }
}

/// Reads every trace in `dir/traces` (or `dir` itself when it has no
/// `traces` subdirectory), sorted by file name.
pub fn load_traces(dir: &Path) -> Result<Vec<MultiplexTrace>, anyhow::Error> {
    let sub = dir.join(TRACE_DIR);
    let root = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut files: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().is_some_and(|n| n != MANIFEST_FILE)
        })
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let text =
                fs::read_to_string(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?;
            deserialize_trace(&text).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn safe_ids_keep_their_name() {
        assert_eq!(trace_file_name("task-01_a.b"), "task-01_a.b.json");
    }

    #[test]
    fn unsafe_ids_do_not_collide() {
        let a = trace_file_name("a/b");
        let b = trace_file_name("a_b");
        let c = trace_file_name("a b");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert!(a.starts_with("a_b-") && !a.contains('/'));
        assert!(!trace_file_name("../x").starts_with('.'));
    }
}

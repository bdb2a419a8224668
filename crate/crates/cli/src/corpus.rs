//! JSON-lines task corpus.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use mcot_core::chain::{validate_chain, Task};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid corpus:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<LineError>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub tasks: Vec<Task>,
    pub warnings: Vec<String>,
}

/// Parses corpus text. Blank lines are ignored; every problem is reported
/// with its line number.
pub fn parse_corpus(text: &str) -> Result<Corpus, CorpusError> {
    let mut tasks = Vec::new();
    let mut errors = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let task: Task = match serde_json::from_str(raw) {
            Ok(t) => t,
            Err(e) => {
                errors.push(LineError {
                    line,
                    message: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        let mut problems = Vec::new();
        if task.id.trim().is_empty() {
            problems.push("id must be non-empty".to_string());
        }
        if task.question.trim().is_empty() {
            problems.push("question must be non-empty".to_string());
        }
        if let Some(gold) = &task.gold_chain {
            problems.extend(
                validate_chain(gold)
                    .into_iter()
                    .map(|m| format!("gold_chain: {m}")),
            );
        }
        if let Some(first) = seen.get(&task.id) {
            problems.push(format!(
                "duplicate id {:?} (first seen on line {first})",
                task.id
            ));
        } else {
            seen.insert(task.id.clone(), line);
        }
        if problems.is_empty() {
            tasks.push(task);
        } else {
            errors.extend(
                problems
                    .into_iter()
                    .map(|message| LineError { line, message }),
            );
        }
    }
    if !errors.is_empty() {
        return Err(CorpusError::Invalid(errors));
    }
    let mut warnings = Vec::new();
    if tasks.is_empty() {
        warnings.push("corpus contains no tasks".to_string());
    }
    Ok(Corpus { tasks, warnings })
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text)
}

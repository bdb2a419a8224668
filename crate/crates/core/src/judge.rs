//! Pairwise step judgments: "is step b logically connected to step a?" and
//! "is the refined step consistent with the original?".
//!
//! Three strategies are available:
//!
//! * `lexical`: Jaccard overlap of content words against a threshold.
//!   Deterministic and offline.
//! * `annotated`: ground-truth labels carried on the steps themselves
//!   (`gold_links_next`, `gold_is_error`).
//! * `model_backed`: a yes/no question put to a [`Backend`].

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, BackendRequest};
use crate::chain::{ChainOfThought, Critique, ReasoningStep};
use crate::prompt::{PromptPhase, PromptText};

/// Embedded default English stopword list, one word per line.
pub const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

pub const DEFAULT_LEXICAL_THRESHOLD: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeStrategy {
    Lexical,
    Annotated,
    ModelBacked,
}

impl JudgeStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            JudgeStrategy::Lexical => "lexical",
            JudgeStrategy::Annotated => "annotated",
            JudgeStrategy::ModelBacked => "model_backed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub connected: bool,
    pub confidence: f64,
    pub method: JudgeStrategy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeConfig {
    pub strategy: JudgeStrategy,
    pub lexical_threshold: f64,
    pub stopwords: HashSet<String>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            strategy: JudgeStrategy::Lexical,
            lexical_threshold: DEFAULT_LEXICAL_THRESHOLD,
            stopwords: parse_stopwords(DEFAULT_STOPWORDS),
        }
    }
}

impl JudgeConfig {
    pub fn with_strategy(strategy: JudgeStrategy) -> Self {
        JudgeConfig {
            strategy,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), JudgeError> {
        if !(0.0..=1.0).contains(&self.lexical_threshold) {
            return Err(JudgeError::InvalidThreshold(self.lexical_threshold));
        }
        Ok(())
    }
}

pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

/// Reads a newline-delimited stopword file. `#` starts a comment line.
pub fn load_stopwords(path: &Path) -> std::io::Result<HashSet<String>> {
    Ok(parse_stopwords(&fs::read_to_string(path)?))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JudgeError {
    #[error("missing annotation: {0}")]
    MissingAnnotation(String),
    #[error("lexical threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("model-backed judging needs a backend")]
    NoBackend,
    #[error("judge backend failed: {0}")]
    Backend(#[from] BackendError),
    #[error("judge answer is neither yes nor no: {0:?}")]
    UnclearAnswer(String),
}

/// Lowercased content words: tokens split on anything but letters, digits,
/// inner hyphens and apostrophes, minus stopwords.
pub fn content_words(text: &str, stopwords: &HashSet<String>) -> BTreeSet<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .map(|t| t.trim_matches(|c| c == '-' || c == '\'').to_lowercase())
        .filter(|t| !t.is_empty() && !stopwords.contains(t))
        .collect()
}

/// Jaccard index of two word sets; two empty sets count as identical.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Clone)]
pub struct Judge {
    config: JudgeConfig,
    backend: Option<Arc<dyn Backend>>,
}

impl std::fmt::Debug for Judge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Judge")
            .field("config", &self.config)
            .field(
                "backend",
                &self.backend.as_ref().map(|b| b.tag().to_string()),
            )
            .finish()
    }
}

impl Judge {
    pub fn new(config: JudgeConfig) -> Result<Self, JudgeError> {
        config.validate()?;
        Ok(Judge {
            config,
            backend: None,
        })
    }

    pub fn with_backend(
        config: JudgeConfig,
        backend: Arc<dyn Backend>,
    ) -> Result<Self, JudgeError> {
        config.validate()?;
        Ok(Judge {
            config,
            backend: Some(backend),
        })
    }

    pub fn lexical() -> Self {
        Judge::new(JudgeConfig::default()).expect("default config is valid")
    }

    pub fn annotated() -> Self {
        Judge::new(JudgeConfig::with_strategy(JudgeStrategy::Annotated))
            .expect("default config is valid")
    }

    pub fn config(&self) -> &JudgeConfig {
        &self.config
    }

    pub fn strategy(&self) -> JudgeStrategy {
        self.config.strategy
    }

    fn lexical_verdict(&self, a: &str, b: &str) -> JudgeVerdict {
        let sw = &self.config.stopwords;
        let j = jaccard(&content_words(a, sw), &content_words(b, sw));
        let connected = j >= self.config.lexical_threshold;
        JudgeVerdict {
            connected,
            confidence: if connected { j } else { 1.0 - j },
            method: JudgeStrategy::Lexical,
        }
    }

    fn annotated_verdict(connected: bool) -> JudgeVerdict {
        JudgeVerdict {
            connected,
            confidence: 1.0,
            method: JudgeStrategy::Annotated,
        }
    }

    fn ask(&self, question: String) -> Result<JudgeVerdict, JudgeError> {
        let backend = self.backend.as_ref().ok_or(JudgeError::NoBackend)?;
        let mut request = BackendRequest::new(PromptText {
            text: question,
            phase: PromptPhase::Judge,
        });
        request.max_output_tokens = 8;
        let reply = backend.complete(&request)?.text;
        let first = reply
            .split(|c: char| !c.is_alphabetic())
            .find(|w| !w.is_empty())
            .unwrap_or("")
            .to_lowercase();
        let connected = match first.as_str() {
            "yes" => true,
            "no" => false,
            _ => return Err(JudgeError::UnclearAnswer(reply)),
        };
        Ok(JudgeVerdict {
            connected,
            confidence: 1.0,
            method: JudgeStrategy::ModelBacked,
        })
    }

    /// Is `b` logically connected to the preceding step `a`?
    pub fn connection(
        &self,
        a: &ReasoningStep,
        b: &ReasoningStep,
    ) -> Result<JudgeVerdict, JudgeError> {
        match self.config.strategy {
            JudgeStrategy::Lexical => Ok(self.lexical_verdict(&a.text, &b.text)),
            JudgeStrategy::Annotated => {
                if let Some(link) = a.gold_links_next {
                    return Ok(Self::annotated_verdict(link));
                }
                match (a.gold_is_error, b.gold_is_error) {
                    (Some(ea), Some(eb)) => Ok(Self::annotated_verdict(!ea && !eb)),
                    _ => Err(JudgeError::MissingAnnotation(format!(
                        "no adjacency or error labels for steps {} and {}",
                        a.index, b.index
                    ))),
                }
            }
            JudgeStrategy::ModelBacked => self.ask(format!(
                "Consider two consecutive steps of a chain of reasoning.\nStep A: {}\nStep B: {}\nDoes step B follow logically from step A? Answer yes or no.",
                a.text, b.text
            )),
        }
    }

    /// Is `refined` consistent with the `original` step it replaces?
    pub fn refinement_consistency(
        &self,
        original: &ReasoningStep,
        refined: &ReasoningStep,
    ) -> Result<JudgeVerdict, JudgeError> {
        match self.config.strategy {
            JudgeStrategy::Lexical => Ok(self.lexical_verdict(&original.text, &refined.text)),
            JudgeStrategy::Annotated => {
                if original.text.trim() == refined.text.trim() {
                    return Ok(Self::annotated_verdict(true));
                }
                match refined.gold_is_error {
                    Some(e) => Ok(Self::annotated_verdict(!e)),
                    None => Err(JudgeError::MissingAnnotation(format!(
                        "refined step {} is unlabeled",
                        refined.index
                    ))),
                }
            }
            JudgeStrategy::ModelBacked => self.ask(format!(
                "Consider a reasoning step and its revised version.\nOriginal: {}\nRevised: {}\nIs the revised statement consistent with the original reasoning? Answer yes or no.",
                original.text, refined.text
            )),
        }
    }
}

pub fn judge_connection(
    a: &ReasoningStep,
    b: &ReasoningStep,
    cfg: &JudgeConfig,
) -> Result<JudgeVerdict, JudgeError> {
    Judge::new(cfg.clone())?.connection(a, b)
}

pub fn judge_refinement_consistency(
    original: &ReasoningStep,
    refined: &ReasoningStep,
    cfg: &JudgeConfig,
) -> Result<JudgeVerdict, JudgeError> {
    Judge::new(cfg.clone())?.refinement_consistency(original, refined)
}

/// Error step indexes of `chain`.
///
/// With a labeled `gold` chain, the indexes whose `gold_is_error` is true.
/// Without one, the steps the critique flagged.
pub fn identify_errors(
    chain: &ChainOfThought,
    gold: Option<&ChainOfThought>,
    critique: Option<&Critique>,
) -> Result<BTreeSet<u32>, JudgeError> {
    match gold {
        Some(g) => {
            if !g.has_error_labels() {
                return Err(JudgeError::MissingAnnotation(
                    "gold chain has no gold_is_error labels".into(),
                ));
            }
            Ok(g.steps
                .iter()
                .filter(|s| s.gold_is_error == Some(true))
                .map(|s| s.index)
                .filter(|i| chain.step(*i).is_some())
                .collect())
        }
        None => Ok(critique
            .map(|c| c.flagged().filter(|i| chain.step(*i).is_some()).collect())
            .unwrap_or_default()),
    }
}

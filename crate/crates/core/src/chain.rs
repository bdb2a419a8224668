//! Reasoning chains, critiques, tasks and run traces.
//!
//! All types are plain immutable data once built. A [`MultiplexTrace`] is
//! persisted as one canonical JSON object; [`serialize_trace`] and
//! [`deserialize_trace`] both enforce the trace invariants so that no
//! inconsistent trace ever reaches disk or leaves a reader.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::rational::Rational;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Premise,
    Inference,
    Conclusion,
    CritiqueNote,
}

/// One statement of a chain. `index` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub index: u32,
    pub text: String,
    pub kind: StepKind,
    /// Ground truth: this step contains an error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_is_error: Option<bool>,
    /// Ground truth: this step is logically connected to the next one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_links_next: Option<bool>,
}

impl ReasoningStep {
    pub fn new(index: u32, text: impl Into<String>) -> Self {
        ReasoningStep {
            index,
            text: text.into(),
            kind: StepKind::Inference,
            gold_is_error: None,
            gold_links_next: None,
        }
    }

    pub fn with_kind(mut self, kind: StepKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_error(mut self, is_error: bool) -> Self {
        self.gold_is_error = Some(is_error);
        self
    }

    pub fn with_link(mut self, links_next: bool) -> Self {
        self.gold_links_next = Some(links_next);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainOfThought {
    pub steps: Vec<ReasoningStep>,
    pub final_answer: String,
    pub round: u32,
    /// Set by the parser when no conclusion could be recovered.
    #[serde(default)]
    pub truncated: bool,
}

impl ChainOfThought {
    /// Builds a chain from step texts, indexing them 1..n.
    pub fn from_texts<I, S>(texts: I, final_answer: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let steps = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| ReasoningStep::new(i as u32 + 1, t))
            .collect();
        ChainOfThought {
            steps,
            final_answer: final_answer.into(),
            round: 0,
            truncated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, index: u32) -> Option<&ReasoningStep> {
        self.steps.iter().find(|s| s.index == index)
    }

    /// Renders as a numbered list, one step per line.
    pub fn render_numbered(&self) -> String {
        self.steps
            .iter()
            .map(|s| format!("{}. {}", s.index, s.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Renders as a `- ` bullet list, one step per line.
    pub fn render_bullets(&self) -> String {
        self.steps
            .iter()
            .map(|s| format!("- {}", s.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn has_error_labels(&self) -> bool {
        self.steps.iter().any(|s| s.gold_is_error.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Confirm,
    SuggestRevision,
    FlagError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueItem {
    pub target_index: u32,
    pub verdict: Verdict,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Critique {
    pub items: Vec<CritiqueItem>,
}

impl Critique {
    pub fn flagged(&self) -> impl Iterator<Item = u32> + '_ {
        self.items
            .iter()
            .filter(|i| i.verdict == Verdict::FlagError)
            .map(|i| i.target_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Arithmetic,
    Commonsense,
    Ethical,
    LogicalPuzzle,
    Other,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Arithmetic,
        Category::Commonsense,
        Category::Ethical,
        Category::LogicalPuzzle,
        Category::Other,
    ];

    /// Row label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            Category::Arithmetic => "Arithmetic Problem-Solving",
            Category::Commonsense => "Commonsense Reasoning",
            Category::Ethical => "Ethical Decision-Making",
            Category::LogicalPuzzle => "Logical Puzzles",
            Category::Other => "Other",
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Arithmetic => "arithmetic",
            Category::Commonsense => "commonsense",
            Category::Ethical => "ethical",
            Category::LogicalPuzzle => "logical_puzzle",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub category: Category,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_chain: Option<ChainOfThought>,
}

impl Task {
    pub fn new(id: impl Into<String>, category: Category, question: impl Into<String>) -> Self {
        Task {
            id: id.into(),
            category,
            question: question.into(),
            reference_answer: None,
            gold_chain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub chain: ChainOfThought,
    /// Critique of this round's chain; absent on the final round.
    pub critique: Option<Critique>,
    pub consistency: Rational,
    pub delta: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiplexTrace {
    pub task_id: String,
    pub category: Category,
    pub rounds: Vec<RoundRecord>,
    pub final_answer: String,
    pub config_snapshot: serde_json::Value,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl MultiplexTrace {
    pub fn consistencies(&self) -> Vec<Rational> {
        self.rounds.iter().map(|r| r.consistency).collect()
    }

    pub fn initial(&self) -> &RoundRecord {
        &self.rounds[0]
    }

    pub fn last(&self) -> &RoundRecord {
        self.rounds.last().expect("trace has at least one round")
    }
}

/// Lists every broken [`ChainOfThought`] invariant. Empty means valid.
pub fn validate_chain(chain: &ChainOfThought) -> Vec<String> {
    let mut out = Vec::new();
    if chain.steps.is_empty() {
        out.push("n must be ≥ 1".to_string());
    }
    let mut prev: Option<u32> = None;
    for (pos, step) in chain.steps.iter().enumerate() {
        if step.index == 0 {
            out.push(format!("steps[{pos}].index must be ≥ 1"));
        }
        match prev {
            None if step.index > 1 => {
                out.push(format!("index must start at 1, found {}", step.index))
            }
            Some(p) if step.index == p => out.push(format!("duplicate index {p}")),
            Some(p) if step.index > p + 1 => out.push(format!("index gap after {p}")),
            Some(p) if step.index < p => {
                out.push(format!("index {} out of order after {p}", step.index))
            }
            _ => {}
        }
        prev = Some(step.index);
        if step.text.trim().is_empty() {
            out.push(format!("steps[{pos}].text must be non-empty"));
        }
        if step.kind == StepKind::CritiqueNote {
            out.push(format!(
                "steps[{pos}].kind critique_note is not allowed in a chain"
            ));
        }
    }
    if chain.final_answer.trim().is_empty() && !chain.truncated {
        out.push("final_answer may be empty only when truncated".to_string());
    }
    out
}

/// Lists every broken [`Critique`] invariant relative to the critiqued chain.
pub fn validate_critique(critique: &Critique, chain: &ChainOfThought) -> Vec<String> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for item in &critique.items {
        if chain.step(item.target_index).is_none() {
            out.push(format!(
                "critique target_index {} does not exist",
                item.target_index
            ));
        }
        if !seen.insert(item.target_index) {
            out.push(format!(
                "critique has more than one item for target_index {}",
                item.target_index
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("malformed trace document at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("trace invariant violated: {rule} ({detail})")]
    Invariant { rule: String, detail: String },
}

impl TraceError {
    fn invariant(rule: impl Into<String>, detail: impl Into<String>) -> Self {
        TraceError::Invariant {
            rule: rule.into(),
            detail: detail.into(),
        }
    }
}

/// Checks all [`MultiplexTrace`] invariants, returning the first violation.
pub fn check_trace(trace: &MultiplexTrace) -> Result<(), TraceError> {
    if trace.rounds.is_empty() {
        return Err(TraceError::invariant("rounds non-empty", "no rounds"));
    }
    let last = trace.rounds.len() - 1;
    for (k, round) in trace.rounds.iter().enumerate() {
        if round.chain.round as usize != k {
            return Err(TraceError::invariant(
                "rounds[k].chain.round = k",
                format!("rounds[{k}].chain.round is {}", round.chain.round),
            ));
        }
        if let Some(v) = validate_chain(&round.chain).into_iter().next() {
            return Err(TraceError::invariant(
                "chain invariants",
                format!("rounds[{k}]: {v}"),
            ));
        }
        if k == 0 {
            if !round.delta.is_zero() {
                return Err(TraceError::invariant(
                    "rounds[0].delta = 0",
                    format!("rounds[0].delta is {}", round.delta),
                ));
            }
        } else {
            let expected = round.consistency - trace.rounds[k - 1].consistency;
            if round.delta != expected {
                return Err(TraceError::invariant(
                    "rounds[k].delta = rounds[k].consistency − rounds[k−1].consistency",
                    format!(
                        "rounds[{k}].delta is {} but the consistency change is {expected}",
                        round.delta
                    ),
                ));
            }
        }
        match (&round.critique, k == last) {
            (Some(_), true) => {
                return Err(TraceError::invariant(
                    "final round has no critique",
                    format!("rounds[{k}] carries a critique"),
                ))
            }
            (None, false) => {
                return Err(TraceError::invariant(
                    "non-final rounds carry a critique",
                    format!("rounds[{k}] has no critique"),
                ))
            }
            (Some(c), false) => {
                if let Some(v) = validate_critique(c, &round.chain).into_iter().next() {
                    return Err(TraceError::invariant(
                        "critique invariants",
                        format!("rounds[{k}]: {v}"),
                    ));
                }
            }
            (None, true) => {}
        }
    }
    if trace.final_answer != trace.rounds[last].chain.final_answer {
        return Err(TraceError::invariant(
            "final_answer matches the last round",
            format!(
                "trace says {:?}, rounds[{last}] says {:?}",
                trace.final_answer, trace.rounds[last].chain.final_answer
            ),
        ));
    }
    Ok(())
}

/// Canonical JSON document for a trace (pretty-printed, trailing newline).
pub fn serialize_trace(trace: &MultiplexTrace) -> Result<String, TraceError> {
    check_trace(trace)?;
    let mut s = serde_json::to_string_pretty(trace).map_err(|e| TraceError::Malformed {
        offset: 0,
        message: e.to_string(),
    })?;
    s.push('\n');
    Ok(s)
}

pub fn deserialize_trace(document: &str) -> Result<MultiplexTrace, TraceError> {
    let trace: MultiplexTrace =
        serde_json::from_str(document).map_err(|e| TraceError::Malformed {
            offset: byte_offset(document, e.line(), e.column()),
            message: e.to_string(),
        })?;
    check_trace(&trace)?;
    Ok(trace)
}

/// Converts serde_json's 1-based line/column into a byte offset.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(indexes: &[u32]) -> ChainOfThought {
        ChainOfThought {
            steps: indexes
                .iter()
                .map(|&i| ReasoningStep::new(i, format!("step {i}")))
                .collect(),
            final_answer: "x".into(),
            round: 0,
            truncated: false,
        }
    }

    pub(crate) fn sample_trace() -> MultiplexTrace {
        let c0 = ChainOfThought::from_texts(["a b", "b c", "Therefore, c."], "c");
        let mut c1 = c0.clone();
        c1.round = 1;
        let mut c2 = c0.clone();
        c2.round = 2;
        let confirm = Critique {
            items: vec![CritiqueItem {
                target_index: 3,
                verdict: Verdict::Confirm,
                rationale: "fine".into(),
            }],
        };
        MultiplexTrace {
            task_id: "t1".into(),
            category: Category::Arithmetic,
            rounds: vec![
                RoundRecord {
                    chain: c0,
                    critique: Some(confirm.clone()),
                    consistency: Rational::new(1, 2),
                    delta: Rational::ZERO,
                },
                RoundRecord {
                    chain: c1,
                    critique: Some(confirm),
                    consistency: Rational::ONE,
                    delta: Rational::new(1, 2),
                },
                RoundRecord {
                    chain: c2,
                    critique: None,
                    consistency: Rational::new(3, 4),
                    delta: Rational::new(-1, 4),
                },
            ],
            final_answer: "c".into(),
            config_snapshot: serde_json::json!({"max_rounds": 3}),
            warnings: vec![],
        }
    }

    #[test]
    fn well_formed_chain_has_no_violations() {
        assert!(validate_chain(&chain(&[1, 2, 3])).is_empty());
    }

    #[test]
    fn gap_is_reported() {
        assert_eq!(validate_chain(&chain(&[1, 3])), vec!["index gap after 1"]);
    }

    #[test]
    fn empty_chain_is_reported() {
        assert_eq!(validate_chain(&chain(&[])), vec!["n must be ≥ 1"]);
    }

    #[test]
    fn other_chain_violations() {
        assert_eq!(validate_chain(&chain(&[1, 1])), vec!["duplicate index 1"]);
        assert_eq!(
            validate_chain(&chain(&[2, 3])),
            vec!["index must start at 1, found 2"]
        );
        let mut c = chain(&[1, 2]);
        c.steps[1].text = "  ".into();
        c.steps[0].kind = StepKind::CritiqueNote;
        c.final_answer.clear();
        let v = validate_chain(&c);
        assert_eq!(v.len(), 3, "{v:?}");
        c.truncated = true;
        assert_eq!(validate_chain(&c).len(), 2);
    }

    #[test]
    fn critique_targets_must_exist_and_be_unique() {
        let c = chain(&[1, 2]);
        let item = |t| CritiqueItem {
            target_index: t,
            verdict: Verdict::Confirm,
            rationale: String::new(),
        };
        let crit = Critique {
            items: vec![item(1), item(1), item(5)],
        };
        assert_eq!(validate_critique(&crit, &c).len(), 2);
    }

    #[test]
    fn trace_round_trips_byte_identically() {
        let t = sample_trace();
        let doc = serialize_trace(&t).unwrap();
        let back = deserialize_trace(&doc).unwrap();
        assert_eq!(back, t);
        assert_eq!(serialize_trace(&back).unwrap(), doc);
        assert_eq!(serialize_trace(&t.clone()).unwrap(), doc);
    }

    #[test]
    fn delta_violation_names_the_round() {
        let mut t = sample_trace();
        t.rounds[2].delta = Rational::ZERO;
        match serialize_trace(&t) {
            Err(TraceError::Invariant { detail, .. }) => {
                assert!(detail.contains("rounds[2]"), "{detail}")
            }
            other => panic!("expected invariant error, got {other:?}"),
        }
    }

    #[test]
    fn permuted_rounds_are_rejected() {
        let doc = serialize_trace(&sample_trace()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&doc).unwrap();
        v["rounds"].as_array_mut().unwrap().swap(0, 1);
        let permuted = serde_json::to_string_pretty(&v).unwrap();
        match deserialize_trace(&permuted) {
            Err(TraceError::Invariant { rule, .. }) => {
                assert_eq!(rule, "rounds[k].chain.round = k")
            }
            other => panic!("expected invariant error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_document_reports_byte_offset() {
        let doc = serialize_trace(&sample_trace()).unwrap();
        let cut = &doc[..doc.len() / 2];
        match deserialize_trace(cut) {
            Err(TraceError::Malformed { offset, .. }) => {
                assert!(offset > 0 && offset <= cut.len(), "offset {offset}")
            }
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn byte_offset_counts_lines() {
        let text = "ab\ncde\nf";
        assert_eq!(byte_offset(text, 1, 1), 0);
        assert_eq!(byte_offset(text, 2, 2), 4);
        assert_eq!(byte_offset(text, 3, 1), 7);
    }

    #[test]
    fn final_round_must_not_carry_a_critique() {
        let mut t = sample_trace();
        t.rounds[2].critique = Some(Critique::default());
        assert!(check_trace(&t).is_err());
        let mut t = sample_trace();
        t.rounds[1].critique = None;
        assert!(check_trace(&t).is_err());
    }
}

//! Free-text model output to [`ChainOfThought`] and [`Critique`].
//!
//! A chain is split into steps by explicit numbering (`1.`, `2)`, `Step 3:`),
//! then bullet markers (`-`, `•`, `*`), then sentence punctuation. When a
//! response mixes numbering and bullets, the more frequent style wins and
//! the other lines are folded into the preceding step with a warning.
//!
//! A two-phase response is cut at the first review-phase header line. The
//! initial phase is parsed as a chain; the review phase is separated into
//! critique notes and either a restated chain or a bare answer update.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::chain::{ChainOfThought, Critique, CritiqueItem, ReasoningStep, StepKind, Verdict};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParserConfig {
    /// A final step starting with one of these also yields the final answer.
    pub conclusion_cues: Vec<String>,
    /// Header keywords that open the initial phase.
    pub initial_headers: Vec<String>,
    /// Header keywords that open the review phase.
    pub review_headers: Vec<String>,
    /// Sentences containing one of these are critique notes.
    pub review_cues: Vec<String>,
    /// Sub-headers that introduce a restated chain inside the review phase.
    pub refined_headers: Vec<String>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            conclusion_cues: strings(&["therefore", "so", "thus", "the final answer"]),
            initial_headers: strings(&["step 1", "initial"]),
            review_headers: strings(&["step 2", "review", "refinement"]),
            review_cues: strings(&[
                "upon reviewing",
                "i realize",
                "error",
                "inconsistenc",
                "flaw",
                "mistake",
            ]),
            refined_headers: strings(&[
                "refined chain",
                "corrected chain",
                "revised chain",
                "refined reasoning",
                "corrected reasoning",
            ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseReport {
    pub chain: ChainOfThought,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiplexParse {
    pub initial: ParseReport,
    pub critique: Critique,
    pub refined: ParseReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewParse {
    pub critique: Critique,
    pub refined: ParseReport,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("input text is empty")]
    Empty,
    #[error("no step boundary found: {0}")]
    Unparseable(String),
    #[error("response has no review phase")]
    PhaseMissing { initial: Box<ParseReport> },
}

/// Byte ranges of the two phases of a combined response. Together they cover
/// the input exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseSplit<'a> {
    pub initial: &'a str,
    pub review: Option<&'a str>,
}

enum Line<'a> {
    Numbered(u32, &'a str),
    Bullet(&'a str),
    Plain(&'a str),
}

fn numbered_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?i:step\s+)?(\d{1,4})\s*[.):]\s+(.*)$").unwrap())
}

fn bullet_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[-•*]\s+(.*)$").unwrap())
}

fn step_ref_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bstep\s+(\d{1,4})\b").unwrap())
}

fn step_label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?i:step)\s+\d+\s*[:.)]\s*\S").unwrap())
}

fn classify(line: &str) -> Line<'_> {
    let t = line.trim();
    if let Some(c) = bullet_re().captures(t) {
        return Line::Bullet(c.get(1).unwrap().as_str().trim());
    }
    if let Some(c) = numbered_re().captures(t) {
        let n = c[1].parse().unwrap_or(0);
        return Line::Numbered(n, c.get(2).unwrap().as_str().trim());
    }
    Line::Plain(t)
}

/// True when `lower` starts with `cue` followed by a non-word character.
fn starts_with_word(lower: &str, cue: &str) -> bool {
    lower.starts_with(cue)
        && lower[cue.len()..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric())
}

/// Splits on `.`, `!` or `?` followed by whitespace, and on newlines.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut start = 0;
        let bytes = line.as_bytes();
        for (i, &b) in bytes.iter().enumerate() {
            if matches!(b, b'.' | b'!' | b'?')
                && bytes.get(i + 1).is_none_or(|n| n.is_ascii_whitespace())
            {
                let s = line[start..=i].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = i + 1;
            }
        }
        let rest = line[start..].trim();
        if !rest.is_empty() {
            out.push(rest);
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct Parser {
    pub config: ParserConfig,
}

impl Parser {
    pub fn new(config: ParserConfig) -> Self {
        Parser { config }
    }

    pub fn is_conclusion(&self, text: &str) -> bool {
        let lower = text.trim().to_lowercase();
        self.config
            .conclusion_cues
            .iter()
            .any(|c| starts_with_word(&lower, c))
    }

    /// Strips conclusion cues and connectives: `"Therefore, x."` → `"x"`.
    pub fn extract_answer(&self, text: &str) -> String {
        const LEADS: [&str; 4] = ["the final answer", "the answer", "is", "="];
        let mut s = text.trim();
        loop {
            let before = s;
            let lower = s.to_lowercase();
            for cue in self
                .config
                .conclusion_cues
                .iter()
                .map(String::as_str)
                .chain(LEADS)
            {
                if starts_with_word(&lower, cue) || (cue == "=" && lower.starts_with('=')) {
                    s = &s[cue.len()..];
                    break;
                }
            }
            s = s.trim_start_matches(|c: char| c == ',' || c == ':' || c.is_whitespace());
            if s == before {
                break;
            }
        }
        // "the capital of France is Paris" → "Paris"
        if let Some(at) = s.to_lowercase().rfind(" is ") {
            s = &s[at + 4..];
        }
        s.trim_end_matches(|c: char| c == '.' || c == '!' || c.is_whitespace())
            .to_string()
    }

    /// Parses one chain of thought.
    pub fn parse_chain(&self, text: &str) -> Result<ParseReport, ParseError> {
        if text.trim().is_empty() {
            return Err(ParseError::Empty);
        }
        let mut warnings = Vec::new();
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let classified: Vec<Line> = lines.iter().map(|l| classify(l)).collect();
        let numbered = classified
            .iter()
            .filter(|l| matches!(l, Line::Numbered(..)))
            .count();
        let bulleted = classified
            .iter()
            .filter(|l| matches!(l, Line::Bullet(_)))
            .count();

        let texts: Vec<String> = if numbered + bulleted == 0 {
            let sentences = split_sentences(text);
            if sentences.len() == 1 && !sentences[0].ends_with(['.', '!', '?']) {
                return Err(ParseError::Unparseable(
                    "text is shorter than one sentence".into(),
                ));
            }
            sentences.into_iter().map(str::to_string).collect()
        } else {
            let prefer_numbers = numbered >= bulleted;
            self.assemble_marked(&classified, prefer_numbers, &mut warnings)
        };

        let texts: Vec<String> = texts.into_iter().filter(|t| !t.is_empty()).collect();
        if texts.is_empty() {
            return Err(ParseError::Unparseable("no non-empty steps".into()));
        }
        Ok(ParseReport {
            chain: self.build_chain(texts, &mut warnings),
            warnings,
        })
    }

    fn assemble_marked(
        &self,
        lines: &[Line],
        prefer_numbers: bool,
        warnings: &mut Vec<String>,
    ) -> Vec<String> {
        let mut steps: Vec<String> = Vec::new();
        let mut preamble: Vec<&str> = Vec::new();
        let mut source_numbers = Vec::new();
        for (pos, line) in lines.iter().enumerate() {
            let (starts_step, content) = match *line {
                Line::Numbered(n, t) if prefer_numbers => {
                    source_numbers.push(n);
                    (true, t)
                }
                Line::Bullet(t) if !prefer_numbers => (true, t),
                Line::Numbered(_, t) | Line::Bullet(t) | Line::Plain(t) => (false, t),
            };
            if starts_step {
                if content.is_empty() {
                    warnings.push(format!("line {} has a marker but no text", pos + 1));
                    continue;
                }
                let mut s = String::new();
                if !preamble.is_empty() {
                    warnings.push(format!(
                        "{} unmarked leading line(s) folded into step 1",
                        preamble.len()
                    ));
                    s = preamble.join(" ");
                    s.push(' ');
                    preamble.clear();
                }
                s.push_str(content);
                steps.push(s);
            } else if content.is_empty() {
                continue;
            } else if !steps.is_empty() {
                warnings.push(format!("line {} folded into step {}", pos + 1, steps.len()));
                let last = steps.last_mut().expect("non-empty");
                last.push(' ');
                last.push_str(content);
            } else {
                preamble.push(content);
            }
        }
        if steps.is_empty() && !preamble.is_empty() {
            steps.push(preamble.join(" "));
        }
        if source_numbers
            .iter()
            .enumerate()
            .any(|(i, &n)| n as usize != i + 1)
        {
            warnings.push("source numbering is not 1..n; steps renumbered".into());
        }
        steps
    }

    fn build_chain(&self, texts: Vec<String>, warnings: &mut Vec<String>) -> ChainOfThought {
        let n = texts.len();
        let mut final_answer = String::new();
        let steps = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let mut step = ReasoningStep::new(i as u32 + 1, t);
                if i + 1 == n && self.is_conclusion(&step.text) {
                    step.kind = StepKind::Conclusion;
                    final_answer = self.extract_answer(&step.text);
                } else if i == 0 {
                    step.kind = StepKind::Premise;
                }
                step
            })
            .collect();
        let truncated = final_answer.is_empty();
        if truncated {
            warnings.push("truncated: no conclusion step found".into());
        }
        ChainOfThought {
            steps,
            final_answer,
            round: 0,
            truncated,
        }
    }

    fn header_matches(&self, line: &str, keywords: &[String]) -> bool {
        let mut s = line.trim().trim_start_matches('#').trim();
        for deco in ["**", "__"] {
            if let Some(inner) = s.strip_prefix(deco) {
                s = inner.trim_end().strip_suffix(deco).unwrap_or(inner).trim();
            }
        }
        let lower = s.to_lowercase();
        if lower.is_empty() || lower.ends_with(['.', '!', '?']) {
            return false;
        }
        if lower.split_whitespace().count() > 8 || step_label_re().is_match(&lower) {
            return false;
        }
        if lower.contains(':') && !lower.ends_with(':') {
            return false;
        }
        keywords.iter().any(|k| starts_with_word(&lower, k))
    }

    fn is_phase_header(&self, line: &str) -> bool {
        self.header_matches(line, &self.config.initial_headers)
            || self.header_matches(line, &self.config.review_headers)
    }

    /// Cuts a response at the first review-phase header.
    pub fn split_phases<'a>(&self, text: &'a str) -> PhaseSplit<'a> {
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            if self.header_matches(line, &self.config.review_headers)
                && !self.header_matches(line, &self.config.initial_headers)
            {
                return PhaseSplit {
                    initial: &text[..offset],
                    review: Some(&text[offset..]),
                };
            }
            offset += line.len();
        }
        PhaseSplit {
            initial: text,
            review: None,
        }
    }

    fn strip_headers(&self, text: &str) -> String {
        text.lines()
            .filter(|l| !self.is_phase_header(l))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Parses a generate-then-review response into both chains and the critique.
    pub fn parse_multiplex_response(&self, text: &str) -> Result<MultiplexParse, ParseError> {
        if text.trim().is_empty() {
            return Err(ParseError::Empty);
        }
        let split = self.split_phases(text);
        let initial_text = self.strip_headers(split.initial);
        if initial_text.trim().is_empty() {
            return Err(ParseError::Unparseable("initial phase is empty".into()));
        }
        let initial = self.parse_chain(&initial_text)?;
        let Some(review) = split.review else {
            return Err(ParseError::PhaseMissing {
                initial: Box::new(initial),
            });
        };
        let ReviewParse { critique, refined } = self.review_body(review, &initial.chain)?;
        Ok(MultiplexParse {
            initial,
            critique,
            refined,
        })
    }

    /// Parses the answer to a review prompt against the chain it critiques.
    pub fn parse_review_response(
        &self,
        text: &str,
        prior: &ChainOfThought,
    ) -> Result<ReviewParse, ParseError> {
        if text.trim().is_empty() {
            return Err(ParseError::Empty);
        }
        self.review_body(text, prior)
    }

    fn review_body(&self, text: &str, prior: &ChainOfThought) -> Result<ReviewParse, ParseError> {
        let mut warnings = Vec::new();
        let mut notes: Vec<String> = Vec::new();
        let mut content: Vec<String> = Vec::new();
        let mut restated: Vec<&str> = Vec::new();
        let mut in_restated = false;

        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if in_restated {
                restated.push(line);
                continue;
            }
            if self.is_phase_header(line) {
                continue;
            }
            if self.header_matches(line, &self.config.refined_headers) {
                in_restated = true;
                continue;
            }
            let units: Vec<&str> = match classify(line) {
                Line::Numbered(_, t) | Line::Bullet(t) => vec![t],
                Line::Plain(t) => split_sentences(t),
            };
            for unit in units.into_iter().filter(|u| !u.is_empty()) {
                let lower = unit.to_lowercase();
                if self
                    .config
                    .review_cues
                    .iter()
                    .any(|c| lower.contains(c.as_str()))
                {
                    notes.push(unit.to_string());
                } else {
                    content.push(unit.to_string());
                }
            }
        }

        let critique = self.build_critique(&notes, prior, &mut warnings);
        let next_round = prior.round + 1;

        let refined = if !restated.is_empty() {
            if !content.is_empty() {
                warnings.push(format!(
                    "{} review sentence(s) before the restated chain ignored",
                    content.len()
                ));
            }
            let mut report = self.parse_chain(&restated.join("\n"))?;
            report.warnings.append(&mut warnings);
            report
        } else if content.len() >= 2 {
            let mut report = self.parse_chain(
                &content
                    .iter()
                    .map(|c| format!("- {c}"))
                    .collect::<Vec<_>>()
                    .join("\n"),
            )?;
            report.warnings.append(&mut warnings);
            report
        } else {
            let mut chain = prior.clone();
            match content.first() {
                Some(c) if self.is_conclusion(c) => {
                    chain.final_answer = self.extract_answer(c);
                    chain.truncated = chain.final_answer.is_empty();
                }
                Some(c) => warnings.push(format!("review sentence not attributed: {c:?}")),
                None => {}
            }
            ParseReport { chain, warnings }
        };
        let mut refined = refined;
        refined.chain.round = next_round;
        Ok(ReviewParse { critique, refined })
    }

    fn build_critique(
        &self,
        notes: &[String],
        prior: &ChainOfThought,
        warnings: &mut Vec<String>,
    ) -> Critique {
        let fallback = prior.steps.last().map(|s| s.index).unwrap_or(1);
        let mut by_target: BTreeMap<u32, CritiqueItem> = BTreeMap::new();
        for note in notes {
            let target = match step_ref_re().captures(note) {
                Some(c) => c[1].parse().unwrap_or(0),
                None => fallback,
            };
            if prior.step(target).is_none() {
                warnings.push(format!(
                    "critique note refers to missing step {target}: {note:?}"
                ));
                continue;
            }
            let verdict = classify_verdict(note);
            by_target
                .entry(target)
                .and_modify(|item| {
                    item.verdict = item.verdict.max(verdict);
                    item.rationale.push(' ');
                    item.rationale.push_str(note);
                })
                .or_insert_with(|| CritiqueItem {
                    target_index: target,
                    verdict,
                    rationale: note.clone(),
                });
        }
        Critique {
            items: by_target.into_values().collect(),
        }
    }
}

/// Maps a critique sentence to a verdict. Negated error mentions confirm.
pub fn classify_verdict(note: &str) -> Verdict {
    const CONFIRM: [&str; 9] = [
        "no error",
        "no inconsistenc",
        "no mistake",
        "no flaw",
        "no issue",
        "without error",
        "is correct",
        "are correct",
        "is indeed",
    ];
    const FLAG: [&str; 7] = [
        "error",
        "incorrect",
        "wrong",
        "mistake",
        "flaw",
        "inconsisten",
        "miscalculat",
    ];
    const SUGGEST: [&str; 6] = [
        "should", "could be", "revise", "clarif", "better", "consider",
    ];
    let l = note.to_lowercase();
    if CONFIRM.iter().any(|k| l.contains(k)) {
        Verdict::Confirm
    } else if FLAG.iter().any(|k| l.contains(k)) {
        Verdict::FlagError
    } else if SUGGEST.iter().any(|k| l.contains(k)) {
        Verdict::SuggestRevision
    } else {
        Verdict::Confirm
    }
}

pub fn parse_chain(text: &str) -> Result<ParseReport, ParseError> {
    Parser::default().parse_chain(text)
}

pub fn parse_multiplex_response(text: &str) -> Result<MultiplexParse, ParseError> {
    Parser::default().parse_multiplex_response(text)
}

//! Prompt templates with `{{name}}` placeholders.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPhase {
    Initial,
    Review,
    Combined,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub phase: PromptPhase,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template references unknown placeholder {{{{{0}}}}}")]
    UnknownPlaceholder(String),
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
    #[error("template {0} could not be read: {1}")]
    Io(String, String),
}

/// A text template. Substitution is single-pass: values are inserted
/// verbatim and never re-scanned for placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
}

impl Template {
    pub fn new(source: impl Into<String>) -> Self {
        let mut source = source.into();
        if source.ends_with('\n') {
            source.pop();
        }
        Template { source }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.source.len());
        let mut rest = self.source.as_str();
        let mut consumed = 0;
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            let close = after
                .find("}}")
                .ok_or(TemplateError::Unterminated(consumed + open))?;
            let name = after[..close].trim();
            let value = vars
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::UnknownPlaceholder(name.to_string()))?;
            out.push_str(value);
            let advance = open + 2 + close + 2;
            consumed += advance;
            rest = &rest[advance..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// The three orchestration templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub combined: Template,
    pub initial: Template,
    pub review: Template,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            combined: Template::new(include_str!("../templates/combined.txt")),
            initial: Template::new(include_str!("../templates/initial.txt")),
            review: Template::new(include_str!("../templates/review.txt")),
        }
    }
}

impl PromptSet {
    /// Loads `combined.txt`, `initial.txt` and `review.txt` from `dir`,
    /// keeping the built-in default for any file that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = PromptSet::default();
        for (name, slot) in [
            ("combined.txt", &mut set.combined),
            ("initial.txt", &mut set.initial),
            ("review.txt", &mut set.review),
        ] {
            let path = dir.join(name);
            if path.exists() {
                let text = fs::read_to_string(&path)
                    .map_err(|e| TemplateError::Io(path.display().to_string(), e.to_string()))?;
                *slot = Template::new(text);
            }
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_once() {
        let t = Template::new("Q: {{question}} / {{ question }}");
        assert_eq!(
            t.render(&[("question", "{{question}}")]).unwrap(),
            "Q: {{question}} / {{question}}"
        );
    }

    #[test]
    fn unknown_and_unterminated() {
        assert_eq!(
            Template::new("{{nope}}").render(&[]),
            Err(TemplateError::UnknownPlaceholder("nope".into()))
        );
        assert_eq!(
            Template::new("ab {{x").render(&[("x", "1")]),
            Err(TemplateError::Unterminated(3))
        );
    }

    #[test]
    fn defaults_have_no_trailing_newline() {
        let set = PromptSet::default();
        assert!(!set.combined.source().ends_with('\n'));
        assert!(set.review.source().contains("{{chain}}"));
    }

    #[test]
    fn load_dir_overrides_present_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("review.txt"), "R {{chain}}\n").unwrap();
        let set = PromptSet::load_dir(dir.path()).unwrap();
        assert_eq!(set.review.source(), "R {{chain}}");
        assert_eq!(set.combined, PromptSet::default().combined);
    }
}

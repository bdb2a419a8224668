//! Seeded noisy reasoner with known error statistics.
//!
//! A generated chain has `steps_per_chain` reasoning steps plus one
//! conclusion. Each reasoning step is wrong independently with probability
//! `error_rate`; wrong steps start with [`ERROR_MARKER`]. Each review pass
//! fixes every still-wrong step independently with probability
//! `correction_prob` and flags exactly the steps it fixed. The conclusion
//! carries the correct answer token only when no wrong step remains.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendRequest, BackendResponse};
use crate::chain::{ChainOfThought, Task};
use crate::prompt::PromptPhase;

pub const ERROR_MARKER: &str = "[ERR]";

const GENERATION_STREAM: u64 = 0;
const REVIEW_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Probability that a generated step is wrong.
    pub error_rate: f64,
    /// Probability that a wrong step is fixed in one review pass.
    pub correction_prob: f64,
    pub steps_per_chain: u32,
    pub rng_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            error_rate: 0.3,
            correction_prob: 0.5,
            steps_per_chain: 10,
            rng_seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(BackendError::Config("error_rate must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.correction_prob) {
            return Err(BackendError::Config(
                "correction_prob must lie in [0, 1]".into(),
            ));
        }
        if self.steps_per_chain == 0 {
            return Err(BackendError::Config("steps_per_chain must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, stream))
}

fn digest_u64(text: &str) -> u64 {
    let d = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// In-memory form of a synthetic chain.
#[derive(Debug, Clone, PartialEq, Eq)]
struct SynthChain {
    /// Hex tag shared by the correct and wrong answer tokens.
    answer_tag: String,
    wrong: Vec<bool>,
}

impl SynthChain {
    fn generate(question: &str, cfg: &SyntheticConfig, rng: &mut impl Rng) -> Self {
        let tag = hex::encode(&Sha256::digest(question.as_bytes())[..4]);
        let wrong = (0..cfg.steps_per_chain)
            .map(|_| rng.random_bool(cfg.error_rate))
            .collect();
        SynthChain {
            answer_tag: tag,
            wrong,
        }
    }

    fn step_text(i: usize, wrong: bool) -> String {
        if wrong {
            format!("{ERROR_MARKER} Fact {i} of the derivation is computed with a slip.")
        } else {
            format!("Fact {i} of the derivation is computed correctly.")
        }
    }

    fn answer(&self) -> String {
        let prefix = if self.wrong.iter().any(|&w| w) {
            'W'
        } else {
            'A'
        };
        format!("{prefix}{}", self.answer_tag)
    }

    fn render(&self) -> String {
        let mut lines: Vec<String> = self
            .wrong
            .iter()
            .enumerate()
            .map(|(i, &w)| format!("{}. {}", i + 1, Self::step_text(i + 1, w)))
            .collect();
        lines.push(format!(
            "{}. Therefore, the final answer is {}.",
            self.wrong.len() + 1,
            self.answer()
        ));
        lines.join("\n")
    }

    /// Reads back a chain rendered by [`SynthChain::render`], ignoring any
    /// surrounding non-numbered text.
    fn parse(text: &str) -> Result<Self, BackendError> {
        static LINE: OnceLock<Regex> = OnceLock::new();
        static ANSWER: OnceLock<Regex> = OnceLock::new();
        let line_re = LINE.get_or_init(|| Regex::new(r"^\s*(\d+)\.\s+(.*)$").unwrap());
        let answer_re = ANSWER.get_or_init(|| {
            Regex::new(r"^Therefore, the final answer is [AW]([0-9a-f]+)\.$").unwrap()
        });
        let steps: Vec<String> = text
            .lines()
            .filter_map(|l| line_re.captures(l).map(|c| c[2].trim().to_string()))
            .collect();
        let (conclusion, body) = steps
            .split_last()
            .ok_or_else(|| BackendError::MalformedInput("no numbered steps".into()))?;
        let tag = answer_re
            .captures(conclusion)
            .map(|c| c[1].to_string())
            .ok_or_else(|| {
                BackendError::MalformedInput(format!(
                    "last step is not a conclusion: {conclusion:?}"
                ))
            })?;
        if body.is_empty() {
            return Err(BackendError::MalformedInput("no reasoning steps".into()));
        }
        Ok(SynthChain {
            answer_tag: tag,
            wrong: body.iter().map(|s| s.starts_with(ERROR_MARKER)).collect(),
        })
    }

    /// One review pass; returns the review text and the refined chain.
    fn review(&self, q: f64, rng: &mut impl Rng) -> (String, SynthChain) {
        let mut refined = self.clone();
        let mut notes = Vec::new();
        for (i, w) in refined.wrong.iter_mut().enumerate() {
            // Draw for every step so the stream does not depend on earlier outcomes.
            let fix = rng.random_bool(q);
            if *w && fix {
                *w = false;
                notes.push(format!(
                    "- Upon reviewing step {}, I found an error and corrected it.",
                    i + 1
                ));
            }
        }
        if notes.is_empty() {
            notes.push(
                "- Upon reviewing my reasoning, no errors or inconsistencies are present.".into(),
            );
        }
        let text = format!("{}\nRefined chain:\n{}", notes.join("\n"), refined.render());
        (text, refined)
    }
}

/// Generates the initial chain text for `task`, seeded by `cfg.rng_seed`.
pub fn synthetic_generate(task: &Task, cfg: &SyntheticConfig) -> String {
    let mut rng = rng_for(cfg.rng_seed, GENERATION_STREAM);
    SynthChain::generate(&task.question, cfg, &mut rng).render()
}

/// Reviews a chain produced by [`synthetic_generate`] or a previous review.
/// `round` selects an independent random stream per review pass.
pub fn synthetic_review(
    chain_text: &str,
    cfg: &SyntheticConfig,
    round: u32,
) -> Result<String, BackendError> {
    let chain = SynthChain::parse(chain_text)?;
    let mut rng = rng_for(mix(cfg.rng_seed, round as u64), REVIEW_STREAM);
    Ok(chain.review(cfg.correction_prob, &mut rng).0)
}

fn question_of(prompt: &str) -> &str {
    const LEAD: &str = "Please solve the following problem: ";
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(LEAD))
        .unwrap_or(prompt)
}

/// [`Backend`] adapter over the synthetic reasoner.
///
/// The per-request seed, when present, replaces `rng_seed`; otherwise the
/// seed is derived from `rng_seed` and the prompt text.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    config: SyntheticConfig,
}

impl SyntheticBackend {
    pub fn new(config: SyntheticConfig) -> Result<Self, BackendError> {
        config.validate()?;
        Ok(SyntheticBackend { config })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    fn respond(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let prompt = &request.prompt.text;
        let seed = request
            .seed
            .unwrap_or_else(|| mix(self.config.rng_seed, digest_u64(prompt)));
        let q = self.config.correction_prob;
        match request.prompt.phase {
            PromptPhase::Initial => {
                let mut rng = rng_for(seed, GENERATION_STREAM);
                Ok(SynthChain::generate(question_of(prompt), &self.config, &mut rng).render())
            }
            PromptPhase::Combined => {
                let mut rng = rng_for(seed, GENERATION_STREAM);
                let chain = SynthChain::generate(question_of(prompt), &self.config, &mut rng);
                let mut rng = rng_for(seed, REVIEW_STREAM);
                let (review, _) = chain.review(q, &mut rng);
                Ok(format!(
                    "Step 1 (Initial CoT):\n{}\n\nStep 2 (Review and Refinement):\n{}",
                    chain.render(),
                    review
                ))
            }
            PromptPhase::Review => {
                let chain = SynthChain::parse(prompt)?;
                let mut rng = rng_for(seed, REVIEW_STREAM);
                Ok(chain.review(q, &mut rng).0)
            }
            PromptPhase::Judge => Ok(if prompt.contains(ERROR_MARKER) {
                "no".into()
            } else {
                "yes".into()
            }),
        }
    }
}

impl Backend for SyntheticBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let start = Instant::now();
        let text = self.respond(request)?;
        Ok(BackendResponse {
            text,
            latency: start.elapsed(),
            provider_tag: self.tag().to_string(),
        })
    }

    fn tag(&self) -> &str {
        "synthetic"
    }

    /// Labels every step from the presence of the error marker.
    fn annotate(&self, chain: &mut ChainOfThought) {
        for step in &mut chain.steps {
            step.gold_is_error = Some(step.text.contains(ERROR_MARKER));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Category;

    fn cfg(p: f64, q: f64, steps: u32, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            error_rate: p,
            correction_prob: q,
            steps_per_chain: steps,
            rng_seed: seed,
        }
    }

    fn task() -> Task {
        Task::new("t", Category::Arithmetic, "What is 6 times 7?")
    }

    fn wrong_count(text: &str) -> usize {
        text.lines().filter(|l| l.contains(ERROR_MARKER)).count()
    }

    #[test]
    fn degenerate_error_rates() {
        for seed in 0..50 {
            assert_eq!(
                wrong_count(&synthetic_generate(&task(), &cfg(0.0, 0.5, 8, seed))),
                0
            );
            assert_eq!(
                wrong_count(&synthetic_generate(&task(), &cfg(1.0, 0.5, 5, seed))),
                5
            );
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let c = cfg(0.5, 0.5, 10, 42);
        assert_eq!(
            synthetic_generate(&task(), &c),
            synthetic_generate(&task(), &c)
        );
    }

    #[test]
    fn mean_wrong_steps_matches_binomial_mean() {
        // Oracle: E[Binomial(10, 0.3)] = 3; s.e. over 10,000 draws ≈ 0.0145.
        let n = 10_000u64;
        let total: usize = (0..n)
            .map(|seed| wrong_count(&synthetic_generate(&task(), &cfg(0.3, 0.5, 10, seed))))
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 3.0).abs() <= 0.1, "mean {mean}");
    }

    #[test]
    fn review_with_certain_correction_fixes_everything() {
        let c = cfg(1.0, 1.0, 6, 3);
        let text = synthetic_generate(&task(), &c);
        let out = synthetic_review(&text, &c, 1).unwrap();
        let refined = out.split("Refined chain:\n").nth(1).unwrap();
        assert_eq!(wrong_count(refined), 0);
        assert_eq!(out.matches("I found an error").count(), 6);
        assert!(refined.contains("final answer is A"));
    }

    #[test]
    fn review_without_correction_is_identity() {
        let c = cfg(0.6, 0.0, 8, 9);
        let text = synthetic_generate(&task(), &c);
        let out = synthetic_review(&text, &c, 1).unwrap();
        let refined = out.split("Refined chain:\n").nth(1).unwrap();
        assert_eq!(refined, text);
    }

    #[test]
    fn mean_corrected_matches_q_times_wrong() {
        // Oracle: E[Binomial(8, 0.5)] = 4; s.e. over 10,000 draws = 0.02.
        let text = synthetic_generate(&task(), &cfg(1.0, 0.5, 8, 0));
        let n = 10_000u64;
        let total: usize = (0..n)
            .map(|seed| {
                synthetic_review(&text, &cfg(1.0, 0.5, 8, seed), 1)
                    .unwrap()
                    .matches("I found an error")
                    .count()
            })
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 4.0).abs() <= 0.15, "mean {mean}");
    }

    #[test]
    fn flags_match_corrections_exactly() {
        let c = cfg(0.5, 0.5, 12, 77);
        let text = synthetic_generate(&task(), &c);
        let out = synthetic_review(&text, &c, 2).unwrap();
        let before: Vec<bool> = SynthChain::parse(&text).unwrap().wrong;
        let after: Vec<bool> = SynthChain::parse(&out).unwrap().wrong;
        for i in 0..12 {
            let fixed = before[i] && !after[i];
            let flagged = out.contains(&format!("reviewing step {}, I found", i + 1));
            assert_eq!(fixed, flagged, "step {}", i + 1);
        }
    }

    #[test]
    fn malformed_review_input() {
        assert!(matches!(
            synthetic_review("just prose", &SyntheticConfig::default(), 1),
            Err(BackendError::MalformedInput(_))
        ));
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(SyntheticBackend::new(cfg(1.5, 0.5, 3, 0)).is_err());
        assert!(SyntheticBackend::new(cfg(0.5, -0.1, 3, 0)).is_err());
        assert!(SyntheticBackend::new(cfg(0.5, 0.5, 0, 0)).is_err());
    }
}

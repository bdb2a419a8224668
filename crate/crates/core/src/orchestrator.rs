//! Drives generate → critique → refine rounds against a backend.
//!
//! Round 0 is the initial chain. In `combined` mode a single call returns
//! both the initial chain and its first review, which becomes round 1; in
//! `two_call` mode the initial chain and each review are separate calls.
//! Every later round sends the previous chain back through the review
//! prompt. After each round the logical consistency `C(k)` and the change
//! `δ(k) = C(k) − C(k−1)` are recorded; the loop ends when `max_rounds`
//! rounds exist or the latest `δ` falls below `epsilon`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{Backend, BackendError, BackendRequest};
use crate::chain::{check_trace, ChainOfThought, MultiplexTrace, RoundRecord, Task, TraceError};
use crate::judge::{Judge, JudgeConfig, JudgeError, JudgeStrategy};
use crate::metrics::{logical_consistency, MetricsError};
use crate::parser::{ParseError, Parser, ParserConfig};
use crate::prompt::{PromptPhase, PromptSet, PromptText, TemplateError};
use crate::rational::Rational;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Combined,
    TwoCall,
}

impl PromptMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptMode::Combined => "combined",
            PromptMode::TwoCall => "two_call",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub max_rounds: u32,
    /// Stop once the latest consistency change is below this.
    pub epsilon: Rational,
    pub prompt_mode: PromptMode,
    pub judge_config: JudgeConfig,
    pub seed: Option<u64>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout: Duration,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_rounds: 2,
            epsilon: Rational::ZERO,
            prompt_mode: PromptMode::Combined,
            judge_config: JudgeConfig::default(),
            seed: None,
            temperature: 0.0,
            max_output_tokens: 1024,
            timeout: Duration::from_secs(60),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunErrorKind> {
        if self.max_rounds < 1 {
            return Err(RunErrorKind::Config("max_rounds must be ≥ 1".into()));
        }
        if self.epsilon.is_negative() {
            return Err(RunErrorKind::Config("epsilon must be ≥ 0".into()));
        }
        self.judge_config
            .validate()
            .map_err(|e| RunErrorKind::Config(e.to_string()))
    }

    /// Run parameters recorded in every trace.
    pub fn snapshot(&self, backend_tag: &str) -> serde_json::Value {
        serde_json::json!({
            "backend": backend_tag,
            "epsilon": self.epsilon,
            "judge": self.judge_config.strategy.as_str(),
            "lexical_threshold": self.judge_config.lexical_threshold,
            "max_rounds": self.max_rounds,
            "prompt_mode": self.prompt_mode.as_str(),
            "seed": self.seed,
        })
    }
}

/// True once `max_rounds` rounds exist, or the latest delta is below epsilon.
/// `deltas` holds one entry per completed round after the first.
pub fn should_stop(deltas: &[Rational], config: &RunConfig) -> bool {
    if deltas.len() + 1 >= config.max_rounds as usize {
        return true;
    }
    deltas.last().is_some_and(|d| *d < config.epsilon)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunErrorKind {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("backend failed: {0}")]
    Backend(#[from] BackendError),
    #[error("could not parse response: {0}")]
    Parse(#[from] ParseError),
    #[error("scoring failed: {0}")]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// A failed run; rounds completed before the failure are kept.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("task {task_id}: {kind}")]
pub struct RunError {
    pub task_id: String,
    pub rounds: Vec<RoundRecord>,
    pub warnings: Vec<String>,
    pub kind: Box<RunErrorKind>,
}

impl From<JudgeError> for RunErrorKind {
    fn from(e: JudgeError) -> Self {
        RunErrorKind::Metrics(MetricsError::Judge(e))
    }
}

/// Request seed for one (run seed, task, round) triple.
pub fn request_seed(seed: Option<u64>, task_id: &str, round: u32) -> Option<u64> {
    seed.map(|s| {
        let d = Sha256::digest(format!("{s}:{task_id}:{round}").as_bytes());
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    })
}

#[derive(Debug, Clone)]
pub struct Orchestrator {
    pub config: RunConfig,
    pub prompts: PromptSet,
    pub parser: Parser,
    judge: Judge,
}

struct Progress {
    rounds: Vec<RoundRecord>,
    warnings: Vec<String>,
}

impl Orchestrator {
    pub fn new(config: RunConfig, judge: Judge) -> Result<Self, RunErrorKind> {
        config.validate()?;
        Ok(Orchestrator {
            config,
            prompts: PromptSet::default(),
            parser: Parser::new(ParserConfig::default()),
            judge,
        })
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn judge(&self) -> &Judge {
        &self.judge
    }

    fn question(task: &Task) -> Result<&str, RunErrorKind> {
        let q = task.question.trim();
        if q.is_empty() {
            return Err(RunErrorKind::InvalidTask(format!(
                "task {} has an empty question",
                task.id
            )));
        }
        Ok(q)
    }

    pub fn build_combined_prompt(&self, task: &Task) -> Result<PromptText, RunErrorKind> {
        let text = self
            .prompts
            .combined
            .render(&[("question", Self::question(task)?)])?;
        Ok(PromptText {
            text,
            phase: PromptPhase::Combined,
        })
    }

    pub fn build_initial_prompt(&self, task: &Task) -> Result<PromptText, RunErrorKind> {
        let text = self
            .prompts
            .initial
            .render(&[("question", Self::question(task)?)])?;
        Ok(PromptText {
            text,
            phase: PromptPhase::Initial,
        })
    }

    pub fn build_review_prompt(
        &self,
        task: &Task,
        prior: &ChainOfThought,
    ) -> Result<PromptText, RunErrorKind> {
        if prior.is_empty() {
            return Err(RunErrorKind::InvalidTask(
                "review needs a non-empty chain".into(),
            ));
        }
        let text = self.prompts.review.render(&[
            ("question", Self::question(task)?),
            ("chain", &prior.render_numbered()),
        ])?;
        Ok(PromptText {
            text,
            phase: PromptPhase::Review,
        })
    }

    fn call(
        &self,
        backend: &dyn Backend,
        prompt: PromptText,
        task: &Task,
        round: u32,
    ) -> Result<String, RunErrorKind> {
        let request = BackendRequest {
            prompt,
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
            timeout: self.config.timeout,
            seed: request_seed(self.config.seed, &task.id, round),
        };
        Ok(backend.complete(&request)?.text)
    }

    /// Attaches whatever ground truth is available: provider labels, the
    /// task's gold chain for round 0, and labels of unchanged prior steps.
    fn label(
        &self,
        chain: &mut ChainOfThought,
        prior: Option<&ChainOfThought>,
        task: &Task,
        backend: &dyn Backend,
    ) {
        backend.annotate(chain);
        if chain.round == 0 {
            if let Some(gold) = &task.gold_chain {
                for step in &mut chain.steps {
                    if let Some(g) = gold.step(step.index) {
                        step.gold_is_error = step.gold_is_error.or(g.gold_is_error);
                        step.gold_links_next = step.gold_links_next.or(g.gold_links_next);
                    }
                }
            }
        }
        if let Some(prior) = prior {
            let unchanged: Vec<bool> = chain
                .steps
                .iter()
                .map(|s| prior.step(s.index).is_some_and(|p| p.text == s.text))
                .collect();
            for i in 0..chain.steps.len() {
                if !unchanged[i] {
                    continue;
                }
                let p = prior.step(chain.steps[i].index).expect("checked above");
                let (err, link) = (p.gold_is_error, p.gold_links_next);
                let step = &mut chain.steps[i];
                step.gold_is_error = step.gold_is_error.or(err);
                if unchanged.get(i + 1).copied().unwrap_or(false) {
                    step.gold_links_next = step.gold_links_next.or(link);
                }
            }
        }
    }

    fn consistency(&self, chain: &ChainOfThought) -> Result<Rational, RunErrorKind> {
        Ok(logical_consistency(chain, &self.judge)?.normalized)
    }

    pub fn run(&self, task: &Task, backend: &dyn Backend) -> Result<MultiplexTrace, RunError> {
        let mut progress = Progress {
            rounds: Vec::new(),
            warnings: Vec::new(),
        };
        match self.run_rounds(task, backend, &mut progress) {
            Ok(()) => {
                let last = progress.rounds.last().expect("at least one round");
                let trace = MultiplexTrace {
                    task_id: task.id.clone(),
                    category: task.category,
                    final_answer: last.chain.final_answer.clone(),
                    rounds: progress.rounds,
                    config_snapshot: self.config.snapshot(backend.tag()),
                    warnings: progress.warnings,
                };
                check_trace(&trace).map_err(|e| RunError {
                    task_id: task.id.clone(),
                    rounds: trace.rounds.clone(),
                    warnings: trace.warnings.clone(),
                    kind: Box::new(e.into()),
                })?;
                Ok(trace)
            }
            Err(kind) => Err(RunError {
                task_id: task.id.clone(),
                rounds: progress.rounds,
                warnings: progress.warnings,
                kind: Box::new(kind),
            }),
        }
    }

    fn run_rounds(
        &self,
        task: &Task,
        backend: &dyn Backend,
        progress: &mut Progress,
    ) -> Result<(), RunErrorKind> {
        let warn = |progress: &mut Progress, round: u32, ws: Vec<String>| {
            progress
                .warnings
                .extend(ws.into_iter().map(|w| format!("round {round}: {w}")));
        };

        let (mut initial, mut pending) = match self.config.prompt_mode {
            PromptMode::Combined => {
                let text = self.call(backend, self.build_combined_prompt(task)?, task, 0)?;
                match self.parser.parse_multiplex_response(&text) {
                    Ok(m) => {
                        warn(progress, 0, m.initial.warnings);
                        (m.initial.chain, Some((m.critique, m.refined)))
                    }
                    Err(ParseError::PhaseMissing { initial }) => {
                        let initial = *initial;
                        warn(progress, 0, initial.warnings);
                        progress.warnings.push(
                            "combined response had no review phase; falling back to two_call"
                                .into(),
                        );
                        (initial.chain, None)
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            PromptMode::TwoCall => {
                let text = self.call(backend, self.build_initial_prompt(task)?, task, 0)?;
                let report = self.parser.parse_chain(&text)?;
                warn(progress, 0, report.warnings);
                (report.chain, None)
            }
        };
        initial.round = 0;
        self.label(&mut initial, None, task, backend);
        let c0 = self.consistency(&initial)?;
        progress.rounds.push(RoundRecord {
            chain: initial,
            critique: None,
            consistency: c0,
            delta: Rational::ZERO,
        });

        let mut deltas = Vec::new();
        while !should_stop(&deltas, &self.config) {
            let k = progress.rounds.len() as u32;
            let prior = &progress.rounds[k as usize - 1];
            let (critique, report) = match pending.take() {
                Some(p) => p,
                None => {
                    let prompt = self.build_review_prompt(task, &prior.chain)?;
                    let text = self.call(backend, prompt, task, k)?;
                    let r = self.parser.parse_review_response(&text, &prior.chain)?;
                    (r.critique, r.refined)
                }
            };
            let mut refined = report.chain;
            warn(progress, k, report.warnings);
            refined.round = k;
            let prior = &progress.rounds[k as usize - 1];
            self.label(&mut refined, Some(&prior.chain), task, backend);
            let ck = self.consistency(&refined)?;
            let delta = ck - prior.consistency;
            progress.rounds[k as usize - 1].critique = Some(critique);
            progress.rounds.push(RoundRecord {
                chain: refined,
                critique: None,
                consistency: ck,
                delta,
            });
            deltas.push(delta);
        }
        Ok(())
    }
}

/// Builds the judge a run needs; model-backed judging reuses `backend`.
pub fn judge_for(
    config: &JudgeConfig,
    backend: std::sync::Arc<dyn Backend>,
) -> Result<Judge, JudgeError> {
    match config.strategy {
        JudgeStrategy::ModelBacked => Judge::with_backend(config.clone(), backend),
        _ => Judge::new(config.clone()),
    }
}

pub fn build_combined_prompt(task: &Task) -> Result<PromptText, RunErrorKind> {
    Orchestrator::new(RunConfig::default(), Judge::lexical())?.build_combined_prompt(task)
}

pub fn build_review_prompt(
    task: &Task,
    prior: &ChainOfThought,
) -> Result<PromptText, RunErrorKind> {
    Orchestrator::new(RunConfig::default(), Judge::lexical())?.build_review_prompt(task, prior)
}

/// Runs one task with default prompts and parser.
pub fn run_multiplex(
    task: &Task,
    backend: std::sync::Arc<dyn Backend>,
    config: &RunConfig,
) -> Result<MultiplexTrace, RunError> {
    let setup = || -> Result<Orchestrator, RunErrorKind> {
        let judge = judge_for(&config.judge_config, backend.clone())?;
        Orchestrator::new(config.clone(), judge)
    };
    let orchestrator = setup().map_err(|kind| RunError {
        task_id: task.id.clone(),
        rounds: Vec::new(),
        warnings: Vec::new(),
        kind: Box::new(kind),
    })?;
    orchestrator.run(task, backend.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Category;

    fn cfg(max_rounds: u32, eps: &str) -> RunConfig {
        RunConfig {
            max_rounds,
            epsilon: eps.parse().unwrap(),
            ..Default::default()
        }
    }

    fn r(s: &str) -> Rational {
        s.parse().unwrap()
    }

    #[test]
    fn stop_rule_examples() {
        assert!(should_stop(&[r("0.2"), r("0")], &cfg(10, "0.01")));
        assert!(!should_stop(&[], &cfg(10, "0.5")));
        assert!(!should_stop(&[r("0.2"), r("0.05")], &cfg(10, "0.01")));
    }

    #[test]
    fn stop_rule_round_bound() {
        assert!(should_stop(&[], &cfg(1, "0")));
        assert!(!should_stop(&[r("0.1")], &cfg(3, "0")));
        assert!(should_stop(&[r("0.1"), r("0.1")], &cfg(3, "0")));
    }

    #[test]
    fn zero_epsilon_stops_only_on_negative_delta() {
        assert!(!should_stop(&[r("0")], &cfg(10, "0")));
        assert!(should_stop(&[r("-1/100")], &cfg(10, "0")));
    }

    #[test]
    fn combined_prompt_is_the_reference_text() {
        let task = Task::new("p", Category::Commonsense, "What is the capital of France?");
        let p = build_combined_prompt(&task).unwrap();
        assert_eq!(
            p.text,
            "Please solve the following problem: What is the capital of France?\nFirst, generate a Chain of Thought for how you would arrive at the answer. Then, review your answer and critique it. If you find any inconsistencies or errors, correct them and provide the final answer."
        );
        assert_eq!(p.phase, PromptPhase::Combined);
    }

    #[test]
    fn combined_prompt_swaps_only_the_question() {
        let a = build_combined_prompt(&Task::new(
            "a",
            Category::Arithmetic,
            "What is the capital of France?",
        ))
        .unwrap();
        let b = build_combined_prompt(&Task::new("b", Category::Arithmetic, "2+2?")).unwrap();
        assert_eq!(
            a.text.replace("What is the capital of France?", "2+2?"),
            b.text
        );
    }

    #[test]
    fn empty_question_is_rejected() {
        let t = Task::new("e", Category::Other, "   ");
        assert!(matches!(
            build_combined_prompt(&t),
            Err(RunErrorKind::InvalidTask(_))
        ));
    }

    #[test]
    fn review_prompt_embeds_chain_in_order() {
        let task = Task::new("p", Category::Commonsense, "What is the capital of France?");
        let chain = ChainOfThought::from_texts(
            [
                "France is a country in Europe.",
                "The capital of France is well-known as the city of Paris.",
                "Therefore, the capital of France is Paris.",
            ],
            "Paris",
        );
        let p = build_review_prompt(&task, &chain).unwrap();
        assert_eq!(p.phase, PromptPhase::Review);
        let lower = p.text.to_lowercase();
        assert!(lower.contains("review"));
        assert!(lower.contains("identify any potential flaws or inconsistencies"));
        let mut last = 0;
        for s in &chain.steps {
            let at = p.text.find(&s.text).expect("step present");
            assert!(at >= last);
            last = at;
        }

        let one = ChainOfThought::from_texts(["Therefore, 4."], "4");
        assert!(build_review_prompt(&task, &one)
            .unwrap()
            .text
            .contains("1. Therefore, 4."));

        let ten = ChainOfThought::from_texts(
            (1..=10).map(|i| format!("Observation number {i} holds.")),
            "x",
        );
        let p = build_review_prompt(&task, &ten).unwrap();
        let positions: Vec<usize> = ten
            .steps
            .iter()
            .map(|s| p.text.find(&format!("{}. {}", s.index, s.text)).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn request_seed_depends_on_all_parts() {
        assert_eq!(request_seed(None, "t", 0), None);
        let a = request_seed(Some(1), "t", 0);
        assert_ne!(a, request_seed(Some(1), "t", 1));
        assert_ne!(a, request_seed(Some(1), "u", 0));
        assert_ne!(a, request_seed(Some(2), "t", 0));
        assert_eq!(a, request_seed(Some(1), "t", 0));
    }
}

//! Multiplex chain-of-thought: generate a reasoning chain, critique it,
//! refine it, and score the result.

pub mod backend;
pub mod chain;
pub mod judge;
pub mod metrics;
pub mod orchestrator;
pub mod parser;
pub mod prompt;
pub mod rational;

pub use backend::{
    Backend, BackendError, BackendRequest, BackendResponse, HttpBackend, HttpConfig,
    RecordingBackend, ReplayBackend, RetryPolicy, SyntheticBackend, SyntheticConfig,
};
pub use chain::{
    check_trace, deserialize_trace, serialize_trace, validate_chain, validate_critique, Category,
    ChainOfThought, Critique, CritiqueItem, MultiplexTrace, ReasoningStep, RoundRecord, StepKind,
    Task, TraceError, Verdict,
};
pub use judge::{
    identify_errors, judge_connection, judge_refinement_consistency, Judge, JudgeConfig,
    JudgeError, JudgeStrategy, JudgeVerdict,
};
pub use metrics::{
    coherence, error_correction_rate, error_counts, logical_consistency, reasoning_improvement,
    round_deltas, score_trace, total_improvement, Consistency, ErrorCounts, MetricsError,
    MetricsReport,
};
pub use orchestrator::{
    build_combined_prompt, build_review_prompt, run_multiplex, should_stop, Orchestrator,
    PromptMode, RunConfig, RunError, RunErrorKind,
};
pub use parser::{
    parse_chain, parse_multiplex_response, ParseError, ParseReport, Parser, ParserConfig,
};
pub use prompt::{PromptPhase, PromptSet, PromptText, Template, TemplateError};
pub use rational::{Mean, Rational, RationalError};

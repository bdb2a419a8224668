//! Corpus runner, aggregation and report rendering behind the `mcot` binary.

pub mod aggregate;
pub mod corpus;
pub mod report;
pub mod runner;

pub use aggregate::{aggregate, AggregateRow, Aggregation};
pub use corpus::{load_corpus, parse_corpus, Corpus, CorpusError, LineError};
pub use report::{emit_report, parse_csv, render_report, ReportError, ReportFormat, ReportMeta};
pub use runner::{
    load_traces, run_corpus, Manifest, ManifestEntry, RunOptions, RunSummary, RunnerError,
    TaskStatus,
};

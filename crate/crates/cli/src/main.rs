use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mcot_cli::{
    aggregate, emit_report, load_corpus, load_traces, run_corpus, Aggregation, ReportFormat,
    ReportMeta, RunOptions,
};
use mcot_core::backend::{
    Backend, HttpBackend, HttpConfig, RecordingBackend, ReplayBackend, SyntheticBackend,
    SyntheticConfig,
};
use mcot_core::chain::deserialize_trace;
use mcot_core::judge::{load_stopwords, Judge, JudgeConfig, JudgeStrategy};
use mcot_core::metrics::score_trace;
use mcot_core::orchestrator::{judge_for, PromptMode, RunConfig};
use mcot_core::prompt::PromptSet;
use mcot_core::Rational;

#[derive(Parser)]
#[command(
    name = "mcot",
    version,
    about = "Generate, critique and refine chains of thought, then score them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task of a corpus and write one trace per task.
    Run(RunCmd),
    /// Recompute the metrics of a trace file.
    Score(ScoreCmd),
    /// Aggregate a directory of traces into a report.
    Report(ReportCmd),
    /// Run a corpus against a live backend and store every response for replay.
    Record(RecordCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Http,
    Replay,
    Synthetic,
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeKind {
    Lexical,
    Annotated,
    Model,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Combined,
    #[value(name = "two_call")]
    TwoCall,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
    Json,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    backend: BackendKind,
    /// Replay store (JSON lines) for the replay backend.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Model name sent to the http backend.
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Synthetic backend: probability that a generated step is wrong.
    #[arg(long, default_value_t = 0.3)]
    error_rate: f64,
    /// Synthetic backend: probability that a review fixes a wrong step.
    #[arg(long, default_value_t = 0.5)]
    correction_prob: f64,
    /// Synthetic backend: reasoning steps per chain.
    #[arg(long, default_value_t = 10)]
    steps: u32,
}

#[derive(Args)]
struct JudgeArgs {
    #[arg(long, value_enum, default_value = "lexical")]
    judge: JudgeKind,
    /// Minimum Jaccard overlap for the lexical judge.
    #[arg(long)]
    threshold: Option<f64>,
    /// Stopword list, one word per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    judge: JudgeArgs,
    /// Total rounds including the initial chain.
    #[arg(long, default_value_t = 2)]
    rounds: u32,
    /// Stop early once a round improves consistency by less than this.
    #[arg(long, default_value = "0")]
    epsilon: String,
    #[arg(long, value_enum, default_value = "combined")]
    prompt_mode: ModeArg,
    /// Directory with replacement prompt templates.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1024)]
    max_tokens: u32,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
}

#[derive(Args)]
struct RunCmd {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
    /// Skip tasks that already have a valid trace in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ScoreCmd {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    judge: JudgeArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct ReportCmd {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
    /// Pool pair counts across chains instead of averaging per chain.
    #[arg(long)]
    pooled: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecordCmd {
    #[command(flatten)]
    run: RunArgs,
    /// Replay store to append to.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the traces of the recording run [default: <out>.traces].
    #[arg(long)]
    traces: Option<PathBuf>,
}

fn backend_from(args: &BackendArgs) -> Result<Arc<dyn Backend>> {
    Ok(match args.backend {
        BackendKind::Http => {
            let mut cfg = HttpConfig::from_env(&args.model)?;
            cfg.max_in_flight = args.max_in_flight;
            Arc::new(HttpBackend::new(cfg)?)
        }
        BackendKind::Replay => {
            let path = args
                .replay
                .as_ref()
                .context("--replay FILE is required with --backend replay")?;
            Arc::new(ReplayBackend::load(path)?)
        }
        BackendKind::Synthetic => Arc::new(SyntheticBackend::new(SyntheticConfig {
            error_rate: args.error_rate,
            correction_prob: args.correction_prob,
            steps_per_chain: args.steps,
            rng_seed: 0,
        })?),
    })
}

fn judge_config(args: &JudgeArgs) -> Result<JudgeConfig> {
    let mut cfg = JudgeConfig::with_strategy(match args.judge {
        JudgeKind::Lexical => JudgeStrategy::Lexical,
        JudgeKind::Annotated => JudgeStrategy::Annotated,
        JudgeKind::Model => JudgeStrategy::ModelBacked,
    });
    if let Some(t) = args.threshold {
        cfg.lexical_threshold = t;
    }
    if let Some(p) = &args.stopwords {
        cfg.stopwords =
            load_stopwords(p).with_context(|| format!("reading stopwords {}", p.display()))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let epsilon: Rational = args
        .epsilon
        .parse()
        .with_context(|| format!("--epsilon {}", args.epsilon))?;
    let cfg = RunConfig {
        max_rounds: args.rounds,
        epsilon,
        prompt_mode: match args.prompt_mode {
            ModeArg::Combined => PromptMode::Combined,
            ModeArg::TwoCall => PromptMode::TwoCall,
        },
        judge_config: judge_config(&args.judge)?,
        seed: args.seed,
        temperature: args.temperature,
        max_output_tokens: args.max_tokens,
        timeout: Duration::from_secs(args.timeout),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn execute(
    args: &RunArgs,
    backend: Arc<dyn Backend>,
    out: &Path,
    resume: bool,
) -> Result<ExitCode> {
    let config = run_config(args)?;
    let corpus = load_corpus(&args.corpus)?;
    for w in &corpus.warnings {
        log::warn!("{}: {w}", args.corpus.display());
    }
    let options = RunOptions {
        out_dir: out.to_path_buf(),
        parallel: args.parallel,
        resume,
        prompts: args
            .prompts
            .as_deref()
            .map(PromptSet::load_dir)
            .transpose()?,
    };
    let summary = run_corpus(&corpus.tasks, backend, &config, &options)?;
    eprintln!(
        "{} succeeded ({} resumed), {} failed; manifest at {}",
        summary.succeeded,
        summary.resumed,
        summary.failed,
        summary.manifest.display()
    );
    Ok(if summary.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn run(cmd: RunCmd) -> Result<ExitCode> {
    let backend = backend_from(&cmd.run.backend)?;
    execute(&cmd.run, backend, &cmd.out, cmd.resume)
}

fn record(cmd: RecordCmd) -> Result<ExitCode> {
    if matches!(cmd.run.backend.backend, BackendKind::Replay) {
        bail!("record needs a live backend (http or synthetic)");
    }
    let inner = backend_from(&cmd.run.backend)?;
    let store = Arc::new(ReplayBackend::open(&cmd.out)?);
    let recording: Arc<dyn Backend> = Arc::new(RecordingBackend::new(inner, store.clone()));
    let traces = cmd.traces.clone().unwrap_or_else(|| {
        let mut p = cmd.out.clone().into_os_string();
        p.push(".traces");
        PathBuf::from(p)
    });
    let code = execute(&cmd.run, recording, &traces, false)?;
    eprintln!("{} prompts stored in {}", store.len(), cmd.out.display());
    Ok(code)
}

fn score(cmd: ScoreCmd) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&cmd.trace)
        .with_context(|| format!("reading {}", cmd.trace.display()))?;
    let trace = deserialize_trace(&text).with_context(|| cmd.trace.display().to_string())?;
    let cfg = judge_config(&cmd.judge)?;
    let judge = match cfg.strategy {
        JudgeStrategy::ModelBacked => judge_for(&cfg, backend_from(&cmd.backend)?)?,
        _ => Judge::new(cfg)?,
    };
    let report = score_trace(&trace, &judge)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn report(cmd: ReportCmd) -> Result<ExitCode> {
    let traces = load_traces(&cmd.input)?;
    if traces.is_empty() {
        bail!("no traces found in {}", cmd.input.display());
    }
    let mode = if cmd.pooled {
        Aggregation::Pooled
    } else {
        Aggregation::MeanOfChains
    };
    let rows = aggregate(&traces, mode)?;
    let format = match cmd.format {
        FormatArg::Markdown => ReportFormat::Markdown,
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    emit_report(
        &rows,
        format,
        &ReportMeta::from_traces(&traces, mode),
        &cmd.out,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(c) => run(c),
        Command::Score(c) => score(c),
        Command::Report(c) => report(c),
        Command::Record(c) => record(c),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}

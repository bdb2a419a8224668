//! Markdown, CSV and JSON renderings of aggregate rows.

use std::path::Path;
use std::str::FromStr;

use mcot_core::chain::{Category, MultiplexTrace};
use mcot_core::Rational;
use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregateRow, Aggregation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    /// Judge strategies found in the traces' run configuration.
    pub judges: Vec<String>,
    pub aggregation: Aggregation,
}

impl ReportMeta {
    pub fn from_traces(traces: &[MultiplexTrace], aggregation: Aggregation) -> Self {
        let mut judges: Vec<String> = traces
            .iter()
            .filter_map(|t| {
                t.config_snapshot
                    .get("judge")
                    .and_then(|j| j.as_str())
                    .map(String::from)
            })
            .collect();
        judges.sort();
        judges.dedup();
        ReportMeta {
            judges,
            aggregation,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no rows to report")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid CSV report: {0}")]
    Csv(String),
}

pub const UNDEFINED: &str = "undefined";

/// Percentage text with two decimals, half to even: 17/20 → "85.00".
pub fn percent(fraction: Rational) -> String {
    (fraction * Rational::from_integer(100)).to_decimal(2)
}

fn signed(pct: &str) -> String {
    if pct.starts_with('-') {
        pct.to_string()
    } else {
        format!("+{pct}")
    }
}

fn improvement_text(v: Option<Rational>) -> String {
    v.map(|v| v.to_decimal(2))
        .unwrap_or_else(|| UNDEFINED.into())
}

pub fn methodology(rows: &[AggregateRow], meta: &ReportMeta) -> Vec<String> {
    let counts = rows
        .iter()
        .map(|r| format!("{} {}", r.category.label(), r.task_count))
        .collect::<Vec<_>>()
        .join(", ");
    let judges = if meta.judges.is_empty() {
        "unknown".to_string()
    } else {
        meta.judges.join(", ")
    };
    let mut lines = vec![
        format!("Tasks per row: {counts}."),
        format!(
            "CoT and MCoT are the normalized logical consistency (connected consecutive step pairs over all consecutive pairs) of the first and final round, aggregated as {}.",
            meta.aggregation.as_str()
        ),
        format!("Step connections were judged with the {judges} strategy."),
        "Logical Consistency Improvement is relative: (MCoT - CoT) / CoT x 100, taken on the category means; it is undefined when CoT is 0.".into(),
        "Error Correction Rate is the mean over tasks with at least one initial error of corrected / initial x 100; a row with no initial errors shows 100.".into(),
        "Values are rounded to two decimals, half to even.".into(),
        "Relative and absolute improvement differ: a row moving from 85% to 92% is +8.24% under the relative formula used here, whereas +7% for the same row is the absolute gain in percentage points. Figures quoted elsewhere as +7% for that row are not comparable with this column.".into(),
    ];
    if rows.iter().any(|r| !r.exact) {
        lines.push("Some means were rounded to 12 decimal places before rendering.".into());
    }
    lines
}

pub fn render_markdown(rows: &[AggregateRow], meta: &ReportMeta) -> String {
    let mut out = String::from(
        "| Task | CoT | MCoT | Logical Consistency Improvement | Error Correction Rate |\n",
    );
    out.push_str("|---|---|---|---|---|\n");
    for r in rows {
        let imp = match r.mean_improvement {
            Some(v) => format!("{}%", signed(&v.to_decimal(2))),
            None => UNDEFINED.into(),
        };
        out.push_str(&format!(
            "| {} | {}% | {}% | {} | {}% |\n",
            r.category.label(),
            percent(r.mean_c_cot),
            percent(r.mean_c_refined),
            imp,
            r.mean_e_corr.to_decimal(2)
        ));
    }
    out.push_str("\n**Methodology.**\n\n");
    for line in methodology(rows, meta) {
        out.push_str(&format!("- {line}\n"));
    }
    out
}

fn ratio_text(r: Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    category: Category,
    task: String,
    task_count: usize,
    cot_pct: String,
    mcot_pct: String,
    improvement_pct: String,
    e_corr_pct: String,
    e_initial: u64,
    e_corrected: u64,
    cot: String,
    mcot: String,
    improvement: String,
    task_improvement: String,
    e_corr: String,
    exact: bool,
}

impl From<&AggregateRow> for CsvRow {
    fn from(r: &AggregateRow) -> Self {
        let opt = |v: Option<Rational>| v.map(ratio_text).unwrap_or_default();
        CsvRow {
            category: r.category,
            task: r.category.label().into(),
            task_count: r.task_count,
            cot_pct: percent(r.mean_c_cot),
            mcot_pct: percent(r.mean_c_refined),
            improvement_pct: improvement_text(r.mean_improvement),
            e_corr_pct: r.mean_e_corr.to_decimal(2),
            e_initial: r.e_initial,
            e_corrected: r.e_corrected,
            cot: ratio_text(r.mean_c_cot),
            mcot: ratio_text(r.mean_c_refined),
            improvement: opt(r.mean_improvement),
            task_improvement: opt(r.mean_task_improvement),
            e_corr: ratio_text(r.mean_e_corr),
            exact: r.exact,
        }
    }
}

impl TryFrom<CsvRow> for AggregateRow {
    type Error = ReportError;

    fn try_from(c: CsvRow) -> Result<Self, Self::Error> {
        let p = |s: &str| {
            s.parse::<Rational>()
                .map_err(|e| ReportError::Csv(e.to_string()))
        };
        let opt = |s: &str| {
            if s.is_empty() {
                Ok(None)
            } else {
                p(s).map(Some)
            }
        };
        Ok(AggregateRow {
            category: c.category,
            task_count: c.task_count,
            mean_c_cot: p(&c.cot)?,
            mean_c_refined: p(&c.mcot)?,
            mean_improvement: opt(&c.improvement)?,
            mean_task_improvement: opt(&c.task_improvement)?,
            mean_e_corr: p(&c.e_corr)?,
            e_initial: c.e_initial,
            e_corrected: c.e_corrected,
            exact: c.exact,
        })
    }
}

/// Percent columns are rounded for reading; the exact fractions follow them.
pub fn render_csv(rows: &[AggregateRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRow::from(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn parse_csv(text: &str) -> Result<Vec<AggregateRow>, ReportError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize::<CsvRow>()
        .map(|r| {
            r.map_err(|e| ReportError::Csv(e.to_string()))
                .and_then(AggregateRow::try_from)
        })
        .collect()
}

#[derive(Serialize)]
struct JsonRow<'a> {
    task: &'static str,
    cot_pct: String,
    mcot_pct: String,
    improvement_pct: String,
    task_improvement_pct: String,
    e_corr_pct: String,
    #[serde(flatten)]
    exact: &'a AggregateRow,
}

pub fn render_json(rows: &[AggregateRow], meta: &ReportMeta) -> String {
    let json_rows: Vec<JsonRow> = rows
        .iter()
        .map(|r| JsonRow {
            task: r.category.label(),
            cot_pct: percent(r.mean_c_cot),
            mcot_pct: percent(r.mean_c_refined),
            improvement_pct: improvement_text(r.mean_improvement),
            task_improvement_pct: improvement_text(r.mean_task_improvement),
            e_corr_pct: r.mean_e_corr.to_decimal(2),
            exact: r,
        })
        .collect();
    let doc = serde_json::json!({
        "aggregation": meta.aggregation,
        "judges": meta.judges,
        "methodology": methodology(rows, meta),
        "rows": json_rows,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

pub fn render_report(
    rows: &[AggregateRow],
    format: ReportFormat,
    meta: &ReportMeta,
) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(match format {
        ReportFormat::Markdown => render_markdown(rows, meta),
        ReportFormat::Csv => render_csv(rows),
        ReportFormat::Json => render_json(rows, meta),
    })
}

pub fn emit_report(
    rows: &[AggregateRow],
    format: ReportFormat,
    meta: &ReportMeta,
    path: &Path,
) -> Result<(), ReportError> {
    let text = render_report(rows, format, meta)?;
    std::fs::write(path, text).map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })
}

//! Per-category summary rows.

use std::collections::BTreeMap;

use mcot_core::chain::{Category, MultiplexTrace, RoundRecord};
use mcot_core::metrics::{
    error_correction_rate, error_counts, reasoning_improvement, MetricsError,
};
use mcot_core::Rational;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Average the per-chain normalized scores.
    #[default]
    MeanOfChains,
    /// Pool connected pairs and pair counts across chains, then divide.
    Pooled,
}

impl Aggregation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Aggregation::MeanOfChains => "mean_of_chains",
            Aggregation::Pooled => "pooled",
        }
    }
}

/// One report row. Consistency means are fractions in [0, 1]; the
/// improvement and error-correction figures are percentages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub category: Category,
    pub task_count: usize,
    pub mean_c_cot: Rational,
    pub mean_c_refined: Rational,
    /// Relative improvement of the category means; `None` when the CoT mean is 0.
    pub mean_improvement: Option<Rational>,
    /// Mean of the per-task improvements, over tasks where it is defined.
    pub mean_task_improvement: Option<Rational>,
    /// Mean per-task error correction rate over tasks that had errors;
    /// 100 when no task had any.
    pub mean_e_corr: Rational,
    pub e_initial: u64,
    pub e_corrected: u64,
    /// False when a mean had to be rounded to fit in 64 bits.
    pub exact: bool,
}

#[derive(Default)]
struct Bucket<'a> {
    traces: Vec<&'a MultiplexTrace>,
}

fn raw_pairs(round: &RoundRecord) -> (i64, i64) {
    let pairs = round.chain.len().saturating_sub(1) as i64;
    let raw = if pairs == 0 {
        0
    } else {
        let c = round.consistency * Rational::from_integer(pairs);
        debug_assert_eq!(c.denom(), 1, "stored consistency is raw / pairs");
        c.round_half_even()
    };
    (raw, pairs)
}

fn pooled(rounds: impl Iterator<Item = (i64, i64)>) -> Rational {
    let (raw, pairs) = rounds.fold((0, 0), |(r, p), (r2, p2)| (r + r2, p + p2));
    if pairs == 0 {
        Rational::ONE
    } else {
        Rational::new(raw, pairs)
    }
}

/// Groups traces by category (rows sorted by category) and averages them.
/// The result does not depend on the order of `traces`.
pub fn aggregate(
    traces: &[MultiplexTrace],
    mode: Aggregation,
) -> Result<Vec<AggregateRow>, MetricsError> {
    let mut buckets: BTreeMap<Category, Bucket> = BTreeMap::new();
    for t in traces {
        buckets.entry(t.category).or_default().traces.push(t);
    }
    let mut rows = Vec::with_capacity(buckets.len());
    for (category, mut bucket) in buckets {
        // Sum order must not depend on input order for the fallback rounding path.
        bucket.traces.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        let ts = &bucket.traces;
        let mut exact = true;
        let mut mean = |vals: Vec<Rational>| {
            let m = Rational::mean(&vals).expect("bucket is non-empty");
            exact &= m.exact;
            m.value
        };
        let (c_cot, c_ref) = match mode {
            Aggregation::MeanOfChains => (
                mean(ts.iter().map(|t| t.initial().consistency).collect()),
                mean(ts.iter().map(|t| t.last().consistency).collect()),
            ),
            Aggregation::Pooled => (
                pooled(ts.iter().map(|t| raw_pairs(t.initial()))),
                pooled(ts.iter().map(|t| raw_pairs(t.last()))),
            ),
        };
        let mut e_initial = 0u64;
        let mut e_corrected = 0u64;
        let mut rates = Vec::new();
        let mut task_improvements = Vec::new();
        for t in ts {
            let e = error_counts(t)?;
            e_initial += e.initial as u64;
            e_corrected += e.corrected as u64;
            if e.initial > 0 {
                rates.push(error_correction_rate(e.initial, e.corrected)?);
            }
            if let Ok(v) = reasoning_improvement(t.initial().consistency, t.last().consistency) {
                task_improvements.push(v);
            }
        }
        let mean_e_corr = if rates.is_empty() {
            Rational::from_integer(100)
        } else {
            mean(rates)
        };
        let mean_task_improvement = if task_improvements.is_empty() {
            None
        } else {
            Some(mean(task_improvements))
        };
        rows.push(AggregateRow {
            category,
            task_count: ts.len(),
            mean_c_cot: c_cot,
            mean_c_refined: c_ref,
            mean_improvement: reasoning_improvement(c_cot, c_ref).ok(),
            mean_task_improvement,
            mean_e_corr,
            e_initial,
            e_corrected,
            exact,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcot_core::chain::ChainOfThought;

    fn trace(id: &str, cat: Category, c0: Rational, c1: Rational, n: usize) -> MultiplexTrace {
        let chain = |round| {
            let mut c = ChainOfThought::from_texts((0..n).map(|i| format!("s{i}")), "x");
            c.round = round;
            c
        };
        MultiplexTrace {
            task_id: id.into(),
            category: cat,
            rounds: vec![
                RoundRecord {
                    chain: chain(0),
                    critique: Some(Default::default()),
                    consistency: c0,
                    delta: Rational::ZERO,
                },
                RoundRecord {
                    chain: chain(1),
                    critique: None,
                    consistency: c1,
                    delta: c1 - c0,
                },
            ],
            final_answer: "x".into(),
            config_snapshot: serde_json::Value::Null,
            warnings: vec![],
        }
    }

    fn r(s: &str) -> Rational {
        s.parse().unwrap()
    }

    #[test]
    fn improvement_is_taken_on_the_means() {
        let ts = vec![
            trace("a", Category::Arithmetic, r("0.8"), r("0.9"), 11),
            trace("b", Category::Arithmetic, r("0.8"), r("0.9"), 11),
        ];
        let rows = aggregate(&ts, Aggregation::MeanOfChains).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].task_count, 2);
        assert_eq!(rows[0].mean_improvement, Some(r("12.5")));
        assert_eq!(rows[0].mean_e_corr, r("100"));
    }

    #[test]
    fn single_trace_row_equals_the_trace() {
        let ts = vec![trace("a", Category::Ethical, r("3/4"), r("1"), 5)];
        let row = &aggregate(&ts, Aggregation::MeanOfChains).unwrap()[0];
        assert_eq!(
            (row.task_count, row.mean_c_cot, row.mean_c_refined),
            (1, r("3/4"), r("1"))
        );
        assert_eq!(row.mean_task_improvement, row.mean_improvement);
    }

    #[test]
    fn pooled_weights_by_pair_count() {
        let ts = vec![
            trace("a", Category::Arithmetic, r("1/2"), r("1"), 3),
            trace("b", Category::Arithmetic, r("1"), r("1"), 11),
        ];
        let mean = &aggregate(&ts, Aggregation::MeanOfChains).unwrap()[0];
        let pooled = &aggregate(&ts, Aggregation::Pooled).unwrap()[0];
        assert_eq!(mean.mean_c_cot, r("3/4"));
        assert_eq!(pooled.mean_c_cot, r("11/12"));
    }

    #[test]
    fn zero_baseline_has_no_improvement() {
        let ts = vec![trace("a", Category::Other, r("0"), r("1/2"), 3)];
        let row = &aggregate(&ts, Aggregation::MeanOfChains).unwrap()[0];
        assert_eq!(row.mean_improvement, None);
        assert_eq!(row.mean_task_improvement, None);
    }

    #[test]
    fn rows_are_sorted_by_category() {
        let ts = vec![
            trace("a", Category::Ethical, r("1"), r("1"), 3),
            trace("b", Category::Arithmetic, r("1"), r("1"), 3),
        ];
        let cats: Vec<_> = aggregate(&ts, Aggregation::Pooled)
            .unwrap()
            .iter()
            .map(|r| r.category)
            .collect();
        assert_eq!(cats, [Category::Arithmetic, Category::Ethical]);
    }
}

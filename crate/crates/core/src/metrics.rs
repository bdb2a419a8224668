//! Reasoning-quality metrics, all in exact rational arithmetic.
//!
//! * logical consistency: connected consecutive pairs, raw and over `n − 1`
//! * coherence: initial steps whose refined counterpart stays consistent,
//!   over the initial length
//! * relative improvement `(refined − cot) / cot × 100`
//! * error correction rate `corrected / initial × 100`
//! * per-round deltas and their telescoping sum

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainOfThought, MultiplexTrace};
use crate::judge::{identify_errors, Judge, JudgeError};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consistency {
    /// Connected consecutive pairs.
    pub raw: u32,
    /// Consecutive pairs examined (`n − 1`).
    pub pairs: u32,
    /// `raw / pairs`, or 1 for a single-step chain.
    pub normalized: Rational,
}

impl Consistency {
    pub fn from_counts(raw: u32, pairs: u32) -> Self {
        let normalized = if pairs == 0 {
            Rational::ONE
        } else {
            Rational::new(raw as i64, pairs as i64)
        };
        Consistency {
            raw,
            pairs,
            normalized,
        }
    }
}

pub fn logical_consistency(
    chain: &ChainOfThought,
    judge: &Judge,
) -> Result<Consistency, MetricsError> {
    if chain.is_empty() {
        return Err(MetricsError::ContractViolation("chain has no steps".into()));
    }
    let mut raw = 0;
    for pair in chain.steps.windows(2) {
        if judge.connection(&pair[0], &pair[1])?.connected {
            raw += 1;
        }
    }
    Ok(Consistency::from_counts(raw, chain.len() as u32 - 1))
}

/// Steps are paired by position up to the shorter chain; the denominator is
/// the initial length, so dropped steps count as inconsistent.
pub fn coherence(
    initial: &ChainOfThought,
    refined: &ChainOfThought,
    judge: &Judge,
) -> Result<Rational, MetricsError> {
    if initial.is_empty() || refined.is_empty() {
        return Err(MetricsError::ContractViolation(
            "coherence needs non-empty chains".into(),
        ));
    }
    let mut consistent = 0i64;
    for (a, b) in initial.steps.iter().zip(&refined.steps) {
        if judge.refinement_consistency(a, b)?.connected {
            consistent += 1;
        }
    }
    Ok(Rational::new(consistent, initial.len() as i64))
}

/// `(c_refined − c_cot) / c_cot × 100`; undefined when `c_cot = 0`.
pub fn reasoning_improvement(
    c_cot: Rational,
    c_refined: Rational,
) -> Result<Rational, MetricsError> {
    if c_cot.is_zero() {
        return Err(MetricsError::DivisionByZero("baseline consistency is 0"));
    }
    if c_cot.is_negative() {
        return Err(MetricsError::ContractViolation(format!(
            "baseline consistency {c_cot} is negative"
        )));
    }
    Ok((c_refined - c_cot) / c_cot * Rational::from_integer(100))
}

/// `corrected / initial × 100`; 100 when there was nothing to correct.
pub fn error_correction_rate(e_initial: u32, e_corrected: u32) -> Result<Rational, MetricsError> {
    if e_corrected > e_initial {
        return Err(MetricsError::ContractViolation(format!(
            "corrected errors ({e_corrected}) exceed initial errors ({e_initial})"
        )));
    }
    if e_initial == 0 {
        return Ok(Rational::from_integer(100));
    }
    Ok(Rational::new(100 * e_corrected as i64, e_initial as i64))
}

pub fn round_deltas(consistencies: &[Rational]) -> Vec<Rational> {
    consistencies.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn total_improvement(deltas: &[Rational]) -> Rational {
    deltas.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub initial: u32,
    pub corrected: u32,
}

/// Errors present in the first round and how many are gone by the last.
///
/// Uses ground-truth step labels when both the first and last chains carry
/// them. Otherwise falls back to the model's own critique of the first
/// round: flagged steps count as errors, and a flagged step counts as
/// corrected when its text changed or it was dropped.
pub fn error_counts(trace: &MultiplexTrace) -> Result<ErrorCounts, MetricsError> {
    let first = &trace.initial().chain;
    let last = &trace.last().chain;
    if first.has_error_labels() && last.has_error_labels() {
        let before = identify_errors(first, Some(first), None)?;
        let after = identify_errors(last, Some(last), None)?;
        let corrected = before.difference(&after).count() as u32;
        return Ok(ErrorCounts {
            initial: before.len() as u32,
            corrected,
        });
    }
    let flagged: BTreeSet<u32> = identify_errors(first, None, trace.initial().critique.as_ref())?;
    let corrected = flagged
        .iter()
        .filter(|&&i| match (first.step(i), last.step(i)) {
            (Some(a), Some(b)) => a.text.trim() != b.text.trim(),
            _ => true,
        })
        .count() as u32;
    Ok(ErrorCounts {
        initial: flagged.len() as u32,
        corrected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub c_cot: Consistency,
    pub c_refined: Consistency,
    /// Raw count for the final chain (same as `c_refined.raw`).
    pub c_raw: u32,
    /// Normalized consistency of the final chain.
    pub c_norm: Rational,
    pub coherence: Rational,
    pub e_initial: u32,
    pub e_corrected: u32,
    pub e_corr_rate: Rational,
    /// `None` when the first-round consistency is zero.
    pub improvement_pct: Option<Rational>,
    pub deltas: Vec<Rational>,
    pub total_improvement: Rational,
}

/// Recomputes every metric of a trace with `judge`.
pub fn score_trace(trace: &MultiplexTrace, judge: &Judge) -> Result<MetricsReport, MetricsError> {
    let per_round = trace
        .rounds
        .iter()
        .map(|r| logical_consistency(&r.chain, judge))
        .collect::<Result<Vec<_>, _>>()?;
    let c_cot = per_round[0];
    let c_refined = *per_round.last().expect("non-empty");
    let deltas = round_deltas(&per_round.iter().map(|c| c.normalized).collect::<Vec<_>>());
    let errors = error_counts(trace)?;
    let improvement_pct = match reasoning_improvement(c_cot.normalized, c_refined.normalized) {
        Ok(v) => Some(v),
        Err(MetricsError::DivisionByZero(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        c_cot,
        c_refined,
        c_raw: c_refined.raw,
        c_norm: c_refined.normalized,
        coherence: coherence(&trace.initial().chain, &trace.last().chain, judge)?,
        e_initial: errors.initial,
        e_corrected: errors.corrected,
        e_corr_rate: error_correction_rate(errors.initial, errors.corrected)?,
        improvement_pct,
        total_improvement: total_improvement(&deltas),
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ReasoningStep;

    fn r(s: &str) -> Rational {
        s.parse().unwrap()
    }

    fn paris() -> ChainOfThought {
        ChainOfThought::from_texts(
            [
                "France is a country in Europe.",
                "The capital of France is well-known as the city of Paris.",
                "Therefore, the capital of France is Paris.",
            ],
            "the capital of France is Paris",
        )
    }

    fn linked(links: &[bool]) -> ChainOfThought {
        let mut c = ChainOfThought::from_texts((0..=links.len()).map(|i| format!("s{i}")), "x");
        for (s, &l) in c.steps.iter_mut().zip(links) {
            s.gold_links_next = Some(l);
        }
        c
    }

    #[test]
    fn paris_is_fully_connected_at_default_threshold() {
        // Pair 1→2: {france} of {france, country, europe, capital, well-known, city, paris} = 1/7.
        // Pair 2→3: 3/5. Both clear the 1/8 default.
        let c = logical_consistency(&paris(), &Judge::lexical()).unwrap();
        assert_eq!((c.raw, c.pairs), (2, 2));
        assert_eq!(c.normalized, Rational::ONE);
    }

    #[test]
    fn single_step_chain() {
        let c = ChainOfThought::from_texts(["Therefore, x."], "x");
        let v = logical_consistency(&c, &Judge::lexical()).unwrap();
        assert_eq!((v.raw, v.normalized), (0, Rational::ONE));
    }

    #[test]
    fn annotated_five_step_chain() {
        let v =
            logical_consistency(&linked(&[true, true, false, true]), &Judge::annotated()).unwrap();
        assert_eq!(v.raw, 3);
        assert_eq!(v.normalized, Rational::new(3, 4));
    }

    #[test]
    fn coherence_cases() {
        let j = Judge::lexical();
        assert_eq!(coherence(&paris(), &paris(), &j).unwrap(), Rational::ONE);
        let other = ChainOfThought::from_texts(
            [
                "Oceans remain salty.",
                "Rivers flow downhill.",
                "Snow melts.",
            ],
            "",
        );
        assert_eq!(coherence(&paris(), &other, &j).unwrap(), Rational::ZERO);

        // Four initial steps, three refined: positions 1 and 3 unchanged,
        // position 2 rewritten into a still-wrong statement.
        let initial = ChainOfThought::from_texts(["a", "b", "c", "d"], "x");
        let mut refined = ChainOfThought::from_texts(["a", "b2", "c"], "x");
        refined.steps[1].gold_is_error = Some(true);
        assert_eq!(
            coherence(&initial, &refined, &Judge::annotated()).unwrap(),
            Rational::new(1, 2)
        );
    }

    #[test]
    fn improvement_examples() {
        let v = reasoning_improvement(r("0.78"), r("0.85")).unwrap();
        assert_eq!(v, Rational::new(350, 39));
        assert_eq!(v.to_decimal(3), "8.974");
        assert_eq!(
            reasoning_improvement(r("0.4"), r("0.4")).unwrap(),
            Rational::ZERO
        );
        let v = reasoning_improvement(r("0.85"), r("0.92")).unwrap();
        assert_eq!(v, Rational::new(140, 17));
        assert_eq!(v.to_decimal(3), "8.235");
        assert!(matches!(
            reasoning_improvement(Rational::ZERO, r("0.5")),
            Err(MetricsError::DivisionByZero(_))
        ));
        assert!(reasoning_improvement(r("0.9"), r("0.8"))
            .unwrap()
            .is_negative());
    }

    #[test]
    fn correction_rate_examples() {
        assert_eq!(
            error_correction_rate(20, 3).unwrap(),
            Rational::from_integer(15)
        );
        assert_eq!(
            error_correction_rate(0, 0).unwrap(),
            Rational::from_integer(100)
        );
        assert_eq!(
            error_correction_rate(5, 5).unwrap(),
            Rational::from_integer(100)
        );
        assert!(matches!(
            error_correction_rate(2, 3),
            Err(MetricsError::ContractViolation(_))
        ));
    }

    #[test]
    fn delta_examples() {
        assert_eq!(round_deltas(&[r("0.85"), r("0.92")]), vec![r("0.07")]);
        assert!(round_deltas(&[r("0.5")]).is_empty());
        let d = round_deltas(&[r("0.6"), r("0.8"), r("0.85"), r("0.86")]);
        assert_eq!(d, vec![r("0.2"), r("0.05"), r("0.01")]);
        assert_eq!(total_improvement(&d), r("0.26"));
        assert_eq!(total_improvement(&[]), Rational::ZERO);
    }

    #[test]
    fn error_counts_prefer_labels() {
        use crate::chain::{Category, Critique, RoundRecord};
        let mut c0 = ChainOfThought::from_texts(["a", "b", "c"], "x");
        c0.steps[0].gold_is_error = Some(true);
        c0.steps[1].gold_is_error = Some(true);
        c0.steps[2].gold_is_error = Some(false);
        let mut c1 = c0.clone();
        c1.round = 1;
        c1.steps[0] = ReasoningStep::new(1, "a fixed").with_error(false);
        let trace = MultiplexTrace {
            task_id: "t".into(),
            category: Category::Other,
            rounds: vec![
                RoundRecord {
                    chain: c0,
                    critique: Some(Critique::default()),
                    consistency: Rational::ZERO,
                    delta: Rational::ZERO,
                },
                RoundRecord {
                    chain: c1,
                    critique: None,
                    consistency: Rational::ZERO,
                    delta: Rational::ZERO,
                },
            ],
            final_answer: "x".into(),
            config_snapshot: serde_json::Value::Null,
            warnings: vec![],
        };
        assert_eq!(
            error_counts(&trace).unwrap(),
            ErrorCounts {
                initial: 2,
                corrected: 1
            }
        );
    }
}

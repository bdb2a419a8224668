//! Exact rational scores.
//!
//! Every consistency, coherence and percentage value is carried as a reduced
//! fraction of `i64`s so that sums and differences of scores compare exactly.
//! Decimal text is produced only at the edges (reports, CLI output).

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A reduced fraction `num / den` with `den > 0`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Rational(Ratio<i64>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RationalError {
    #[error("denominator must be non-zero")]
    ZeroDenominator,
    #[error("invalid decimal literal {0:?}")]
    InvalidDecimal(String),
}

impl Rational {
    pub const ZERO: Rational = Rational(Ratio::new_raw(0, 1));
    pub const ONE: Rational = Rational(Ratio::new_raw(1, 1));

    /// Builds `num / den`, reducing to lowest terms.
    ///
    /// Panics when `den == 0`; use [`Rational::try_new`] for untrusted input.
    pub fn new(num: i64, den: i64) -> Self {
        Rational(Ratio::new(num, den))
    }

    pub fn try_new(num: i64, den: i64) -> Result<Self, RationalError> {
        if den == 0 {
            return Err(RationalError::ZeroDenominator);
        }
        Ok(Rational(Ratio::new(num, den)))
    }

    pub fn from_integer(n: i64) -> Self {
        Rational(Ratio::from_integer(n))
    }

    pub fn numer(&self) -> i64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i64 {
        *self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn abs(&self) -> Self {
        Rational(self.0.abs())
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Renders with `places` fractional digits, rounding half to even.
    pub fn to_decimal(&self, places: u32) -> String {
        let scale = 10i128.pow(places);
        let num = self.numer() as i128 * scale;
        let den = self.denom() as i128;
        let (mut q, r) = num.div_mod_floor(&den);
        // r in [0, den): compare 2r against den to decide rounding of the floor.
        match (2 * r).cmp(&den) {
            Ordering::Greater => q += 1,
            Ordering::Equal if q.is_odd() => q += 1,
            _ => {}
        }
        let negative = q < 0;
        let q = q.unsigned_abs();
        let int_part = q / scale as u128;
        let frac_part = q % scale as u128;
        let sign = if negative { "-" } else { "" };
        if places == 0 {
            format!("{sign}{int_part}")
        } else {
            format!(
                "{sign}{int_part}.{frac_part:0width$}",
                width = places as usize
            )
        }
    }

    /// Nearest integer, rounding half to even.
    pub fn round_half_even(&self) -> i64 {
        self.to_decimal(0).parse().expect("integer rendering")
    }

    /// Arithmetic mean, `None` for an empty slice.
    ///
    /// Accumulates in 128-bit so long corpora with mixed chain lengths do
    /// not overflow. A mean whose reduced form does not fit in `i64` is
    /// rounded to the nearest multiple of 10⁻¹², and `exact` is false.
    pub fn mean(values: &[Rational]) -> Option<Mean> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as i128;
        let exact = values
            .iter()
            .try_fold(Ratio::<i128>::zero(), |acc, v| {
                acc.checked_add(&Ratio::new(v.numer() as i128, v.denom() as i128))
            })
            .and_then(|sum| sum.checked_div(&Ratio::from_integer(n)))
            .and_then(|m| {
                Some((
                    i64::try_from(*m.numer()).ok()?,
                    i64::try_from(*m.denom()).ok()?,
                ))
            });
        if let Some((num, den)) = exact {
            return Some(Mean {
                value: Rational::new(num, den),
                exact: true,
            });
        }
        const SCALE: i128 = 1_000_000_000_000;
        let round = |num: i128, den: i128| {
            let (q, r) = num.div_mod_floor(&den);
            match (2 * r).cmp(&den) {
                Ordering::Greater => q + 1,
                Ordering::Equal if q.is_odd() => q + 1,
                _ => q,
            }
        };
        let total: i128 = values
            .iter()
            .map(|v| round(v.numer() as i128 * SCALE, v.denom() as i128))
            .sum();
        Some(Mean {
            value: Rational::new(i64::try_from(round(total, n)).ok()?, SCALE as i64),
            exact: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mean {
    pub value: Rational,
    pub exact: bool,
}

impl FromStr for Rational {
    type Err = RationalError;

    /// Parses `"3"`, `"-0.25"`, or `"7/8"` exactly.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RationalError::InvalidDecimal(s.to_string());
        let t = s.trim();
        if let Some((n, d)) = t.split_once('/') {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            return Rational::try_new(n, d);
        }
        let (negative, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
            || frac_part.len() > 18
        {
            return Err(bad());
        }
        let digits = format!("{int_part}{frac_part}");
        let num: i64 = if digits.is_empty() {
            0
        } else {
            digits.parse().map_err(|_| bad())?
        };
        let den = 10i64.pow(frac_part.len() as u32);
        let r = Rational::new(num, den);
        Ok(if negative { -r } else { r })
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl From<i64> for Rational {
    fn from(n: i64) -> Self {
        Rational::from_integer(n)
    }
}

impl Add for Rational {
    type Output = Rational;
    fn add(self, rhs: Rational) -> Rational {
        Rational(self.0 + rhs.0)
    }
}

impl Sub for Rational {
    type Output = Rational;
    fn sub(self, rhs: Rational) -> Rational {
        Rational(self.0 - rhs.0)
    }
}

impl Mul for Rational {
    type Output = Rational;
    fn mul(self, rhs: Rational) -> Rational {
        Rational(self.0 * rhs.0)
    }
}

impl Div for Rational {
    type Output = Rational;
    /// Panics on division by zero, like integer division.
    fn div(self, rhs: Rational) -> Rational {
        Rational(self.0 / rhs.0)
    }
}

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Rational {
        iter.fold(Rational::ZERO, |acc, x| acc + x)
    }
}

impl<'a> Sum<&'a Rational> for Rational {
    fn sum<I: Iterator<Item = &'a Rational>>(iter: I) -> Rational {
        iter.fold(Rational::ZERO, |acc, x| acc + *x)
    }
}

#[derive(Serialize, Deserialize)]
struct Wire {
    num: i64,
    den: i64,
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        Wire {
            num: self.numer(),
            den: self.denom(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let w = Wire::deserialize(deserializer)?;
        Rational::try_new(w.num, w.den).map_err(serde::de::Error::custom)
    }
}

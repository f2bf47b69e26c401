//! Numeric type used for virtual time and energy.
//!
//! Timing and energy accounting is generic so the same simulator can run on
//! plain floats or on exact rationals. The rational backend makes virtual-time
//! identities such as `1.1 * 32 + 14 == 49.2` hold with no rounding.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

/// Exact rational scalar.
pub type Rational = Ratio<i64>;

pub trait Scalar:
    Num + Copy + PartialOrd + Debug + Default + AddAssign + MulAssign + Sum + Send + Sync + 'static
{
    /// Builds `num / den`.
    fn ratio(num: i64, den: i64) -> Self;

    fn from_count(n: usize) -> Self {
        Self::ratio(n as i64, 1)
    }

    fn to_f64(self) -> f64;

    /// Decimal rendering used in traces and reports.
    fn render(self) -> String;

    /// Parses a plain decimal literal such as `32`, `1.1` or `0.22`.
    fn parse_decimal(text: &str) -> Option<Self> {
        let (num, den) = parse_decimal_ratio(text)?;
        Some(Self::ratio(num, den))
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

fn parse_decimal_ratio(text: &str) -> Option<(i64, i64)> {
    let text = text.trim();
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    if body.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let num: i64 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    let den = 10i64.checked_pow(frac_part.len() as u32)?;
    Some((if neg { -num } else { num }, den))
}

impl Scalar for f64 {
    fn ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn render(self) -> String {
        format!("{self}")
    }
}

impl Scalar for f32 {
    fn ratio(num: i64, den: i64) -> Self {
        (num as f64 / den as f64) as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn render(self) -> String {
        format!("{self}")
    }
}

impl Scalar for Rational {
    fn ratio(num: i64, den: i64) -> Self {
        Ratio::new(num, den)
    }
    fn to_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
    fn render(self) -> String {
        render_rational(self)
    }
}

/// Exact decimal when the denominator only has factors 2 and 5, otherwise
/// six fractional digits.
fn render_rational(r: Rational) -> String {
    let mut den = *r.denom();
    let mut twos = 0u32;
    let mut fives = 0u32;
    while den % 2 == 0 {
        den /= 2;
        twos += 1;
    }
    while den % 5 == 0 {
        den /= 5;
        fives += 1;
    }
    if den != 1 {
        return format!("{:.6}", Scalar::to_f64(r));
    }
    let digits = twos.max(fives);
    if digits == 0 {
        return r.numer().to_string();
    }
    let scale = 10i128.pow(digits);
    let scaled = *r.numer() as i128 * scale / *r.denom() as i128;
    let sign = if scaled < 0 { "-" } else { "" };
    let abs = scaled.unsigned_abs();
    let int = abs / scale as u128;
    let frac = abs % scale as u128;
    let frac = format!("{:0width$}", frac, width = digits as usize);
    let frac = frac.trim_end_matches('0');
    if frac.is_empty() {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac}")
    }
}

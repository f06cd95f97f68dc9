//! Small helpers around arbitrary-precision rationals.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;

pub type Rational = BigRational;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed rational literal `{0}`")]
pub struct ParseRationalError(pub String);

/// Parses `"3"`, `"-1/4"` or a finite decimal such as `"0.9"`.
pub fn parse_rational(text: &str) -> Result<Rational, ParseRationalError> {
    let s = text.trim();
    let err = || ParseRationalError(text.to_string());
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num.trim().parse().map_err(|_| err())?;
        let d: BigInt = den.trim().parse().map_err(|_| err())?;
        if d.is_zero() {
            return Err(err());
        }
        return Ok(BigRational::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let negative = int.trim_start().starts_with('-');
        let int_part: BigInt = match int.trim() {
            "" | "-" | "+" => BigInt::zero(),
            other => other.parse().map_err(|_| err())?,
        };
        let frac_part: BigInt = frac.parse().map_err(|_| err())?;
        let scale = num_traits::pow(BigInt::from(10), frac.len());
        let mut value = BigRational::from_integer(int_part.abs())
            + BigRational::new(frac_part, scale);
        if negative {
            value = -value;
        }
        return Ok(value);
    }
    let n: BigInt = s.parse().map_err(|_| err())?;
    Ok(BigRational::from_integer(n))
}

/// Always renders as `num/den`, including integers (`1/1`).
pub fn fmt_ratio(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn ratio(n: i64, d: i64) -> Rational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn half() -> Rational {
    ratio(1, 2)
}

/// Smallest rational on the `1/denominator` grid that is `>= x`.
pub fn ceil_to_grid(x: f64, denominator: i64) -> Rational {
    let scaled = (x * denominator as f64).ceil() as i64;
    ratio(scaled, denominator)
}

/// Exact value of the form `coefficient * sqrt(radicand)` with a square-free
/// integer radicand. A radicand of one means the value is rational.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqrtValue {
    pub coefficient: Rational,
    pub radicand: BigInt,
}

impl SqrtValue {
    pub fn rational(r: Rational) -> Self {
        SqrtValue { coefficient: r, radicand: BigInt::one() }
    }

    /// `sqrt(q)` for a nonnegative rational `q`.
    pub fn sqrt_of(q: &Rational) -> Self {
        assert!(!q.is_negative(), "square root of a negative rational");
        if q.is_zero() {
            return SqrtValue::rational(Rational::zero());
        }
        // sqrt(n/d) = sqrt(n*d)/d
        let nd = q.numer() * q.denom();
        let (outside, inside) = split_square(&nd);
        SqrtValue {
            coefficient: BigRational::new(outside, q.denom().clone()),
            radicand: inside,
        }
    }

    pub fn scale(&self, factor: &Rational) -> Self {
        let coefficient = &self.coefficient * factor;
        if coefficient.is_zero() {
            return SqrtValue::rational(coefficient);
        }
        SqrtValue { coefficient, radicand: self.radicand.clone() }
    }

    pub fn is_rational(&self) -> bool {
        self.radicand.is_one()
    }

    pub fn to_f64(&self) -> f64 {
        to_f64(&self.coefficient) * self.radicand.to_f64().unwrap_or(f64::NAN).sqrt()
    }
}

impl fmt::Display for SqrtValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_rational() || self.coefficient.is_zero() {
            write!(f, "{}", fmt_ratio(&self.coefficient))
        } else {
            write!(f, "{}*sqrt({})", fmt_ratio(&self.coefficient), self.radicand)
        }
    }
}

/// Writes `n = a^2 * b` with `b` square-free, returning `(a, b)`.
fn split_square(n: &BigInt) -> (BigInt, BigInt) {
    let mut rest = n.clone();
    let mut outside = BigInt::one();
    let mut p = BigInt::from(2);
    while &p * &p <= rest {
        let sq = &p * &p;
        while (&rest % &sq).is_zero() {
            rest /= &sq;
            outside *= &p;
        }
        p += 1;
    }
    (outside, rest)
}

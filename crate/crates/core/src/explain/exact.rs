use std::fmt;
use std::ops::AddAssign;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, One, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// `integer_decode` reports subnormals as an even mantissa times 2^-1075.
const SCALE_BITS: usize = 1075;

/// Exact sum of finite f64 values.
///
/// Every finite f64 is an integer multiple of 2^-1075, so the running total
/// is kept as that integer. Addition is associative, and
/// [`to_f64`](ExactSum::to_f64) rounds once, to nearest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ExactSum(BigInt);

impl ExactSum {
    pub fn new() -> Self {
        ExactSum(BigInt::zero())
    }

    /// Non-finite values are ignored by the integer representation, so they
    /// are rejected here.
    pub fn add(&mut self, x: f64) {
        assert!(x.is_finite(), "exact sum of non-finite value {x}");
        if x == 0.0 {
            return;
        }
        let (mantissa, exponent, sign) = Float::integer_decode(x);
        let shift = (exponent as i32 + SCALE_BITS as i32) as usize;
        let term = BigInt::from(mantissa) << shift;
        if sign < 0 {
            self.0 -= term;
        } else {
            self.0 += term;
        }
    }

    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut acc = ExactSum::new();
        for v in values {
            acc.add(v);
        }
        acc
    }

    pub fn to_rational(&self) -> BigRational {
        BigRational::new(self.0.clone(), BigInt::one() << SCALE_BITS)
    }

    /// Nearest f64; saturates to ±inf beyond the f64 range.
    pub fn to_f64(&self) -> f64 {
        self.to_rational().to_f64().unwrap_or(f64::NAN)
    }
}

impl AddAssign<&ExactSum> for ExactSum {
    fn add_assign(&mut self, rhs: &ExactSum) {
        self.0 += &rhs.0;
    }
}

impl<'a> std::iter::Sum<&'a ExactSum> for ExactSum {
    fn sum<I: Iterator<Item = &'a ExactSum>>(iter: I) -> Self {
        let mut acc = ExactSum::new();
        for s in iter {
            acc += s;
        }
        acc
    }
}

/// Decimal integer count of 2^-1075 steps.
impl fmt::Display for ExactSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for ExactSum {
    type Err = num_bigint::ParseBigIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(ExactSum)
    }
}

impl Serialize for ExactSum {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExactSum {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cancellation_is_exact() {
        let s = ExactSum::of([1e300, 1.0, -1e300]);
        assert_eq!(s.to_f64(), 1.0);
        assert_eq!(ExactSum::of([0.1, 0.2, -0.3]).to_rational(), {
            let r = |x| BigRational::from_float(x).unwrap();
            r(0.1) + r(0.2) - r(0.3)
        });
    }

    #[test]
    fn extremes_round_trip() {
        for x in [f64::MIN_POSITIVE, 5e-324, -5e-324, f64::MAX, -f64::MAX, 0.0] {
            assert_eq!(ExactSum::of([x]).to_f64(), x);
        }
    }

    #[test]
    fn text_form_round_trips() {
        let s = ExactSum::of([0.375, -1e-310]);
        let back: ExactSum = s.to_string().parse().unwrap();
        assert_eq!(back, s);
    }
}

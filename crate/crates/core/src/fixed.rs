//! Fixed-precision dyadic numbers `m * 2^-s` with a `p`-bit two's-complement
//! mantissa, floor rounding with saturation, and a correctly rounded `exp`.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported mantissa width.
pub const MAX_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Format {
    /// Total bits.
    pub p: u32,
    /// Fractional bits.
    pub s: u32,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum FixedError {
    #[error("format needs 1 <= p <= {MAX_BITS} and s <= 62, got p={p}, s={s}")]
    BadFormat { p: u32, s: u32 },
    #[error("mantissa {m} is outside [{min}, {max}]")]
    OutOfRange { m: i64, min: i64, max: i64 },
    #[error("exp({score}) lies within 2^-{margin_bits} of a grid boundary")]
    IllConditioned { score: String, margin_bits: u32 },
}

impl Format {
    pub fn new(p: u32, s: u32) -> Result<Format, FixedError> {
        if p == 0 || p > MAX_BITS || s > 62 {
            return Err(FixedError::BadFormat { p, s });
        }
        Ok(Format { p, s })
    }

    pub fn min_mantissa(self) -> i64 {
        -(1i64 << (self.p - 1))
    }

    pub fn max_mantissa(self) -> i64 {
        (1i64 << (self.p - 1)) - 1
    }

    pub fn contains_mantissa(self, m: i64) -> bool {
        (self.min_mantissa()..=self.max_mantissa()).contains(&m)
    }

    pub fn max(self) -> Fixed {
        Fixed {
            m: self.max_mantissa(),
            fmt: self,
        }
    }

    pub fn min(self) -> Fixed {
        Fixed {
            m: self.min_mantissa(),
            fmt: self,
        }
    }

    pub fn zero(self) -> Fixed {
        Fixed { m: 0, fmt: self }
    }

    /// Mantissa of the grid point `2^-s * m`, checked.
    pub fn mantissa(self, m: i64) -> Result<Fixed, FixedError> {
        if self.contains_mantissa(m) {
            Ok(Fixed { m, fmt: self })
        } else {
            Err(FixedError::OutOfRange {
                m,
                min: self.min_mantissa(),
                max: self.max_mantissa(),
            })
        }
    }

    /// Every element, in increasing order.
    pub fn values(self) -> impl Iterator<Item = Fixed> {
        (self.min_mantissa()..=self.max_mantissa()).map(move |m| Fixed { m, fmt: self })
    }

    /// Clamps an integer mantissa into range.
    pub fn saturate(self, m: i128) -> Fixed {
        let m = m.clamp(self.min_mantissa() as i128, self.max_mantissa() as i128) as i64;
        Fixed { m, fmt: self }
    }

    /// Greatest element `<= x`, saturating at both ends.
    pub fn round(self, x: &BigRational) -> Fixed {
        let scaled = x * BigRational::from_integer(BigInt::one() << self.s);
        let fl = scaled.floor().to_integer();
        self.saturate_big(&fl)
    }

    /// `floor(num / 2^shift)` as a saturated element.
    pub fn round_scaled(self, num: i128, shift: u32) -> Fixed {
        let d = 1i128 << shift;
        self.saturate(num.div_euclid(d))
    }

    fn saturate_big(self, m: &BigInt) -> Fixed {
        match m.to_i128() {
            Some(v) => self.saturate(v),
            None if m.is_negative() => self.min(),
            None => self.max(),
        }
    }

    pub fn round_f64(self, x: f64) -> Fixed {
        match BigRational::from_float(x) {
            Some(r) => self.round(&r),
            None if x > 0.0 => self.max(),
            None => self.min(),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F(p={}, s={})", self.p, self.s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fixed {
    pub m: i64,
    pub fmt: Format,
}

impl Fixed {
    pub fn value(self) -> BigRational {
        BigRational::new(BigInt::from(self.m), BigInt::one() << self.fmt.s)
    }

    pub fn to_f64(self) -> f64 {
        self.m as f64 / (self.fmt.s as f64).exp2()
    }

    /// Bits `b = 1..=p`, least significant first: bit `b` is the parity of
    /// `floor(x / 2^(b-s-1))`.
    pub fn bits(self) -> Vec<bool> {
        (0..self.fmt.p)
            .map(|b| self.m.div_euclid(1i64 << b).is_odd())
            .collect()
    }

    /// Inverse of [`Fixed::bits`]: `m = -2^(p-1) bit_p + Σ_{b<p} 2^(b-1) bit_b`.
    pub fn from_bits(fmt: Format, bits: &[bool]) -> Fixed {
        assert_eq!(bits.len(), fmt.p as usize, "bit vector length must equal p");
        let mut m: i64 = 0;
        for (b, &bit) in bits.iter().enumerate() {
            if bit {
                if b + 1 == fmt.p as usize {
                    m -= 1i64 << b;
                } else {
                    m += 1i64 << b;
                }
            }
        }
        Fixed { m, fmt }
    }

    pub fn is_positive(self) -> bool {
        self.m > 0
    }
}

impl PartialOrd for Fixed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        (self.fmt == other.fmt).then(|| self.m.cmp(&other.m))
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.value();
        if v.is_integer() {
            write!(f, "{}", v.to_integer())
        } else {
            write!(f, "{}/{}", v.numer(), v.denom())
        }
    }
}

/// Working precision of the `exp` evaluation, in bits.
const EXP_BITS: u64 = 256;
/// Inputs whose `exp` lies closer than `2^-EXP_MARGIN_BITS` to a grid boundary are rejected.
pub const EXP_MARGIN_BITS: u32 = 20;

/// `round(exp(x))` on the grid of `fmt`.
///
/// The exponential is evaluated with `EXP_BITS` working bits. A result that
/// lands within `2^-EXP_MARGIN_BITS` of a grid point other than zero is
/// reported as ill-conditioned rather than guessed; `x = 0` is exact.
pub fn round_exp(x: &BigRational, fmt: Format) -> Result<Fixed, FixedError> {
    if x.is_zero() {
        return Ok(fmt.round(&BigRational::one()));
    }
    // exp(x) >= e^p > 2^p > max(F).
    if *x >= BigRational::from_integer(BigInt::from(fmt.p)) {
        return Ok(fmt.max());
    }
    // exp(x) < e^-(s+2) < 2^-s: well below the first positive grid point.
    if *x <= BigRational::from_integer(-BigInt::from(fmt.s + 2)) {
        return Ok(fmt.zero());
    }
    let e = exp_scaled(x);
    // e approximates exp(x) * 2^EXP_BITS to within a few units.
    let shift = EXP_BITS - fmt.s as u64;
    let (q, r) = e.div_mod_floor(&(BigInt::one() << shift));
    let margin = BigInt::one() << (EXP_BITS - EXP_MARGIN_BITS as u64);
    let near_low = r < margin && !q.is_zero();
    let near_high = (BigInt::one() << shift) - &r < margin;
    if near_low || near_high {
        return Err(FixedError::IllConditioned {
            score: x.to_string(),
            margin_bits: EXP_MARGIN_BITS,
        });
    }
    Ok(fmt.saturate_big(&q))
}

/// `exp(x) * 2^EXP_BITS`, by halving the argument, a Taylor series and repeated squaring.
fn exp_scaled(x: &BigRational) -> BigInt {
    const HALVINGS: u32 = 10;
    let one = BigInt::one() << EXP_BITS;
    let y = (x * BigRational::from_integer(BigInt::one() << (EXP_BITS - HALVINGS as u64)))
        .floor()
        .to_integer();
    let mut sum = one.clone();
    let mut term = one;
    for k in 1..80u32 {
        term = (&term * &y) >> EXP_BITS;
        term /= k;
        if term.is_zero() {
            break;
        }
        sum += &term;
    }
    for _ in 0..HALVINGS {
        sum = (&sum * &sum) >> EXP_BITS;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn rounding_examples() {
        let f = Format::new(4, 2).unwrap();
        assert_eq!(f.round(&q(3, 10)).value(), q(1, 4));
        assert_eq!(f.round(&q(7, 4)).value(), q(7, 4));
        assert_eq!(f.round(&q(5, 1)), f.max());
        assert_eq!(f.round(&q(-9, 1)), f.min());
        assert_eq!(f.round(&q(-1, 10)).value(), q(-1, 4));
    }

    #[test]
    fn bit_examples() {
        let f = Format::new(4, 2).unwrap();
        assert_eq!(f.mantissa(7).unwrap().bits(), vec![true, true, true, false]);
        assert_eq!(f.zero().bits(), vec![false; 4]);
        assert_eq!(
            f.mantissa(-8).unwrap().bits(),
            vec![false, false, false, true]
        );
    }

    #[test]
    fn exp_rounding() {
        let f = Format::new(8, 4).unwrap();
        assert_eq!(round_exp(&q(0, 1), f).unwrap().value(), q(1, 1));
        // e = 2.718..., floor to 1/16 grid is 43/16 = 2.6875.
        assert_eq!(round_exp(&q(1, 1), f).unwrap().m, 43);
        // e^-1 = 0.3678..., 5/16 = 0.3125.
        assert_eq!(round_exp(&q(-1, 1), f).unwrap().m, 5);
        assert_eq!(round_exp(&q(100, 1), f).unwrap(), f.max());
        assert_eq!(round_exp(&q(-100, 1), f).unwrap(), f.zero());
        // e^(1/2) = 1.6487..., 26/16 = 1.625.
        assert_eq!(round_exp(&q(1, 2), f).unwrap().m, 26);
        // ln 2 approximated closely lands near the grid point 2.
        let ln2 = q(693_147_180_559_945, 1_000_000_000_000_000);
        assert!(matches!(
            round_exp(&ln2, f),
            Err(FixedError::IllConditioned { .. })
        ));
    }

    #[test]
    fn exp_matches_float() {
        let f = Format::new(16, 8).unwrap();
        for n in -40..40 {
            let x = q(n, 8);
            let want = (n as f64 / 8.0).exp() * 256.0;
            match round_exp(&x, f) {
                Ok(r) => assert_eq!(
                    r.m,
                    (want.floor() as i64).min(f.max_mantissa()),
                    "x = {n}/8"
                ),
                Err(FixedError::IllConditioned { .. }) => {
                    assert!((want - want.round()).abs() < 1e-3)
                }
                Err(e) => panic!("{e}"),
            }
        }
    }
}

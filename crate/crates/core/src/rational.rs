//! Exact rational scalars and the shifted p-adic grid.
//!
//! All exact quantities in the crate are `num_rational::BigRational`, which
//! stores values in lowest terms with a positive denominator. Values cross
//! serialization boundaries only as `"num/den"` strings.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::Error;

pub type Rational = num_rational::BigRational;

/// Parse a rational from `"num/den"` or a bare integer string.
pub fn parse_ratio(s: &str) -> Result<Rational, Error> {
    let s = s.trim();
    let mk_err = || Error::InvalidInput(format!("cannot parse rational from {s:?}"));
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let num: BigInt = num.parse().map_err(|_| mk_err())?;
    let den: BigInt = den.parse().map_err(|_| mk_err())?;
    if den.is_zero() {
        return Err(mk_err());
    }
    Ok(Rational::new(num, den))
}

/// Canonical `"num/den"` form, with an explicit denominator even for integers.
pub fn fmt_ratio(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn ratio_from_int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// `p^e` as a `BigInt`.
pub fn pow_int(p: u32, e: u32) -> BigInt {
    BigInt::from(p).pow(e)
}

/// Largest integer `<= r`.
pub fn floor_int(r: &Rational) -> BigInt {
    r.floor().to_integer()
}

/// Smallest integer `>= r`.
pub fn ceil_int(r: &Rational) -> BigInt {
    r.ceil().to_integer()
}

/// A coordinate `t` lies on the shifted p-adic grid when `t + 1/2` has a
/// finite base-`p` expansion, i.e. `t + 1/2 = m / p^e`. Returns the minimal
/// exponent `e` together with the numerator `m` at that scale.
pub fn grid_expansion(t: &Rational, p: u32) -> Option<(u32, BigInt)> {
    let shifted = t + ratio(1, 2);
    let mut den = shifted.denom().clone();
    let p_big = BigInt::from(p);
    let mut e = 0u32;
    while !den.is_one() {
        let (q, rem) = den.div_rem(&p_big);
        if !rem.is_zero() {
            return None;
        }
        den = q;
        e += 1;
    }
    let m = shifted.numer() * pow_int(p, e) / shifted.denom();
    Some((e, m))
}

pub fn is_grid_rational(t: &Rational, p: u32) -> bool {
    grid_expansion(t, p).is_some()
}

/// Natural logarithm of a positive rational, robust to values far outside the
/// f64 range: both parts are reduced by their bit length before conversion.
pub fn ln_ratio(r: &Rational) -> f64 {
    assert!(r.is_positive(), "ln of non-positive rational");
    ln_big(r.numer()) - ln_big(r.denom())
}

fn ln_big(n: &BigInt) -> f64 {
    let bits = n.bits();
    if bits <= 60 {
        return n.to_f64().expect("small BigInt converts").ln();
    }
    // n = m * 2^shift with m holding the top 60 bits.
    let shift = bits - 60;
    let m: BigInt = n >> shift;
    m.to_f64().expect("60-bit BigInt converts").ln() + (shift as f64) * std::f64::consts::LN_2
}

/// Serde adapter: rationals as `"num/den"` strings.
pub mod serde_ratio {
    use super::{fmt_ratio, parse_ratio, Rational};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_ratio(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let s = String::deserialize(d)?;
        parse_ratio(&s).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for vectors of rationals.
pub mod serde_ratio_vec {
    use super::{fmt_ratio, parse_ratio, Rational};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Rational], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(fmt_ratio))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rational>, D::Error> {
        let strings = Vec::<String>::deserialize(d)?;
        strings
            .iter()
            .map(|s| parse_ratio(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_round_trip() {
        let r = parse_ratio("-6/4").unwrap();
        assert_eq!(fmt_ratio(&r), "-3/2");
        assert_eq!(parse_ratio("7").unwrap(), ratio_from_int(7));
        assert!(parse_ratio("1/0").is_err());
        assert!(parse_ratio("x").is_err());
    }

    #[test]
    fn grid_membership_uses_the_shifted_grid() {
        // -1/2 shifts to 0, 1/6 shifts to 2/3: both triadic.
        assert!(is_grid_rational(&ratio(-1, 2), 3));
        assert!(is_grid_rational(&ratio(1, 6), 3));
        // 0 shifts to 1/2, which has no finite triadic expansion.
        assert!(!is_grid_rational(&ratio_from_int(0), 3));
        // 0 *is* a grid point for p = 5? 1/2 in Z[1/5] fails too.
        assert!(!is_grid_rational(&ratio_from_int(0), 5));

        let (e, m) = grid_expansion(&ratio(1, 6), 3).unwrap();
        assert_eq!((e, m), (1, 2.into()));
        let (e, m) = grid_expansion(&ratio(-1, 2), 3).unwrap();
        assert_eq!((e, m), (0, 0.into()));
    }

    #[test]
    fn ln_handles_huge_rationals() {
        let big = Rational::new(pow_int(7, 500), pow_int(72, 500));
        let expect = 500.0 * (7f64.ln() - 72f64.ln());
        assert!((ln_ratio(&big) - expect).abs() < 1e-9 * expect.abs());
    }
}

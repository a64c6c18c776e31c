//! Exact rational helpers shared by the geometric modules.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rat = BigRational;

pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(v: i64) -> Rat {
    Rat::from_integer(BigInt::from(v))
}

pub fn half() -> Rat {
    rat(1, 2)
}

pub fn to_f64(r: &Rat) -> f64 {
    // Ratio::to_f64 handles huge numerators and denominators without overflow.
    r.to_f64().unwrap_or_else(|| {
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

pub fn floor_i64(r: &Rat) -> Option<i64> {
    r.floor().to_integer().to_i64()
}

/// Formats as `p/q`, or `p` for integers.
pub fn fmt_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn parse_rat(s: &str) -> Result<Rat> {
    let s = s.trim();
    let bad = || Error::format(format!("invalid rational {s:?}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().map_err(|_| bad())?;
            let d: BigInt = d.trim().parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            Ok(Rat::new(n, d))
        }
        None => Ok(Rat::from_integer(s.parse().map_err(|_| bad())?)),
    }
}

/// Largest power of three dividing the denominator of `r`, or `None` if the
/// denominator has another prime factor.
pub fn triadic_exponent(r: &Rat) -> Option<u32> {
    let mut d = r.denom().abs();
    let three = BigInt::from(3);
    let mut e = 0;
    while d.is_multiple_of(&three) {
        d /= &three;
        e += 1;
    }
    d.is_one().then_some(e)
}

/// Nearest rational with denominator at most `max_den`; ties go to the
/// smaller denominator.
pub fn round_to_small_rational(x: f64, max_den: i64) -> (i64, i64) {
    let mut best = (x.round() as i64, 1i64);
    let mut best_err = (x - best.0 as f64).abs();
    for q in 2..=max_den {
        let p = (x * q as f64).round() as i64;
        let err = (x - p as f64 / q as f64).abs();
        if err + 1e-12 < best_err {
            best = (p, q);
            best_err = err;
        }
    }
    let g = best.0.gcd(&best.1);
    (best.0 / g, best.1 / g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_round_trip() {
        for s in ["0", "-3", "1/3", "-7/27"] {
            assert_eq!(fmt_rat(&parse_rat(s).unwrap()), s);
        }
        assert!(parse_rat("1/0").is_err());
        assert!(parse_rat("x").is_err());
        assert_eq!(parse_rat("2/4").unwrap(), rat(1, 2));
    }

    #[test]
    fn triadic() {
        assert_eq!(triadic_exponent(&rat(5, 27)), Some(3));
        assert_eq!(triadic_exponent(&int(4)), Some(0));
        assert_eq!(triadic_exponent(&rat(1, 6)), None);
    }

    #[test]
    fn small_rational_rounding() {
        assert_eq!(round_to_small_rational(0.3334, 10), (1, 3));
        assert_eq!(round_to_small_rational(-0.5001, 10), (-1, 2));
        assert_eq!(round_to_small_rational(2.0, 10), (2, 1));
        assert_eq!(round_to_small_rational(0.7, 10), (7, 10));
    }
}

//! Exact rational scalars for edge lengths, masses and chart values.
//!
//! Pushforward and chart identities in the tower are meant to hold with zero
//! residual, so all structural quantities are `BigRational` and only the
//! estimator layer converts to `f64`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};

use crate::error::{MdlError, Result};

pub type Rat = BigRational;

pub fn rat(num: i64, den: i64) -> Rat {
    assert!(den != 0, "zero denominator");
    Rat::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// base^exp with negative exponents allowed.
pub fn rat_pow(base: u32, exp: i32) -> Rat {
    let b = BigInt::from(base);
    let p = b.pow(exp.unsigned_abs());
    if exp >= 0 {
        Rat::from_integer(p)
    } else {
        Rat::new(BigInt::one(), p)
    }
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Exact conversion; every finite f64 is a dyadic rational.
pub fn rat_from_f64(x: f64) -> Option<Rat> {
    Rat::from_f64(x)
}

pub fn rat_floor(r: &Rat) -> BigInt {
    r.floor().to_integer()
}

/// Fractional part in [0, 1).
pub fn rat_frac(r: &Rat) -> Rat {
    r - r.floor()
}

pub fn rat_abs(r: &Rat) -> Rat {
    r.abs()
}

/// Accepts "p/q", an integer literal, or a decimal literal (read as an exact
/// base-10 fraction).
pub fn parse_rat(s: &str) -> Result<Rat> {
    let s = s.trim();
    let bad = || MdlError::Parse(format!("not a rational: {s:?}"));
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num.trim().parse().map_err(|_| bad())?;
        let d: BigInt = den.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(MdlError::Parse(format!("zero denominator: {s:?}")));
        }
        return Ok(Rat::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let neg = int.trim_start().starts_with('-');
        let i: BigInt = if int.is_empty() || int == "-" {
            BigInt::zero()
        } else {
            int.parse().map_err(|_| bad())?
        };
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let f: BigInt = frac.parse().map_err(|_| bad())?;
        let scale = BigInt::from(10u32).pow(frac.len() as u32);
        let frac_part = Rat::new(f, scale);
        let int_part = Rat::from_integer(i);
        return Ok(if neg { int_part - frac_part } else { int_part + frac_part });
    }
    let n: BigInt = s.parse().map_err(|_| bad())?;
    Ok(Rat::from_integer(n))
}

/// "p/q" for non-integers, "n" for integers.
pub fn format_rat(r: &Rat) -> String {
    if r.is_integer() {
        r.to_integer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_round_trip() {
        for s in ["3/8", "-7/3", "5", "0", "-12"] {
            let r = parse_rat(s).unwrap();
            assert_eq!(format_rat(&r), s);
        }
    }

    #[test]
    fn decimals_are_exact_base_10() {
        assert_eq!(parse_rat("0.1").unwrap(), rat(1, 10));
        assert_eq!(parse_rat("-0.25").unwrap(), rat(-1, 4));
        assert_eq!(parse_rat("2.5").unwrap(), rat(5, 2));
    }

    #[test]
    fn pow_handles_negative_exponents() {
        assert_eq!(rat_pow(3, -2), rat(1, 9));
        assert_eq!(rat_pow(2, 5), rat_int(32));
    }

    #[test]
    fn f64_round_trips_exactly() {
        let r = rat_from_f64(0.375).unwrap();
        assert_eq!(r, rat(3, 8));
    }

    #[test]
    fn frac_is_nonnegative() {
        assert_eq!(rat_frac(&rat(-1, 4)), rat(3, 4));
        assert_eq!(rat_frac(&rat(9, 4)), rat(1, 4));
    }
}

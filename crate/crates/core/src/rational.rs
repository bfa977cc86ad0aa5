//! Arbitrary-precision rational helpers: parsing, formatting and dyadic rounding.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Q = BigRational;

pub fn q(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// Parses `"p/q"`, integers and plain decimals (`"-0.125"`, `"3."`) exactly.
pub fn parse_rational(s: &str) -> Result<Q> {
    let t = s.trim();
    let err = || Error::Parse(s.to_string());
    if t.is_empty() {
        return Err(err());
    }
    if let Some((a, b)) = t.split_once('/') {
        let num: BigInt = a.trim().parse().map_err(|_| err())?;
        let den: BigInt = b.trim().parse().map_err(|_| err())?;
        if den.is_zero() {
            return Err(err());
        }
        return Ok(Q::new(num, den));
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return Err(err());
    }
    let digits = format!("{int_part}{frac_part}");
    let num: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().map_err(|_| err())? };
    let den = num_traits::pow(BigInt::from(10), frac_part.len());
    let v = Q::new(num, den);
    Ok(if neg { -v } else { v })
}

pub fn format_rational(v: &Q) -> String {
    if v.denom().is_one() {
        v.numer().to_string()
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}

pub fn to_f64(v: &Q) -> f64 {
    v.to_f64().unwrap_or_else(|| {
        // huge numerators: scale through the bit lengths
        let n = v.numer().bits() as i64;
        let d = v.denom().bits() as i64;
        let shift = (n.max(d) - 60).max(0) as usize;
        let nn = (v.numer() >> shift).to_f64().unwrap_or(0.0);
        let dd = (v.denom() >> shift).to_f64().unwrap_or(1.0);
        nn / dd
    })
}

/// Exact rational value of a finite double.
pub fn from_f64(x: f64) -> Q {
    Q::from_float(x).unwrap_or_else(Q::zero)
}

fn pow2(bits: u32) -> BigInt {
    BigInt::one() << bits as usize
}

/// Largest multiple of `2^-bits` that is `<= v`.
pub fn floor_dyadic(v: &Q, bits: u32) -> Q {
    let scale = pow2(bits);
    let scaled = v.numer() * &scale;
    let f = scaled.div_floor(v.denom());
    Q::new(f, scale)
}

/// Smallest multiple of `2^-bits` that is `>= v`.
pub fn ceil_dyadic(v: &Q, bits: u32) -> Q {
    -floor_dyadic(&-v, bits)
}

pub fn round_dyadic(v: &Q, bits: u32) -> Q {
    let half = Q::new(BigInt::one(), pow2(bits + 1));
    floor_dyadic(&(v + half), bits)
}

pub fn two_pow_neg(bits: u32) -> Q {
    Q::new(BigInt::one(), pow2(bits))
}

pub fn abs(v: &Q) -> Q {
    v.abs()
}

pub fn min_q<'a>(a: &'a Q, b: &'a Q) -> &'a Q {
    if a <= b { a } else { b }
}

pub fn max_q<'a>(a: &'a Q, b: &'a Q) -> &'a Q {
    if a >= b { a } else { b }
}

pub mod serde_q {
    use super::{format_rational, parse_rational, Q};
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Q, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Q, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).map_err(D::Error::custom)
    }
}

pub mod serde_qvec {
    use super::{format_rational, parse_rational, Q};
    use serde::{de::Error as _, ser::SerializeSeq, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Q], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&format_rational(x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Q>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter().map(|s| parse_rational(s).map_err(D::Error::custom)).collect()
    }
}

pub mod serde_qmat {
    use super::{format_rational, parse_rational, Q};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<Q>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<String>> = v.iter().map(|r| r.iter().map(format_rational).collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<Q>>, D::Error> {
        let raw = Vec::<Vec<String>>::deserialize(d)?;
        raw.iter()
            .map(|r| r.iter().map(|s| parse_rational(s).map_err(D::Error::custom)).collect())
            .collect()
    }
}

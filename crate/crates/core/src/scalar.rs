//! Exact rationals and certified rational intervals behind one scalar type.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{ceil_dyadic, floor_dyadic, format_rational, parse_rational, to_f64, Q};

/// Default certification width exponent: intervals are driven below `2^-64`.
pub const DEFAULT_EPS_BITS: u32 = 64;

/// Closed interval `[lo, hi]` with rational endpoints.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Interval {
    pub lo: Q,
    pub hi: Q,
}

impl Interval {
    pub fn new(lo: Q, hi: Q) -> Self {
        assert!(lo <= hi, "interval endpoints out of order");
        Interval { lo, hi }
    }

    pub fn point(v: Q) -> Self {
        Interval { lo: v.clone(), hi: v }
    }

    pub fn width(&self) -> Q {
        &self.hi - &self.lo
    }

    pub fn midpoint(&self) -> Q {
        (&self.lo + &self.hi) / Q::from_integer(2.into())
    }

    pub fn contains(&self, v: &Q) -> bool {
        &self.lo <= v && v <= &self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.lo <= Q::zero() && Q::zero() <= self.hi
    }

    /// Widens the endpoints outward to the dyadic grid `2^-bits`; keeps
    /// denominators bounded across long computations.
    pub fn round_outward(&self, bits: u32) -> Self {
        Interval { lo: floor_dyadic(&self.lo, bits), hi: ceil_dyadic(&self.hi, bits) }
    }

    pub fn sign(&self) -> Result<Ordering> {
        if self.lo > Q::zero() {
            Ok(Ordering::Greater)
        } else if self.hi < Q::zero() {
            Ok(Ordering::Less)
        } else if self.lo.is_zero() && self.hi.is_zero() {
            Ok(Ordering::Equal)
        } else {
            Err(Error::IndeterminateSign(format!("[{}, {}]", format_rational(&self.lo), format_rational(&self.hi))))
        }
    }

    pub fn abs_max(&self) -> Q {
        let a = self.lo.abs();
        let b = self.hi.abs();
        if a > b { a } else { b }
    }

    pub fn recip(&self) -> Result<Self> {
        if self.contains_zero() {
            return Err(Error::IndeterminateSign("division by an interval containing zero".into()));
        }
        Ok(Interval { lo: self.hi.recip(), hi: self.lo.recip() })
    }
}

impl Add for &Interval {
    type Output = Interval;
    fn add(self, o: &Interval) -> Interval {
        Interval { lo: &self.lo + &o.lo, hi: &self.hi + &o.hi }
    }
}

impl Sub for &Interval {
    type Output = Interval;
    fn sub(self, o: &Interval) -> Interval {
        Interval { lo: &self.lo - &o.hi, hi: &self.hi - &o.lo }
    }
}

impl Mul for &Interval {
    type Output = Interval;
    fn mul(self, o: &Interval) -> Interval {
        let c = [&self.lo * &o.lo, &self.lo * &o.hi, &self.hi * &o.lo, &self.hi * &o.hi];
        let lo = c.iter().min().unwrap().clone();
        let hi = c.iter().max().unwrap().clone();
        Interval { lo, hi }
    }
}

impl Neg for &Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval { lo: -&self.hi, hi: -&self.lo }
    }
}

/// A numeric quantity that is either known exactly or enclosed by a certified interval.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Scalar {
    Exact(Q),
    Certified(Interval),
}

impl Scalar {
    pub fn exact(v: Q) -> Self {
        Scalar::Exact(v)
    }

    pub fn zero() -> Self {
        Scalar::Exact(Q::zero())
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Scalar::Exact(_))
    }

    pub fn as_exact(&self) -> Option<&Q> {
        match self {
            Scalar::Exact(v) => Some(v),
            Scalar::Certified(_) => None,
        }
    }

    pub fn interval(&self) -> Interval {
        match self {
            Scalar::Exact(v) => Interval::point(v.clone()),
            Scalar::Certified(iv) => iv.clone(),
        }
    }

    /// Point value for exact scalars, midpoint otherwise.
    pub fn midpoint(&self) -> Q {
        match self {
            Scalar::Exact(v) => v.clone(),
            Scalar::Certified(iv) => iv.midpoint(),
        }
    }

    pub fn to_f64(&self) -> f64 {
        to_f64(&self.midpoint())
    }

    pub fn width(&self) -> Q {
        match self {
            Scalar::Exact(_) => Q::zero(),
            Scalar::Certified(iv) => iv.width(),
        }
    }

    /// Sign of the value; an interval that straddles zero yields `IndeterminateSign`.
    pub fn sign(&self) -> Result<Ordering> {
        match self {
            Scalar::Exact(v) => Ok(v.cmp(&Q::zero())),
            Scalar::Certified(iv) => iv.sign(),
        }
    }

    pub fn cmp_scalar(&self, other: &Scalar) -> Result<Ordering> {
        (self - other).sign()
    }

    pub fn cmp_q(&self, other: &Q) -> Result<Ordering> {
        (self - &Scalar::Exact(other.clone())).sign()
    }

    pub fn round_outward(&self, bits: u32) -> Self {
        match self {
            Scalar::Exact(v) => Scalar::Exact(v.clone()),
            Scalar::Certified(iv) => Scalar::Certified(iv.round_outward(bits)),
        }
    }

    pub fn contains(&self, v: &Q) -> bool {
        match self {
            Scalar::Exact(x) => x == v,
            Scalar::Certified(iv) => iv.contains(v),
        }
    }

    pub fn recip(&self) -> Result<Self> {
        match self {
            Scalar::Exact(v) if v.is_zero() => Err(Error::DegeneratePrices("division by zero".into())),
            Scalar::Exact(v) => Ok(Scalar::Exact(v.recip())),
            Scalar::Certified(iv) => Ok(Scalar::Certified(iv.recip()?)),
        }
    }

    pub fn checked_div(&self, other: &Scalar) -> Result<Self> {
        Ok(self * &other.recip()?)
    }
}

impl From<Q> for Scalar {
    fn from(v: Q) -> Self {
        Scalar::Exact(v)
    }
}

fn combine(a: &Scalar, b: &Scalar, exact: impl Fn(&Q, &Q) -> Q, iv: impl Fn(&Interval, &Interval) -> Interval) -> Scalar {
    match (a, b) {
        (Scalar::Exact(x), Scalar::Exact(y)) => Scalar::Exact(exact(x, y)),
        _ => Scalar::Certified(iv(&a.interval(), &b.interval())),
    }
}

impl Add for &Scalar {
    type Output = Scalar;
    fn add(self, o: &Scalar) -> Scalar {
        combine(self, o, |x, y| x + y, |x, y| x + y)
    }
}

impl Sub for &Scalar {
    type Output = Scalar;
    fn sub(self, o: &Scalar) -> Scalar {
        combine(self, o, |x, y| x - y, |x, y| x - y)
    }
}

impl Mul for &Scalar {
    type Output = Scalar;
    fn mul(self, o: &Scalar) -> Scalar {
        combine(self, o, |x, y| x * y, |x, y| x * y)
    }
}

/// Panics on division by an exact zero or an interval containing zero; use
/// [`Scalar::checked_div`] when the divisor is not known to be nonzero.
impl Div for &Scalar {
    type Output = Scalar;
    fn div(self, o: &Scalar) -> Scalar {
        self.checked_div(o).expect("scalar division by zero")
    }
}

impl Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        match self {
            Scalar::Exact(v) => Scalar::Exact(-v),
            Scalar::Certified(iv) => Scalar::Certified(-iv),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Exact(v) => write!(f, "{}", format_rational(v)),
            Scalar::Certified(iv) => write!(f, "[{}, {}]", format_rational(&iv.lo), format_rational(&iv.hi)),
        }
    }
}

/// JSON form: exact values are `"p/q"` strings, intervals are `["lo", "hi"]` pairs.
impl Serialize for Scalar {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Scalar::Exact(v) => s.serialize_str(&format_rational(v)),
            Scalar::Certified(iv) => [format_rational(&iv.lo), format_rational(&iv.hi)].serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(String),
            Two([String; 2]),
        }
        match Raw::deserialize(d)? {
            Raw::One(s) => parse_rational(&s).map(Scalar::Exact).map_err(D::Error::custom),
            Raw::Two([a, b]) => {
                let lo = parse_rational(&a).map_err(D::Error::custom)?;
                let hi = parse_rational(&b).map_err(D::Error::custom)?;
                if lo > hi {
                    return Err(D::Error::custom("interval endpoints out of order"));
                }
                Ok(Scalar::Certified(Interval { lo, hi }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, qi};
    use proptest::prelude::*;

    #[test]
    fn straddling_interval_has_no_sign() {
        let s = Scalar::Certified(Interval::new(q(-1, 10), q(1, 10)));
        assert!(matches!(s.sign(), Err(Error::IndeterminateSign(_))));
        let p = Scalar::Certified(Interval::new(q(1, 10), q(2, 10)));
        assert_eq!(p.sign().unwrap(), Ordering::Greater);
    }

    #[test]
    fn mixed_arithmetic_promotes_to_interval() {
        let a = Scalar::Exact(q(1, 2));
        let b = Scalar::Certified(Interval::new(q(1, 3), q(1, 2)));
        let c = &a * &b;
        assert_eq!(c, Scalar::Certified(Interval::new(q(1, 6), q(1, 4))));
        assert!(matches!(&a + &a, Scalar::Exact(_)));
    }

    #[test]
    fn serde_round_trip() {
        let v = vec![Scalar::Exact(q(-3, 4)), Scalar::Certified(Interval::new(q(1, 3), qi(1)))];
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"["-3/4",["1/3","1"]]"#);
        let back: Vec<Scalar> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }

    #[derive(Debug, Clone)]
    enum Expr {
        Leaf(i64, i64),
        Add(Box<Expr>, Box<Expr>),
        Sub(Box<Expr>, Box<Expr>),
        Mul(Box<Expr>, Box<Expr>),
    }

    fn expr() -> impl Strategy<Value = Expr> {
        let leaf = (-20i64..20, 1i64..9).prop_map(|(a, b)| Expr::Leaf(a, b));
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            ]
        })
    }

    fn eval(e: &Expr, certified: bool) -> Scalar {
        match e {
            Expr::Leaf(a, b) => {
                let v = q(*a, *b);
                if certified {
                    // enclose each leaf in a rounded interval
                    Scalar::Certified(Interval::point(v).round_outward(12))
                } else {
                    Scalar::Exact(v)
                }
            }
            Expr::Add(a, b) => (&eval(a, certified) + &eval(b, certified)).round_outward(40),
            Expr::Sub(a, b) => (&eval(a, certified) - &eval(b, certified)).round_outward(40),
            Expr::Mul(a, b) => (&eval(a, certified) * &eval(b, certified)).round_outward(40),
        }
    }

    proptest! {
        #[test]
        fn certified_mode_contains_exact_result(e in expr()) {
            let exact = eval(&e, false);
            let enclosed = eval(&e, true);
            prop_assert!(enclosed.contains(exact.as_exact().unwrap()));
        }
    }
}

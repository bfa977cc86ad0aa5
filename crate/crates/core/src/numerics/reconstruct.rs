//! Recovering small rationals from approximations.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::rational::{from_f64, Q};

/// Continued-fraction convergents of `x` with denominator at most `d`.
fn convergents(x: &Q, d: &BigInt) -> Vec<Q> {
    let mut out = Vec::new();
    let (mut h0, mut h1) = (BigInt::zero(), BigInt::one());
    let (mut k0, mut k1) = (BigInt::one(), BigInt::zero());
    let mut rest = x.clone();
    loop {
        let a = rest.numer().div_floor(rest.denom());
        let h2 = &a * &h1 + &h0;
        let k2 = &a * &k1 + &k0;
        if &k2 > d {
            break;
        }
        out.push(Q::new(h2.clone(), k2.clone()));
        h0 = std::mem::replace(&mut h1, h2);
        k0 = std::mem::replace(&mut k1, k2);
        let frac = &rest - Q::from_integer(a);
        if frac.is_zero() {
            break;
        }
        rest = frac.recip();
    }
    out
}

/// The unique rational with denominator `<= d` strictly within `1/(2 d^2)` of
/// `x`, if one exists. Such a rational is always a convergent of `x`.
pub fn rational_reconstruct(x: &Q, d: &BigInt) -> Option<Q> {
    if !d.is_positive() {
        return None;
    }
    let best = convergents(x, d).pop()?;
    let tol = Q::new(BigInt::one(), BigInt::from(2) * d * d);
    ((&best - x).abs() < tol).then_some(best)
}

pub fn rational_reconstruct_f64(x: f64, d: u64) -> Option<Q> {
    if !x.is_finite() {
        return None;
    }
    rational_reconstruct(&from_f64(x), &BigInt::from(d))
}

/// Simplest rational (smallest denominator, then smallest magnitude) in `[lo, hi]`.
pub fn simplest_in(lo: &Q, hi: &Q) -> Q {
    assert!(lo <= hi);
    if !lo.is_positive() && !hi.is_negative() {
        return Q::zero();
    }
    if hi.is_negative() {
        return -simplest_in(&-hi, &-lo);
    }
    let fl = lo.floor();
    if &fl == lo {
        return fl;
    }
    let up = &fl + Q::one();
    if &up <= hi {
        return up;
    }
    let inner = simplest_in(&(hi - &fl).recip(), &(lo - &fl).recip());
    fl + inner.recip()
}

/// Simplest rational within relative-absolute tolerance `tol` of a double.
pub fn simplest_near(x: f64, tol: f64) -> Q {
    let c = from_f64(x);
    let t = from_f64(tol * x.abs().max(1.0));
    simplest_in(&(&c - &t), &(&c + &t))
}

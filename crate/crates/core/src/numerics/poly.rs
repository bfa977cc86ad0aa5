//! Sparse multivariate polynomials with rational coefficients.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_traits::{One, Zero};

use crate::rational::{format_rational, to_f64, Q};
use crate::scalar::Interval;

/// Exponent vector; its length is the number of variables of the ring.
pub type Monomial = Vec<u32>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<Monomial, Q>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Poly { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: Q) -> Self {
        let mut p = Poly::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut p = Poly::zero(nvars);
        p.add_term(e, Q::one());
        p
    }

    /// `sum_k c_k x_k + c0`.
    pub fn affine(nvars: usize, coeffs: &[(usize, Q)], c0: Q) -> Self {
        let mut p = Poly::constant(nvars, c0);
        for (i, c) in coeffs {
            let mut e = vec![0; nvars];
            e[*i] = 1;
            p.add_term(e, c.clone());
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Q)> {
        self.terms.iter()
    }

    pub fn add_term(&mut self, mono: Monomial, c: Q) {
        debug_assert_eq!(mono.len(), self.nvars);
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(mono).or_insert_with(Q::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.retain(|_, v| !v.is_zero());
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }

    pub fn constant_term(&self) -> Q {
        self.terms.get(&vec![0; self.nvars]).cloned().unwrap_or_else(Q::zero)
    }

    /// Variables that occur with nonzero exponent.
    pub fn support(&self) -> Vec<usize> {
        (0..self.nvars).filter(|&i| self.terms.keys().any(|e| e[i] > 0)).collect()
    }

    /// Coefficient of `x_i` for a polynomial of degree at most one.
    pub fn linear_coeff(&self, i: usize) -> Q {
        let mut e = vec![0; self.nvars];
        e[i] = 1;
        self.terms.get(&e).cloned().unwrap_or_else(Q::zero)
    }

    pub fn scale(&self, c: &Q) -> Poly {
        let mut p = Poly::zero(self.nvars);
        if c.is_zero() {
            return p;
        }
        for (e, v) in &self.terms {
            p.terms.insert(e.clone(), v * c);
        }
        p
    }

    pub fn pow(&self, k: u32) -> Poly {
        let mut acc = Poly::constant(self.nvars, Q::one());
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    pub fn derivative(&self, i: usize) -> Poly {
        let mut p = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut f = e.clone();
                f[i] -= 1;
                p.add_term(f, c * Q::from_integer(e[i].into()));
            }
        }
        p
    }

    /// Replaces `x_i` by the polynomial `r` (same ring).
    pub fn substitute(&self, i: usize, r: &Poly) -> Poly {
        let mut out = Poly::zero(self.nvars);
        let mut powers: Vec<Poly> = vec![Poly::constant(self.nvars, Q::one())];
        for (e, c) in &self.terms {
            while powers.len() <= e[i] as usize {
                let next = powers.last().unwrap() * r;
                powers.push(next);
            }
            let mut rest = e.clone();
            rest[i] = 0;
            let mut mono = Poly::zero(self.nvars);
            mono.add_term(rest, c.clone());
            out = &out + &(&mono * &powers[e[i] as usize]);
        }
        out
    }

    pub fn eval(&self, x: &[Q]) -> Q {
        self.terms
            .iter()
            .map(|(e, c)| {
                let mut t = c.clone();
                for (xi, &k) in x.iter().zip(e) {
                    for _ in 0..k {
                        t *= xi;
                    }
                }
                t
            })
            .sum()
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                let mut t = to_f64(c);
                for (xi, &k) in x.iter().zip(e) {
                    t *= xi.powi(k as i32);
                }
                t
            })
            .sum()
    }

    /// Interval extension; endpoints are rounded outward to `2^-bits` after
    /// each term to keep denominators bounded.
    pub fn eval_interval(&self, x: &[Interval], bits: u32) -> Interval {
        let mut acc = Interval::point(Q::zero());
        for (e, c) in &self.terms {
            let mut t = Interval::point(c.clone());
            for (xi, &k) in x.iter().zip(e) {
                for _ in 0..k {
                    t = &t * xi;
                }
            }
            acc = (&acc + &t).round_outward(bits);
        }
        acc
    }

    /// Coefficients `[a_0, a_1, ...]` of a polynomial in the single variable `i`.
    pub fn univariate_coeffs(&self, i: usize) -> Option<Vec<Q>> {
        let mut out: Vec<Q> = Vec::new();
        for (e, c) in &self.terms {
            if e.iter().enumerate().any(|(k, &d)| k != i && d > 0) {
                return None;
            }
            let d = e[i] as usize;
            if out.len() <= d {
                out.resize(d + 1, Q::zero());
            }
            out[d] += c;
        }
        Some(out)
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let mut p = self.clone();
        for (e, c) in &rhs.terms {
            p.add_term(e.clone(), c.clone());
        }
        p
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        self + &(-rhs)
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(&-Q::one())
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        assert_eq!(self.nvars, rhs.nvars);
        let mut p = Poly::zero(self.nvars);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &rhs.terms {
                let e: Monomial = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                p.add_term(e, c1 * c2);
            }
        }
        p
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(e, c)| {
                let vars: Vec<String> = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .map(|(i, &k)| if k == 1 { format!("x{i}") } else { format!("x{i}^{k}") })
                    .collect();
                if vars.is_empty() {
                    format_rational(c)
                } else {
                    format!("{}*{}", format_rational(c), vars.join("*"))
                }
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, qi};

    #[test]
    fn arithmetic_and_evaluation() {
        let x = Poly::var(2, 0);
        let y = Poly::var(2, 1);
        let p = &(&x * &y) - &Poly::constant(2, qi(2));
        assert_eq!(p.eval(&[qi(3), q(1, 2)]), q(-1, 2));
        assert_eq!(p.degree(), 2);
        assert_eq!(p.derivative(0), y);
        let sub = p.substitute(1, &Poly::affine(2, &[(0, qi(1))], qi(1)));
        // x(x + 1) - 2
        assert_eq!(sub.univariate_coeffs(0), Some(vec![qi(-2), qi(1), qi(1)]));
        assert!((&p - &p).is_zero());
    }

    #[test]
    fn interval_extension_encloses() {
        let x = Poly::var(1, 0);
        let p = &(&x * &x) - &Poly::constant(1, qi(2));
        let iv = p.eval_interval(&[Interval::new(q(7, 5), q(3, 2))], 30);
        assert!(iv.contains(&(q(49, 25) - qi(2))) && iv.contains(&q(1, 4)));
    }
}

macro_rules! owned_binop {
    ($tr:ident, $f:ident) => {
        impl $tr for Poly {
            type Output = Poly;
            fn $f(self, o: Poly) -> Poly {
                (&self).$f(&o)
            }
        }
    };
}
owned_binop!(Add, add);
owned_binop!(Sub, sub);
owned_binop!(Mul, mul);

impl Neg for Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        -&self
    }
}

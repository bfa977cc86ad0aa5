//! Seeded solving of small polynomial systems with exact or certified output.
//!
//! Three strategies are tried in order: exact elimination when every
//! equality is affine; certified univariate root isolation when elimination
//! leaves a single unknown; otherwise Newton iteration from the seed followed
//! by rational reconstruction and, failing that, a Krawczyk box certificate.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::numerics::poly::Poly;
use crate::numerics::reconstruct::{rational_reconstruct, simplest_near};
use crate::rational::{from_f64, round_dyadic, to_f64, two_pow_neg, Q};
use crate::scalar::{Interval, Scalar};

/// `poly > 0` when strict, `poly >= 0` otherwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inequality {
    pub poly: Poly,
    pub strict: bool,
}

impl Inequality {
    pub fn positive(poly: Poly) -> Self {
        Inequality { poly, strict: true }
    }

    pub fn nonnegative(poly: Poly) -> Self {
        Inequality { poly, strict: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolySystem {
    pub nvars: usize,
    pub equalities: Vec<Poly>,
    pub inequalities: Vec<Inequality>,
}

impl PolySystem {
    pub fn new(nvars: usize) -> Self {
        PolySystem { nvars, equalities: Vec::new(), inequalities: Vec::new() }
    }

    pub fn add_eq(&mut self, p: Poly) {
        assert_eq!(p.nvars(), self.nvars);
        self.equalities.push(p);
    }

    pub fn add_gt(&mut self, p: Poly) {
        assert_eq!(p.nvars(), self.nvars);
        self.inequalities.push(Inequality::positive(p));
    }

    pub fn add_ge(&mut self, p: Poly) {
        assert_eq!(p.nvars(), self.nvars);
        self.inequalities.push(Inequality::nonnegative(p));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMode {
    /// Only points with rational coordinates and identically zero residuals.
    Exact,
    /// Exact points when available, otherwise intervals narrower than `2^-eps_bits`.
    Certify { eps_bits: u32 },
}

const MAX_EPS_HALVINGS: u32 = 8;

/// Returns solution points near `seed`. An empty list means the system was
/// shown inconsistent; `NoSolutionFound` means the search gave up.
pub fn solve_poly_system(sys: &PolySystem, seed: &[f64], mode: SolveMode) -> Result<Vec<Vec<Scalar>>> {
    if seed.len() != sys.nvars {
        return Err(Error::DimensionMismatch(format!("seed has {} coordinates for {} variables", seed.len(), sys.nvars)));
    }
    let (certify, mut bits) = match mode {
        SolveMode::Exact => (false, 64),
        SolveMode::Certify { eps_bits } => (true, eps_bits),
    };
    let mut attempt = 0;
    loop {
        match solve_once(sys, seed, certify, bits) {
            Err(Error::IndeterminateSign(_)) if certify && attempt < MAX_EPS_HALVINGS => {
                attempt += 1;
                bits += 1;
            }
            other => return other,
        }
    }
}

/// Reduced row echelon form of `[A | b]` (the last column is `b`); returns pivot columns.
pub(crate) fn rref(m: &mut [Vec<Q>], ncols: usize) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..ncols {
        if row == m.len() {
            break;
        }
        let Some(p) = (row..m.len()).find(|&r| !m[r][col].is_zero()) else { continue };
        m.swap(row, p);
        let piv = m[row][col].clone();
        for v in m[row].iter_mut() {
            *v /= &piv;
        }
        let prow = m[row].clone();
        for (r, other) in m.iter_mut().enumerate() {
            if r != row && !other[col].is_zero() {
                let f = other[col].clone();
                for (v, pv) in other.iter_mut().zip(&prow) {
                    if !pv.is_zero() {
                        *v -= &f * pv;
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    pivots
}

fn inconsistent(m: &[Vec<Q>], ncols: usize) -> bool {
    m.iter().any(|r| r[..ncols].iter().all(|v| v.is_zero()) && !r[ncols].is_zero())
}

/// Exact solution of a square system, `None` if singular.
pub(crate) fn solve_square(a: &[Vec<Q>], b: &[Q]) -> Option<Vec<Q>> {
    let n = b.len();
    let mut m: Vec<Vec<Q>> = a.iter().zip(b).map(|(r, v)| {
        let mut r = r.clone();
        r.push(v.clone());
        r
    }).collect();
    let piv = rref(&mut m, n);
    if piv.len() < n {
        return None;
    }
    Some(m.iter().map(|r| r[n].clone()).collect())
}

fn eval_scalar(p: &Poly, x: &[Scalar], bits: u32) -> Scalar {
    if x.iter().all(Scalar::is_exact) {
        let v: Vec<Q> = x.iter().map(|s| s.as_exact().unwrap().clone()).collect();
        Scalar::Exact(p.eval(&v))
    } else {
        let iv: Vec<Interval> = x.iter().map(Scalar::interval).collect();
        Scalar::Certified(p.eval_interval(&iv, bits + 16))
    }
}

/// Checks every constraint at `x`. Interval points only need residual
/// intervals containing zero for equalities; inequality signs must be decided.
fn admissible(sys: &PolySystem, x: &[Scalar], bits: u32) -> Result<bool> {
    for e in &sys.equalities {
        match eval_scalar(e, x, bits) {
            Scalar::Exact(v) => {
                if !v.is_zero() {
                    return Ok(false);
                }
            }
            Scalar::Certified(iv) => {
                if !iv.contains_zero() {
                    return Ok(false);
                }
            }
        }
    }
    for ineq in &sys.inequalities {
        let s = eval_scalar(&ineq.poly, x, bits).sign()?;
        let ok = if ineq.strict { s.is_gt() } else { s.is_ge() };
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

fn solve_once(sys: &PolySystem, seed: &[f64], certify: bool, bits: u32) -> Result<Vec<Vec<Scalar>>> {
    let k = sys.nvars;
    let (lin, nonlin): (Vec<&Poly>, Vec<&Poly>) = sys.equalities.iter().partition(|p| p.degree() <= 1);
    let mut aug: Vec<Vec<Q>> = lin
        .iter()
        .map(|p| {
            let mut r: Vec<Q> = (0..k).map(|i| p.linear_coeff(i)).collect();
            r.push(-p.constant_term());
            r
        })
        .collect();
    let pivots = rref(&mut aug, k);
    if inconsistent(&aug, k) {
        return Ok(vec![]);
    }
    let free: Vec<usize> = (0..k).filter(|i| !pivots.contains(i)).collect();
    // pivot variable = rhs - sum over free columns
    let mut expr: Vec<Option<Poly>> = vec![None; k];
    for (r, &pc) in pivots.iter().enumerate() {
        let terms: Vec<(usize, Q)> = free.iter().map(|&f| (f, -aug[r][f].clone())).filter(|(_, c)| !c.is_zero()).collect();
        expr[pc] = Some(Poly::affine(k, &terms, aug[r][k].clone()));
    }
    let mut reduced: Vec<Poly> = Vec::new();
    for p in &nonlin {
        let mut s = (*p).clone();
        for (i, e) in expr.iter().enumerate() {
            if let Some(e) = e {
                s = s.substitute(i, e);
            }
        }
        if !s.is_zero() {
            if s.is_constant() {
                return Ok(vec![]);
            }
            reduced.push(s);
        }
    }
    let complete = |fixed: &[Option<Scalar>]| -> Vec<Scalar> {
        (0..k)
            .map(|i| match &expr[i] {
                Some(e) => eval_scalar(e, &fixed.iter().map(|v| v.clone().unwrap_or_else(Scalar::zero)).collect::<Vec<_>>(), bits + 8),
                None => fixed[i].clone().unwrap(),
            })
            .collect()
    };

    if reduced.is_empty() {
        for tol in [1e-9, 1e-12, 0.0] {
            let mut fixed: Vec<Option<Scalar>> = vec![None; k];
            for &f in &free {
                let v = if tol > 0.0 { simplest_near(seed[f], tol) } else { from_f64(seed[f]) };
                fixed[f] = Some(Scalar::Exact(v));
            }
            let x = complete(&fixed);
            if admissible(sys, &x, bits)? {
                return Ok(vec![x]);
            }
        }
        return Err(Error::NoSolutionFound);
    }

    let supports: Vec<Vec<usize>> = reduced.iter().map(Poly::support).collect();
    if supports.iter().all(|s| s.len() == 1 && s[0] == supports[0][0]) {
        let t = supports[0][0];
        let target = reduced.iter().min_by_key(|p| p.degree()).unwrap();
        let coeffs = target.univariate_coeffs(t).unwrap();
        if let Some(root) = univariate_root(&coeffs, seed[t], certify, bits)? {
            let mut fixed: Vec<Option<Scalar>> = vec![None; k];
            for &f in &free {
                fixed[f] = Some(if f == t { root.clone() } else { Scalar::Exact(simplest_near(seed[f], 1e-9)) });
            }
            let mut x = complete(&fixed);
            let mut extra = 0;
            let eps = two_pow_neg(bits);
            while certify && x.iter().any(|s| s.width() >= eps) && extra < 64 {
                extra += 8;
                let Some(r) = univariate_root(&coeffs, seed[t], certify, bits + extra)? else { break };
                fixed[t] = Some(r);
                x = complete(&fixed);
            }
            if admissible(sys, &x, bits)? {
                return Ok(vec![x]);
            }
        }
    }
    newton_strategy(sys, seed, certify, bits)
}

fn horner(c: &[Q], t: &Q) -> Q {
    c.iter().rev().fold(Q::zero(), |acc, a| acc * t + a)
}

/// Root of the univariate polynomial `c` nearest the seed: exact if rational,
/// otherwise a sign-change bracket narrower than `2^-bits`.
fn univariate_root(c: &[Q], seed: f64, certify: bool, bits: u32) -> Result<Option<Scalar>> {
    let cf: Vec<f64> = c.iter().map(to_f64).collect();
    let f = |t: f64| cf.iter().rev().fold(0.0, |acc, a| acc * t + a);
    let df = |t: f64| cf.iter().enumerate().skip(1).rev().fold(0.0, |acc, (i, a)| acc * t + a * i as f64);
    let mut r = seed;
    for _ in 0..100 {
        let d = df(r);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let step = f(r) / d;
        r -= step;
        if step.abs() < 1e-15 * r.abs().max(1.0) {
            break;
        }
    }
    if !r.is_finite() {
        return Ok(None);
    }
    for cand in [
        rational_reconstruct(&from_f64(r), &BigInt::from(1u64 << 20)),
        Some(simplest_near(r, 1e-12)),
        Some(simplest_near(r, 1e-8)),
    ]
    .into_iter()
    .flatten()
    {
        if horner(c, &cand).is_zero() {
            return Ok(Some(Scalar::Exact(cand)));
        }
    }
    if !certify {
        return Ok(None);
    }
    let center = from_f64(r);
    let mut delta = from_f64(1e-10 * r.abs().max(1.0));
    for _ in 0..12 {
        let (mut lo, mut hi) = (&center - &delta, &center + &delta);
        let (flo, fhi) = (horner(c, &lo), horner(c, &hi));
        if flo.is_zero() {
            return Ok(Some(Scalar::Exact(lo)));
        }
        if fhi.is_zero() {
            return Ok(Some(Scalar::Exact(hi)));
        }
        if flo.is_negative() != fhi.is_negative() {
            let eps = two_pow_neg(bits + 1);
            let lo_neg = flo.is_negative();
            while &hi - &lo >= eps {
                let mid = round_dyadic(&((&lo + &hi) / Q::from_integer(2.into())), bits + 4);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = horner(c, &mid);
                if fm.is_zero() {
                    return Ok(Some(Scalar::Exact(mid)));
                }
                if fm.is_negative() == lo_neg {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(Some(Scalar::Certified(Interval::new(lo, hi))));
        }
        delta *= Q::from_integer(16.into());
    }
    Ok(None)
}

fn solve_f64(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[p][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn newton_strategy(sys: &PolySystem, seed: &[f64], certify: bool, bits: u32) -> Result<Vec<Vec<Scalar>>> {
    let k = sys.nvars;
    let eqs = &sys.equalities;
    let jac: Vec<Vec<Poly>> = eqs.iter().map(|e| (0..k).map(|v| e.derivative(v)).collect()).collect();
    let resid = |x: &[f64]| -> Vec<f64> { eqs.iter().map(|e| e.eval_f64(x)).collect() };

    // damped minimum-norm Gauss-Newton in doubles
    let mut x = seed.to_vec();
    let mut fx = resid(&x);
    for _ in 0..200 {
        if norm_inf(&fx) < 1e-14 {
            break;
        }
        let j: Vec<Vec<f64>> = jac.iter().map(|row| row.iter().map(|d| d.eval_f64(&x)).collect()).collect();
        let jjt: Vec<Vec<f64>> = (0..eqs.len())
            .map(|a| (0..eqs.len()).map(|b| (0..k).map(|c| j[a][c] * j[b][c]).sum::<f64>() + if a == b { 1e-14 } else { 0.0 }).collect())
            .collect();
        let Some(w) = solve_f64(jjt, fx.clone()) else { break };
        let step: Vec<f64> = (0..k).map(|c| -(0..eqs.len()).map(|a| j[a][c] * w[a]).sum::<f64>()).collect();
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + lambda * s).collect();
            let ft = resid(&trial);
            if norm_inf(&ft) < norm_inf(&fx) {
                x = trial;
                fx = ft;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if norm_inf(&fx) > 1e-8 {
        return Err(Error::NoSolutionFound);
    }

    // choose independent equations and the variables they determine
    let j: Vec<Vec<f64>> = jac.iter().map(|row| row.iter().map(|d| d.eval_f64(&x)).collect()).collect();
    let (rows, cols) = independent_pivots(j);
    let mut fixed: Vec<Option<Q>> = vec![None; k];
    for v in 0..k {
        if !cols.contains(&v) {
            fixed[v] = Some(simplest_near(x[v], 1e-9));
        }
    }

    // high-precision Newton on the square subsystem
    let prec = (2 * bits + 64).max(160);
    let mut y: Vec<Q> = (0..k).map(|v| fixed[v].clone().unwrap_or_else(|| round_dyadic(&from_f64(x[v]), prec))).collect();
    let tol = two_pow_neg(prec - 16);
    for _ in 0..12 {
        let g: Vec<Q> = rows.iter().map(|&r| eqs[r].eval(&y)).collect();
        if g.iter().all(|v| v.abs() < tol) {
            break;
        }
        let a: Vec<Vec<Q>> = rows.iter().map(|&r| cols.iter().map(|&c| jac[r][c].eval(&y)).collect()).collect();
        let neg: Vec<Q> = g.iter().map(|v| -v).collect();
        let Some(d) = solve_square(&a, &neg) else { return Err(Error::NoSolutionFound) };
        for (&c, dc) in cols.iter().zip(&d) {
            y[c] = round_dyadic(&(&y[c] + dc), prec);
        }
    }

    // exact attempt
    let bound = BigInt::one() << 40;
    let exact: Option<Vec<Q>> = (0..k)
        .map(|v| if fixed[v].is_some() { Some(y[v].clone()) } else { rational_reconstruct(&y[v], &bound) })
        .collect();
    if let Some(pt) = exact {
        if eqs.iter().all(|e| e.eval(&pt).is_zero()) {
            let xs: Vec<Scalar> = pt.into_iter().map(Scalar::Exact).collect();
            if admissible(sys, &xs, bits)? {
                return Ok(vec![xs]);
            }
            return Err(Error::NoSolutionFound);
        }
    }
    if !certify {
        return Err(Error::NoSolutionFound);
    }
    let Some(bx) = krawczyk(eqs, &jac, &rows, &cols, &y, bits, prec) else { return Err(Error::NoSolutionFound) };
    let mut pt: Vec<Scalar> = y.iter().map(|v| Scalar::Exact(v.clone())).collect();
    for (&c, iv) in cols.iter().zip(bx) {
        pt[c] = Scalar::Certified(iv);
    }
    if admissible(sys, &pt, bits)? {
        Ok(vec![pt])
    } else {
        Err(Error::NoSolutionFound)
    }
}

/// Greedy elimination with full pivoting: independent rows and their pivot columns.
fn independent_pivots(mut j: Vec<Vec<f64>>) -> (Vec<usize>, Vec<usize>) {
    let nr = j.len();
    let nc = j.first().map_or(0, Vec::len);
    let scale = j.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut used_r = vec![false; nr];
    let mut used_c = vec![false; nc];
    loop {
        let mut best = (0.0, 0, 0);
        for r in (0..nr).filter(|&r| !used_r[r]) {
            for c in (0..nc).filter(|&c| !used_c[c]) {
                if j[r][c].abs() > best.0 {
                    best = (j[r][c].abs(), r, c);
                }
            }
        }
        if best.0 < 1e-9 * scale {
            break;
        }
        let (_, pr, pc) = best;
        used_r[pr] = true;
        used_c[pc] = true;
        rows.push(pr);
        cols.push(pc);
        for r in 0..nr {
            if !used_r[r] {
                let f = j[r][pc] / j[pr][pc];
                for c in 0..nc {
                    j[r][c] -= f * j[pr][c];
                }
            }
        }
    }
    (rows, cols)
}

/// Krawczyk test on a box of radius `2^-(bits+2)` around `y`; returns the
/// contracted box when it proves a unique zero of the square subsystem.
fn krawczyk(eqs: &[Poly], jac: &[Vec<Poly>], rows: &[usize], cols: &[usize], y: &[Q], bits: u32, prec: u32) -> Option<Vec<Interval>> {
    let n = cols.len();
    let r = two_pow_neg(bits + 2);
    let mut xbox: Vec<Interval> = y.iter().map(|v| Interval::point(v.clone())).collect();
    for &c in cols {
        xbox[c] = Interval::new(&y[c] - &r, &y[c] + &r);
    }
    let jy: Vec<Vec<Q>> = rows.iter().map(|&e| cols.iter().map(|&c| jac[e][c].eval(y)).collect()).collect();
    // approximate inverse, rounded to keep denominators small
    let mut inv: Vec<Vec<Q>> = vec![vec![Q::zero(); n]; n];
    for col in 0..n {
        let mut e = vec![Q::zero(); n];
        e[col] = Q::one();
        let s = solve_square(&jy, &e)?;
        for (row, v) in s.into_iter().enumerate() {
            inv[row][col] = round_dyadic(&v, prec);
        }
    }
    let g: Vec<Q> = rows.iter().map(|&e| eqs[e].eval(y)).collect();
    let jx: Vec<Vec<Interval>> = rows.iter().map(|&e| cols.iter().map(|&c| jac[e][c].eval_interval(&xbox, prec)).collect()).collect();
    let mut out = Vec::with_capacity(n);
    for a in 0..n {
        let yg: Q = (0..n).map(|b| &inv[a][b] * &g[b]).sum();
        let mut k = Interval::point(&y[cols[a]] - yg);
        for l in 0..n {
            // (I - Y J(X))_{a l}
            let mut m = Interval::point(if a == l { Q::one() } else { Q::zero() });
            for b in 0..n {
                m = (&m - &(&Interval::point(inv[a][b].clone()) * &jx[b][l])).round_outward(prec);
            }
            let dx = Interval::new(-r.clone(), r.clone());
            k = (&k + &(&m * &dx)).round_outward(prec);
        }
        let xb = &xbox[cols[a]];
        if !(k.lo > xb.lo && k.hi < xb.hi) {
            return None;
        }
        out.push(k);
    }
    Some(out)
}

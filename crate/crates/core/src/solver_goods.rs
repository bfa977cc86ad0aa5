//! Equilibria for few items: enumerate the weak order of the prices together
//! with the constant 1, derive the price-1 bundles of each order symbolically,
//! and solve the tie and clearing conditions of each cell.

use std::collections::BTreeSet;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::bundling::{build_bundles, extract_allocation, optimum_bundles, Bundle, BundleKind};
use crate::canonical::Side;
use crate::error::{Error, Result};
use crate::market::Market;
use crate::baselines::{game_oracle, polish, grid_oracle_with, GameOptions, GRID_MAX_ITEMS};
use crate::market::{exact_vec, ray_normalize};
use crate::numerics::{lp_solve, simplest_near, solve_poly_system, LinearProgram, LpStatus, Poly, PolySystem, Relation, SolveMode};
use crate::par::{self, ExecPolicy};
use crate::rational::{q, qi, to_f64, Q};
use crate::scalar::Scalar;
use crate::verify::{verify_equilibrium, verify_exact, EquilibriumCertificate, VerifyMode};

pub const MAX_GOODS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slot {
    Item(usize),
    One,
}

/// Items and the constant 1 split into classes of equal price, cheapest first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PriceStructure {
    pub classes: Vec<Vec<Slot>>,
}

impl PriceStructure {
    pub fn m(&self) -> usize {
        self.classes.iter().flatten().filter(|s| matches!(s, Slot::Item(_))).count()
    }

    pub fn rank(&self, s: Slot) -> usize {
        self.classes.iter().position(|c| c.contains(&s)).expect("slot present")
    }

    pub fn side(&self, j: usize) -> Side {
        let (r, one) = (self.rank(Slot::Item(j)), self.rank(Slot::One));
        match r.cmp(&one) {
            std::cmp::Ordering::Less => Side::Below,
            std::cmp::Ordering::Equal => Side::At,
            std::cmp::Ordering::Greater => Side::Above,
        }
    }

    /// Some item can be priced at most 1 and some at least 1.
    pub fn is_viable(&self) -> bool {
        let m = self.m();
        (0..m).any(|j| self.side(j) != Side::Above) && (0..m).any(|j| self.side(j) != Side::Below)
    }

    /// The structure of a concrete price vector.
    pub fn of_prices(prices: &[Q]) -> Self {
        let mut slots: Vec<(Q, Slot)> = prices.iter().cloned().enumerate().map(|(j, p)| (p, Slot::Item(j))).collect();
        slots.push((Q::one(), Slot::One));
        slots.sort();
        let mut classes: Vec<Vec<Slot>> = Vec::new();
        let mut last: Option<Q> = None;
        for (p, s) in slots {
            if last.as_ref() == Some(&p) {
                classes.last_mut().unwrap().push(s);
            } else {
                classes.push(vec![s]);
                last = Some(p);
            }
        }
        PriceStructure { classes }
    }

    pub fn contains(&self, prices: &[Q]) -> bool {
        prices.iter().all(|p| !p.is_negative()) && PriceStructure::of_prices(prices) == *self
    }

    /// A rational point inside the structure; `k` shifts it. Classes below 1
    /// sit in `(0, 1)`, classes above in `(1, 2)`.
    pub fn sample_point(&self, k: usize) -> Vec<Q> {
        let one = self.rank(Slot::One);
        let below = one as i64;
        let above = (self.classes.len() - one - 1) as i64;
        let shift = q(k as i64 % 7 + 1, 8);
        let mut p = vec![Q::zero(); self.m()];
        for (r, class) in self.classes.iter().enumerate() {
            let price = match r.cmp(&one) {
                std::cmp::Ordering::Less => (qi(r as i64) + &shift) / qi(below),
                std::cmp::Ordering::Equal => Q::one(),
                std::cmp::Ordering::Greater => Q::one() + (qi((r - one - 1) as i64) + &shift) / qi(above),
            };
            for s in class {
                if let Slot::Item(j) = s {
                    p[*j] = price.clone();
                }
            }
        }
        p
    }
}

/// Every weak order of the items and 1, by number of classes and then by the
/// rank tuple in lexicographic order.
pub fn enumerate_price_structures(m: usize) -> Result<Vec<PriceStructure>> {
    if m > MAX_GOODS {
        return Err(Error::TooManyItems { m, limit: MAX_GOODS });
    }
    let slots: Vec<Slot> = (0..m).map(Slot::Item).chain(std::iter::once(Slot::One)).collect();
    let e = slots.len();
    let mut out = Vec::new();
    for k in 1..=e {
        let mut ranks = vec![0usize; e];
        loop {
            let used: BTreeSet<usize> = ranks.iter().copied().collect();
            if used.len() == k {
                let classes = (0..k).map(|r| (0..e).filter(|&s| ranks[s] == r).map(|s| slots[s]).collect()).collect();
                out.push(PriceStructure { classes });
            }
            // odometer over {0..k-1}^e
            let Some(pos) = (0..e).rev().find(|&t| ranks[t] + 1 < k) else { break };
            ranks[pos] += 1;
            for r in ranks.iter_mut().skip(pos + 1) {
                *r = 0;
            }
        }
    }
    Ok(out)
}

/// A price-1 bundle whose low-item share is `num / den` in the price variables.
#[derive(Clone, Debug, PartialEq)]
pub struct SymBundle {
    pub kind: BundleKind,
    pub num: Poly,
    pub den: Poly,
}

impl SymBundle {
    pub fn alpha_at(&self, prices: &[Q]) -> Q {
        self.num.eval(prices) / self.den.eval(prices)
    }
}

/// Bundles of a structure in the order [`build_bundles`] lists them. For a pair
/// `(j, k)` the share is `(1 - p_k) / (p_j - p_k)`, whose denominator is
/// negative throughout the structure.
pub fn structure_bundles(s: &PriceStructure) -> Vec<SymBundle> {
    let m = s.m();
    let one = Poly::constant(m, Q::one());
    let mut out = Vec::new();
    for j in 0..m {
        match s.side(j) {
            Side::At => out.push(SymBundle { kind: BundleKind::Singleton(j), num: one.clone(), den: one.clone() }),
            Side::Below => {
                for k in (0..m).filter(|&k| s.side(k) == Side::Above) {
                    let (pj, pk) = (Poly::var(m, j), Poly::var(m, k));
                    out.push(SymBundle { kind: BundleKind::Pair(j, k), num: &one - &pk, den: &pj - &pk });
                }
            }
            Side::Above => {}
        }
    }
    out
}

pub const HALL_MAX_BUNDLES: usize = 24;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HallVerdict {
    /// Amount of each bundle sold.
    Feasible(Vec<Q>),
    /// A bundle set `T` with fewer units than agents confined to it.
    Infeasible { violating: Vec<usize>, agents: usize },
}

impl HallVerdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, HallVerdict::Feasible(_))
    }
}

fn balance_rows(lp: &mut LinearProgram, bundles: &[Bundle], capacities: &[Q]) {
    for (j, c) in capacities.iter().enumerate() {
        let terms: Vec<(usize, Q)> = bundles
            .iter()
            .enumerate()
            .filter_map(|(b, bu)| bu.shares().into_iter().find(|(i, _)| *i == j).map(|(_, s)| (b, s)))
            .collect();
        lp.add_sparse(&terms, Relation::Eq, c.clone());
    }
}

fn mask_of(set: &[usize]) -> u32 {
    set.iter().fold(0, |a, &b| a | (1 << b))
}

/// Hall conditions `sum_{b in T} x_b >= |A(T)|`, one per distinct union of
/// optimum sets, found by looping over all bundle subsets.
fn subset_constraints(b_sets: &[Vec<usize>], nb: usize) -> Vec<(u32, usize)> {
    let masks: Vec<u32> = b_sets.iter().map(|s| mask_of(s)).collect();
    let mut out = Vec::new();
    for t in 1u32..(1u32 << nb) {
        let inside: Vec<u32> = masks.iter().copied().filter(|&b| b & !t == 0).collect();
        if inside.is_empty() || inside.iter().fold(0, |a, &b| a | b) != t {
            continue;
        }
        out.push((t, inside.len()));
    }
    out
}

fn subset_lp(bundles: &[Bundle], capacities: &[Q], cons: &[(u32, usize)]) -> LinearProgram {
    let nb = bundles.len();
    let mut lp = LinearProgram::new(nb).minimize(vec![Q::zero(); nb]);
    balance_rows(&mut lp, bundles, capacities);
    for &(t, a) in cons {
        let terms: Vec<(usize, Q)> = (0..nb).filter(|b| t >> b & 1 == 1).map(|b| (b, Q::one())).collect();
        lp.add_sparse(&terms, Relation::Ge, qi(a as i64));
    }
    lp
}

/// Subset route: bundle amounts meeting item balance and every Hall condition.
pub fn hall_feasible_subsets(bundles: &[Bundle], b_sets: &[Vec<usize>], capacities: &[Q]) -> Result<HallVerdict> {
    let nb = bundles.len();
    if nb > HALL_MAX_BUNDLES {
        return Err(Error::PreconditionViolated(format!("{nb} bundles exceed the subset cap {HALL_MAX_BUNDLES}")));
    }
    if b_sets.iter().any(|s| s.is_empty()) {
        return Ok(HallVerdict::Infeasible { violating: vec![], agents: 1 });
    }
    let cons = subset_constraints(b_sets, nb);
    let out = lp_solve(&subset_lp(bundles, capacities, &cons));
    if out.status == LpStatus::Optimal {
        return Ok(HallVerdict::Feasible(out.x));
    }
    // witness: a single condition that already clashes with the balance, else
    // the shortest infeasible prefix of the condition list
    let witness = cons
        .iter()
        .find(|c| lp_solve(&subset_lp(bundles, capacities, std::slice::from_ref(c))).status != LpStatus::Optimal)
        .copied()
        .or_else(|| (1..=cons.len()).find(|&l| lp_solve(&subset_lp(bundles, capacities, &cons[..l])).status != LpStatus::Optimal).map(|l| cons[l - 1]));
    Ok(match witness {
        Some((t, a)) => HallVerdict::Infeasible { violating: (0..nb).filter(|b| t >> b & 1 == 1).collect(), agents: a },
        None => HallVerdict::Infeasible { violating: vec![], agents: 0 },
    })
}

/// Assignment route: agents spread one unit over their optimum bundles and
/// the items balance exactly.
pub fn hall_feasible_assignment(bundles: &[Bundle], b_sets: &[Vec<usize>], capacities: &[Q]) -> HallVerdict {
    let vars: Vec<(usize, usize)> = b_sets.iter().enumerate().flat_map(|(i, s)| s.iter().map(move |&b| (i, b))).collect();
    let mut lp = LinearProgram::new(vars.len()).minimize(vec![Q::zero(); vars.len()]);
    for i in 0..b_sets.len() {
        let terms: Vec<(usize, Q)> = vars.iter().enumerate().filter(|(_, v)| v.0 == i).map(|(t, _)| (t, Q::one())).collect();
        lp.add_sparse(&terms, Relation::Eq, Q::one());
    }
    for (j, c) in capacities.iter().enumerate() {
        let mut terms = Vec::new();
        for (t, &(_, b)) in vars.iter().enumerate() {
            if let Some((_, s)) = bundles[b].shares().into_iter().find(|(i, _)| *i == j) {
                terms.push((t, s));
            }
        }
        lp.add_sparse(&terms, Relation::Eq, c.clone());
    }
    let out = lp_solve(&lp);
    if out.status != LpStatus::Optimal {
        return HallVerdict::Infeasible { violating: vec![], agents: 0 };
    }
    let mut x = vec![Q::zero(); bundles.len()];
    for (t, &(_, b)) in vars.iter().enumerate() {
        x[b] += &out.x[t];
    }
    HallVerdict::Feasible(x)
}

/// Decides whether the bundles can be sold so that every agent receives a
/// unit of its optimum bundles and items balance. Both routes are run and
/// must agree; the subset route's verdict (with its witness) is returned.
pub fn hall_feasible(bundles: &[Bundle], b_sets: &[Vec<usize>], capacities: &[Q], prices: &[Q]) -> Result<HallVerdict> {
    debug_assert!(bundles.iter().all(|b| b.price(prices) == Q::one()));
    let a = hall_feasible_subsets(bundles, b_sets, capacities)?;
    let b = hall_feasible_assignment(bundles, b_sets, capacities);
    assert_eq!(a.is_feasible(), b.is_feasible(), "Hall routes disagree");
    Ok(a)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoodsOptions {
    /// Sample points tried inside each structure.
    pub samples: usize,
    /// Oracle settings used for seeding.
    pub oracle: GameOptions,
    /// Grid resolution for seeding when `m <= 2`; `None` skips the grid.
    pub grid_bits: Option<u32>,
    /// Enumerate optimum-set patterns when `m <= 2` and the pattern count is
    /// at most this.
    pub enumeration_cap: usize,
    pub eps_bits: u32,
    pub policy: ExecPolicy,
}

impl Default for GoodsOptions {
    fn default() -> Self {
        GoodsOptions { samples: 2, oracle: GameOptions::default(), grid_bits: Some(4), enumeration_cap: 4096, eps_bits: 64, policy: ExecPolicy::Auto }
    }
}

/// Variable layout of a cell: prices, one share per pair bundle, then one
/// amount per (agent, optimum bundle).
struct Cell<'a> {
    market: &'a Market,
    structure: &'a PriceStructure,
    bundles: &'a [SymBundle],
    b_sets: Vec<Vec<usize>>,
    alpha: Vec<Option<usize>>,
    y: Vec<Vec<usize>>,
    nv: usize,
}

impl<'a> Cell<'a> {
    fn new(market: &'a Market, structure: &'a PriceStructure, bundles: &'a [SymBundle], b_sets: Vec<Vec<usize>>) -> Self {
        let m = market.m();
        let mut nv = m;
        let alpha = bundles
            .iter()
            .map(|b| match b.kind {
                BundleKind::Pair(..) => {
                    nv += 1;
                    Some(nv - 1)
                }
                BundleKind::Singleton(_) => None,
            })
            .collect();
        let y = b_sets
            .iter()
            .map(|s| {
                s.iter()
                    .map(|_| {
                        nv += 1;
                        nv - 1
                    })
                    .collect()
            })
            .collect();
        Cell { market, structure, bundles, b_sets, alpha, y, nv }
    }

    fn var(&self, k: usize) -> Poly {
        Poly::var(self.nv, k)
    }

    fn cst(&self, c: Q) -> Poly {
        Poly::constant(self.nv, c)
    }

    /// Share of item `j` in bundle `b`, as a polynomial.
    fn share(&self, b: usize, j: usize) -> Option<Poly> {
        match (self.bundles[b].kind, self.alpha[b]) {
            (BundleKind::Singleton(k), _) if k == j => Some(self.cst(Q::one())),
            (BundleKind::Pair(lo, _), Some(a)) if lo == j => Some(self.var(a)),
            (BundleKind::Pair(_, hi), Some(a)) if hi == j => Some(&self.cst(Q::one()) - &self.var(a)),
            _ => None,
        }
    }

    fn value(&self, i: usize, b: usize) -> Poly {
        let v = &self.market.values()[i];
        match (self.bundles[b].kind, self.alpha[b]) {
            (BundleKind::Pair(lo, hi), Some(a)) => Poly::affine(self.nv, &[(a, &v[lo] - &v[hi])], v[hi].clone()),
            (BundleKind::Singleton(j), _) => self.cst(v[j].clone()),
            _ => unreachable!(),
        }
    }

    fn price_of(&self, s: Slot) -> Poly {
        match s {
            Slot::Item(j) => self.var(j),
            Slot::One => self.cst(Q::one()),
        }
    }

    fn system(&self) -> PolySystem {
        let (n, m) = (self.market.n(), self.market.m());
        let mut sys = PolySystem::new(self.nv);
        // the weak order itself
        for class in &self.structure.classes {
            for w in class.windows(2) {
                sys.add_eq(&self.price_of(w[1]) - &self.price_of(w[0]));
            }
        }
        for w in self.structure.classes.windows(2) {
            sys.add_gt(&self.price_of(w[1][0]) - &self.price_of(w[0][0]));
        }
        sys.add_ge(self.price_of(self.structure.classes[0][0]));
        // pair shares: alpha (p_j - p_k) = 1 - p_k
        for (b, sb) in self.bundles.iter().enumerate() {
            if let (BundleKind::Pair(j, k), Some(a)) = (sb.kind, self.alpha[b]) {
                let lhs = &self.var(a) * &(&self.var(j) - &self.var(k));
                sys.add_eq(&lhs - &(&self.cst(Q::one()) - &self.var(k)));
            }
        }
        for i in 0..n {
            let set = &self.b_sets[i];
            let best = self.value(i, set[0]);
            for &b in &set[1..] {
                sys.add_eq(&best - &self.value(i, b));
            }
            for b in (0..self.bundles.len()).filter(|b| !set.contains(b)) {
                sys.add_ge(&best - &self.value(i, b));
            }
            // a unit of a cheaper item alone, budget left over
            for j in (0..m).filter(|&j| self.structure.side(j) == Side::Below) {
                sys.add_ge(&best - &self.cst(self.market.value(i, j).clone()));
            }
            let mut row = self.cst(-Q::one());
            for &yv in &self.y[i] {
                sys.add_ge(self.var(yv));
                row = &row + &self.var(yv);
            }
            sys.add_eq(row);
        }
        for j in 0..m {
            let mut col = self.cst(-self.market.capacity(j).clone());
            for i in 0..n {
                for (t, &b) in self.b_sets[i].iter().enumerate() {
                    if let Some(s) = self.share(b, j) {
                        col = &col + &(&s * &self.var(self.y[i][t]));
                    }
                }
            }
            sys.add_eq(col);
        }
        sys
    }

    fn seed(&self, prices: &[Q]) -> Vec<f64> {
        let mut s = vec![0.0; self.nv];
        for (j, p) in prices.iter().enumerate() {
            s[j] = to_f64(p);
        }
        for (b, a) in self.alpha.iter().enumerate() {
            if let Some(a) = a {
                s[*a] = to_f64(&self.bundles[b].alpha_at(prices));
            }
        }
        for ys in &self.y {
            for &v in ys {
                s[v] = 1.0 / ys.len() as f64;
            }
        }
        s
    }

    /// Checks one solved point and turns it into a certificate.
    fn certify(&self, sol: &[Scalar], eps_bits: u32) -> Result<Option<EquilibriumCertificate>> {
        let (n, m) = (self.market.n(), self.market.m());
        if let Some(p) = exact_vec(&sol[..m]) {
            if p.iter().any(Q::is_negative) {
                return Ok(None);
            }
            let bundles = build_bundles(&p);
            let sets: Vec<Vec<usize>> = (0..n).map(|i| optimum_bundles(self.market, i, &bundles, None)).collect::<Result<_>>()?;
            if sets.iter().any(Vec::is_empty) || !hall_feasible(&bundles, &sets, self.market.capacities(), &p)?.is_feasible() {
                return Ok(None);
            }
            let (_, x) = extract_allocation(self.market, &bundles, &sets)?;
            let cert = verify_exact(self.market, &p, &x)?;
            return Ok(cert.equilibrium.then_some(cert));
        }
        let prices = sol[..m].to_vec();
        let mut x = vec![vec![Scalar::zero(); m]; n];
        for i in 0..n {
            for (t, &b) in self.b_sets[i].iter().enumerate() {
                let y = &sol[self.y[i][t]];
                match (self.bundles[b].kind, self.alpha[b]) {
                    (BundleKind::Singleton(j), _) => x[i][j] = &x[i][j] + y,
                    (BundleKind::Pair(lo, hi), Some(a)) => {
                        x[i][lo] = &x[i][lo] + &(y * &sol[a]);
                        x[i][hi] = &x[i][hi] + &(y * &(&Scalar::exact(Q::one()) - &sol[a]));
                    }
                    _ => unreachable!(),
                }
            }
        }
        let cert = match verify_equilibrium(self.market, &prices, &x, VerifyMode::Certified { eps_bits }) {
            Ok(c) => c,
            Err(Error::IndeterminateSign(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        Ok(cert.equilibrium.then_some(cert))
    }
}

/// Optimum-set patterns read off at seed prices: bundles within `slack` of
/// each agent's best value.
fn seeded_sets(market: &Market, sym: &[SymBundle], prices: &[Q], slack: &Q) -> Option<Vec<Vec<usize>>> {
    let bundles: Vec<Bundle> = sym
        .iter()
        .map(|b| match b.kind {
            BundleKind::Singleton(j) => Bundle::singleton(j),
            BundleKind::Pair(j, k) => Bundle::pair(j, k, b.alpha_at(prices)),
        })
        .collect();
    (0..market.n())
        .map(|i| {
            let vals: Vec<Q> = bundles.iter().map(|b| b.value(&market.values()[i])).collect();
            let best = vals.iter().max()?.clone();
            let cut = &best - slack;
            Some((0..bundles.len()).filter(|&b| vals[b] >= cut).collect())
        })
        .collect()
}

/// All patterns giving each agent a nonempty subset of the bundles.
fn all_sets(n: usize, nb: usize) -> Vec<Vec<Vec<usize>>> {
    let subsets: Vec<Vec<usize>> = (1u32..(1 << nb)).map(|mask| (0..nb).filter(|b| mask >> b & 1 == 1).collect()).collect();
    let mut out: Vec<Vec<Vec<usize>>> = vec![vec![]];
    for _ in 0..n {
        out = out.into_iter().flat_map(|pre| subsets.iter().map(move |s| [pre.clone(), vec![s.clone()]].concat())).collect();
    }
    out
}

fn oracle_seeds(market: &Market, opts: &GoodsOptions) -> Result<Vec<Vec<Q>>> {
    let approx = game_oracle(market, &opts.oracle)?;
    let mut raw = vec![approx.prices.clone()];
    if let Some(p) = polish(market, &approx, opts.eps_bits).ok().and_then(|c| exact_vec(&c.prices)) {
        raw.push(p);
    }
    if let (Some(r), true) = (opts.grid_bits, market.m() <= GRID_MAX_ITEMS) {
        raw.extend(grid_oracle_with(market, r, opts.policy)?.into_iter().filter(|a| a.gaps.iter().all(Q::is_zero)).map(|a| a.prices));
    }
    // snap near-ties so seeds near 1 or near each other land in the tied structure
    let mut out = Vec::new();
    for p in raw {
        let snapped: Vec<Q> = p.iter().map(|v| simplest_near(to_f64(v), 1e-6)).collect();
        out.extend(ray_normalize(&p));
        out.extend(ray_normalize(&snapped));
        out.push(p);
        out.push(snapped);
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Equilibria of a market with at most four items. Each viable structure is
/// solved from oracle seeds and interior sample points; for `m <= 2` every
/// optimum-set pattern is also tried, which makes the search exhaustive there.
pub fn solve_fixed_goods(market: &Market, opts: &GoodsOptions) -> Result<Vec<EquilibriumCertificate>> {
    let m = market.m();
    let structures = enumerate_price_structures(m)?;
    let seeds = oracle_seeds(market, opts)?;
    let slack = q(1, 1 << 20);
    let per_structure = par::map(opts.policy, structures.into_iter().filter(PriceStructure::is_viable).collect(), |s| {
        solve_structure(market, &s, &seeds, &slack, opts)
    });
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for certs in per_structure {
        for c in certs? {
            let key = (c.utilities.iter().map(|u| u.to_string()).collect::<Vec<_>>(), support_pattern(&c));
            if seen.insert(key) {
                out.push(c);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::IncompleteSearch(format!("no cell of the {m}-item structures produced a verified equilibrium")));
    }
    Ok(out)
}

fn support_pattern(c: &EquilibriumCertificate) -> Vec<Vec<bool>> {
    c.allocation.iter().map(|r| r.iter().map(|x| x.sign().map_or(true, |s| s.is_gt())).collect()).collect()
}

fn solve_structure(market: &Market, s: &PriceStructure, seeds: &[Vec<Q>], slack: &Q, opts: &GoodsOptions) -> Result<Vec<EquilibriumCertificate>> {
    let sym = structure_bundles(s);
    if sym.is_empty() {
        return Ok(vec![]);
    }
    let mut starts: Vec<Vec<Q>> = seeds.iter().filter(|p| s.contains(p)).cloned().collect();
    starts.extend((0..opts.samples).map(|k| s.sample_point(k)));
    let mut cells: Vec<(Vec<Vec<usize>>, Vec<Q>)> = Vec::new();
    for p in &starts {
        for sl in [slack.clone(), q(1, 1000), q(1, 50)] {
            if let Some(sets) = seeded_sets(market, &sym, p, &sl) {
                cells.push((sets, p.clone()));
            }
        }
    }
    let patterns = ((1usize << sym.len()) - 1).checked_pow(market.n() as u32);
    if market.m() <= 2 && matches!(patterns, Some(c) if c <= opts.enumeration_cap) {
        for sets in all_sets(market.n(), sym.len()) {
            cells.push((sets, s.sample_point(0)));
        }
    }
    let mut tried = BTreeSet::new();
    let mut out = Vec::new();
    for (sets, p) in cells {
        if !tried.insert((sets.clone(), p.clone())) {
            continue;
        }
        let cell = Cell::new(market, s, &sym, sets);
        let sols = match solve_poly_system(&cell.system(), &cell.seed(&p), SolveMode::Certify { eps_bits: opts.eps_bits }) {
            Ok(v) => v,
            Err(Error::NoSolutionFound | Error::IndeterminateSign(_)) => continue,
            Err(e) => return Err(e),
        };
        for sol in sols {
            if let Some(c) = cell.certify(&sol, opts.eps_bits)? {
                out.push(c);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::exact_parts;

    #[test]
    fn structure_counts() {
        let counts: Vec<usize> = (1..=3).map(|m| enumerate_price_structures(m).unwrap().len()).collect();
        assert_eq!(counts, vec![3, 13, 75]);
        assert_eq!(enumerate_price_structures(4).unwrap().len(), 541);
        assert_eq!(enumerate_price_structures(5), Err(Error::TooManyItems { m: 5, limit: 4 }));
        let all = enumerate_price_structures(3).unwrap();
        let distinct: BTreeSet<String> = all.iter().map(|s| format!("{:?}", s)).collect();
        assert_eq!(distinct.len(), all.len());
    }

    #[test]
    fn sample_points_lie_inside() {
        for s in enumerate_price_structures(3).unwrap() {
            for k in 0..3 {
                assert!(s.contains(&s.sample_point(k)), "{:?}", s);
            }
        }
    }

    #[test]
    fn symbolic_bundles() {
        let s = PriceStructure::of_prices(&[q(1, 2), q(3, 2)]);
        let b = structure_bundles(&s);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].kind, BundleKind::Pair(0, 1));
        assert_eq!(b[0].alpha_at(&[q(1, 4), qi(2)]), q(4, 7));
        let ones = structure_bundles(&PriceStructure::of_prices(&[qi(1), qi(1)]));
        assert_eq!(ones.iter().map(|b| b.kind).collect::<Vec<_>>(), vec![BundleKind::Singleton(0), BundleKind::Singleton(1)]);
        let low = PriceStructure::of_prices(&[q(1, 4), q(1, 2)]);
        assert!(structure_bundles(&low).is_empty());
        assert!(!low.is_viable());
    }

    #[test]
    fn symbolic_alpha_matches_concrete_bundles() {
        for s in enumerate_price_structures(3).unwrap() {
            let p = s.sample_point(1);
            let concrete = build_bundles(&p);
            let sym = structure_bundles(&s);
            assert_eq!(concrete.len(), sym.len());
            for (c, b) in concrete.iter().zip(&sym) {
                assert_eq!(c.kind, b.kind);
                assert_eq!(c.alpha, b.alpha_at(&p));
            }
        }
    }

    #[test]
    fn hall_examples() {
        let p = vec![qi(1), qi(1)];
        let b = build_bundles(&p);
        let c = vec![qi(1), qi(1)];
        assert_eq!(hall_feasible(&b, &[vec![0], vec![1]], &c, &p).unwrap(), HallVerdict::Feasible(vec![qi(1), qi(1)]));
        assert_eq!(hall_feasible(&b, &[vec![0], vec![0]], &c, &p).unwrap(), HallVerdict::Infeasible { violating: vec![0], agents: 2 });
        assert!(hall_feasible(&b, &[vec![0, 1], vec![0, 1]], &c, &p).unwrap().is_feasible());
    }

    #[test]
    fn hall_routes_agree_exhaustively() {
        // four bundles over three items at a fixed price point
        let p = vec![q(1, 2), qi(1), q(3, 2)];
        let mut bundles = build_bundles(&p);
        bundles.push(Bundle::singleton(1));
        bundles.truncate(4);
        let nb = bundles.len();
        let caps = [vec![q(1, 2), qi(1), q(1, 2)], vec![qi(1), qi(1), qi(1)], vec![q(1, 2), q(3, 2), qi(1)]];
        for n in 1..=3 {
            for sets in all_sets(n, nb) {
                for c in &caps {
                    let c: Vec<Q> = c.iter().map(|v| v * qi(n as i64) / qi(3)).collect();
                    let a = hall_feasible_subsets(&bundles, &sets, &c).unwrap();
                    let b = hall_feasible_assignment(&bundles, &sets, &c);
                    assert_eq!(a.is_feasible(), b.is_feasible(), "{sets:?} {c:?}");
                }
            }
        }
    }

    fn opts() -> GoodsOptions {
        GoodsOptions::default()
    }

    #[test]
    fn simple_market_has_unit_prices() {
        let m = Market::from_ints(&[&[2, 1], &[0, 1]], &[1, 1]).unwrap();
        let certs = solve_fixed_goods(&m, &opts()).unwrap();
        assert!(certs.iter().all(|c| c.equilibrium));
        let hit = certs.iter().filter_map(exact_parts).find(|(p, _)| *p == vec![qi(1), qi(1)]).expect("p = (1, 1)");
        assert_eq!(hit.1, vec![vec![qi(1), qi(0)], vec![qi(0), qi(1)]]);
        assert!(certs.iter().all(|c| c.utilities == vec![Scalar::exact(qi(2)), Scalar::exact(qi(1))]));
    }

    #[test]
    fn identical_agents_land_on_the_family() {
        let m = Market::from_ints(&[&[1, 2], &[1, 2]], &[1, 1]).unwrap();
        let certs = solve_fixed_goods(&m, &opts()).unwrap();
        for c in &certs {
            let (p, x) = exact_parts(c).unwrap();
            assert_eq!(&p[0] + &p[1], qi(2));
            assert!(p[0] < Q::one());
            assert_eq!(x, vec![vec![q(1, 2), q(1, 2)]; 2]);
            assert_eq!(c.utilities, vec![Scalar::exact(q(3, 2)); 2]);
        }
    }

    #[test]
    fn single_agent_single_item() {
        let m = Market::from_ints(&[&[5]], &[1]).unwrap();
        let certs = solve_fixed_goods(&m, &opts()).unwrap();
        assert_eq!(exact_parts(&certs[0]).unwrap(), (vec![qi(1)], vec![vec![qi(1)]]));
    }
}

//! Equilibria for few agents with unique favourite items. A structure fixes
//! one anchor item per agent and, per pair of agents, the ends of the lower
//! agent's holdings among their common items; prices then follow from
//! utilities and anchor prices, and the allocation from a few shares.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::baselines::{game_oracle, grid_oracle_with, polish, GameOptions, GRID_MAX_ITEMS};
use crate::bundling::{candidate_bundles, BundleKind};
use crate::canonical::{canonicalize_allocation, common_list, optimum_items, side, Side};
use crate::error::{Error, Result};
use crate::market::{exact_row_value, exact_vec, ray_normalize, Market};
use crate::numerics::poly::Poly;
use crate::numerics::solve::{solve_poly_system, PolySystem, SolveMode};
use crate::par::{self, ExecPolicy};
use crate::rational::{to_f64, Q};
use crate::scalar::Scalar;
use crate::verify::{check_structural_conditions, exact_parts, verify_equilibrium, verify_exact, EquilibriumCertificate, VerifyMode};

pub const MAX_AGENTS: usize = 4;

/// Ends of the lower agent's holdings among a pair's common items: first and
/// last on each side of price 1 (in price order), and the last unit-priced
/// item (in index order). The partner may share exactly these items.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SharedTuple {
    pub f_s: Option<usize>,
    pub r_s: Option<usize>,
    pub f_t: Option<usize>,
    pub r_t: Option<usize>,
    pub h: Option<usize>,
}

impl SharedTuple {
    fn ends(&self) -> [Option<usize>; 5] {
        [self.f_s, self.r_s, self.f_t, self.r_t, self.h]
    }

    fn window(&self, s: Side) -> (Option<usize>, Option<usize>) {
        match s {
            Side::Below => (self.f_s, self.r_s),
            Side::Above => (self.f_t, self.r_t),
            Side::At => (None, self.h),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentStructure {
    /// Anchor item of each agent, or `None` when it holds only unit-priced items.
    pub special: Vec<Option<usize>>,
    /// Keyed by `(i, j)` with `i < j`.
    pub shared: BTreeMap<(usize, usize), SharedTuple>,
}

impl AgentStructure {
    pub fn tuple(&self, i: usize, j: usize) -> SharedTuple {
        self.shared.get(&(i, j)).cloned().unwrap_or_default()
    }
}

/// `(i, j, item)`: amount of `item` held by `i`; `j` holds what the other
/// sharers leave.
pub type ShareKey = (usize, usize, usize);

/// How much of an item an agent holds, in terms of the share unknowns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Entry {
    Zero,
    Whole,
    Share(ShareKey),
    Rest(Vec<ShareKey>),
}

/// Agent `i` proposes, for each item reachable from its anchor through its
/// candidate pairs, the price that makes the pair cost exactly 1, and price 1
/// for its singleton candidates. Each item takes the highest proposal.
pub fn propagate_prices(market: &Market, s: &AgentStructure, u: &[Q], anchors: &[Option<Q>]) -> Result<Vec<Q>> {
    let (n, m) = (market.n(), market.m());
    let mut best: Vec<Option<(Q, usize)>> = vec![None; m];
    let mut offer = |j: usize, p: Q, agent: usize| {
        if best[j].as_ref().map_or(true, |(b, _)| p > *b) {
            best[j] = Some((p, agent));
        }
    };
    for i in 0..n {
        let cands = candidate_bundles(market, i, &u[i]);
        let mut own: Vec<Option<Q>> = vec![None; m];
        let mut queue = VecDeque::new();
        if let (Some(g), Some(pg)) = (s.special[i], &anchors[i]) {
            own[g] = Some(pg.clone());
            queue.push_back(g);
        }
        while let Some(a) = queue.pop_front() {
            let pa = own[a].clone().unwrap();
            for c in &cands {
                let BundleKind::Pair(l, k) = c.kind else { continue };
                let beta = &c.ratio;
                let (to, price) = if l == a {
                    (k, (Q::one() - beta * &pa) / (Q::one() - beta))
                } else if k == a {
                    (l, (Q::one() - (Q::one() - beta) * &pa) / beta)
                } else {
                    continue;
                };
                if own[to].is_none() {
                    own[to] = Some(price);
                    queue.push_back(to);
                }
            }
        }
        for c in &cands {
            if let BundleKind::Singleton(j) = c.kind {
                own[j] = Some(own[j].clone().map_or(Q::one(), |p| p.max(Q::one())));
            }
        }
        for (j, p) in own.into_iter().enumerate() {
            if let Some(p) = p {
                offer(j, p, i);
            }
        }
    }
    for i in 0..n {
        if let (Some(g), Some(pg)) = (s.special[i], &anchors[i]) {
            if let Some((p, by)) = &best[g] {
                if p > pg && *by != i {
                    return Err(Error::ProposalExceedsAnchor { agent: *by, item: g });
                }
            }
        }
    }
    best.into_iter()
        .enumerate()
        .map(|(j, b)| b.map(|(p, _)| p).ok_or(Error::UnpricedItem { item: j }))
        .collect()
}

/// Every candidate bundle of every agent costs at least 1.
pub fn candidate_prices_bounded(market: &Market, prices: &[Q], u: &[Q]) -> bool {
    (0..market.n()).all(|i| {
        candidate_bundles(market, i, &u[i]).iter().all(|c| {
            let cost = match c.kind {
                BundleKind::Singleton(j) => prices[j].clone(),
                BundleKind::Pair(l, k) => &c.ratio * &prices[l] + (Q::one() - &c.ratio) * &prices[k],
            };
            cost >= Q::one()
        })
    })
}

fn position(list: &[usize], j: usize) -> Option<usize> {
    list.iter().position(|&x| x == j)
}

/// Whether item `j`, common to `a < b`, lies strictly inside `a`'s window.
fn inside(prices: &[Q], opt: &[Vec<bool>], s: &AgentStructure, a: usize, b: usize, j: usize) -> bool {
    let sd = side(&prices[j]);
    let t = s.tuple(a, b);
    let (f, r) = t.window(sd);
    if sd == Side::At {
        return r.map_or(false, |h| j < h);
    }
    let list = common_list(prices, &opt[a], &opt[b], sd);
    match (f.and_then(|f| position(&list, f)), r.and_then(|r| position(&list, r)), position(&list, j)) {
        (Some(pf), Some(pr), Some(pj)) => pf < pj && pj < pr,
        _ => false,
    }
}

/// Who holds what, given each agent's optimum items: an item wanted by one
/// agent goes to it; a window end is split among every co-holder it ends a
/// window for;
/// any other common item goes to the lowest agent for which it lies inside
/// the window with every higher co-holder, or to the last co-holder.
pub fn allocation_pattern(prices: &[Q], opt: &[Vec<bool>], s: &AgentStructure) -> Result<Vec<Vec<Entry>>> {
    let (n, m) = (opt.len(), prices.len());
    let mut x = vec![vec![Entry::Zero; m]; n];
    for j in 0..m {
        let holders: Vec<usize> = (0..n).filter(|&i| opt[i][j]).collect();
        match holders.as_slice() {
            [] => return Err(Error::StructureInconsistent { item: j }),
            [i] => x[*i][j] = Entry::Whole,
            _ => {
                let sd = side(&prices[j]);
                let ends = |a: usize, b: usize| {
                    let (f, r) = s.tuple(a, b).window(sd);
                    f == Some(j) || r == Some(j)
                };
                let split: Vec<usize> = holders
                    .iter()
                    .copied()
                    .filter(|&a| holders.iter().any(|&b| b != a && ends(a.min(b), a.max(b))))
                    .collect();
                if let Some((&last, rest)) = split.split_last() {
                    let keys: Vec<ShareKey> = rest.iter().map(|&a| (a, last, j)).collect();
                    for k in &keys {
                        x[k.0][j] = Entry::Share(*k);
                    }
                    x[last][j] = Entry::Rest(keys);
                    continue;
                }
                let owner = holders
                    .iter()
                    .enumerate()
                    .find(|&(t, &a)| holders[t + 1..].iter().all(|&b| inside(prices, opt, s, a, b, j)))
                    .map(|(_, &a)| a)
                    .unwrap();
                x[owner][j] = Entry::Whole;
            }
        }
    }
    Ok(x)
}

fn evaluate(market: &Market, pattern: &[Vec<Entry>], shares: &BTreeMap<ShareKey, Q>) -> Result<Vec<Vec<Q>>> {
    pattern
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, e)| {
                    let c = market.capacity(j);
                    let share = |k: &ShareKey| {
                        let v = shares.get(k).ok_or_else(|| Error::PreconditionViolated(format!("no share for {k:?}")))?;
                        if v.is_negative() || v > c {
                            return Err(Error::PreconditionViolated(format!("share {v} of item {j} outside [0, C]")));
                        }
                        Ok(v.clone())
                    };
                    Ok(match e {
                        Entry::Zero => Q::zero(),
                        Entry::Whole => c.clone(),
                        Entry::Share(k) => share(k)?,
                        Entry::Rest(ks) => {
                            let r = ks.iter().try_fold(c.clone(), |acc, k| Ok::<_, Error>(acc - share(k)?))?;
                            if r.is_negative() {
                                return Err(Error::PreconditionViolated(format!("shares of item {j} exceed its capacity")));
                            }
                            r
                        }
                    })
                })
                .collect()
        })
        .collect()
}

/// Rebuilds the allocation implied by a structure at given prices and shares.
pub fn reconstruct_allocation(market: &Market, s: &AgentStructure, prices: &[Q], shares: &BTreeMap<ShareKey, Q>) -> Result<Vec<Vec<Q>>> {
    let opt = optimum_items(market, prices)?;
    evaluate(market, &allocation_pattern(prices, &opt, s)?, shares)
}

/// Reads a structure off an allocation: anchors are held items in a two-item
/// optimum bundle (cheapest below 1 preferred), window ends are the first and
/// last common items the lower agent holds.
pub fn extract_structure(prices: &[Q], opt: &[Vec<bool>], x: &[Vec<Q>], held: &dyn Fn(&Q) -> bool) -> AgentStructure {
    let (n, m) = (opt.len(), prices.len());
    let has = |sd: Side, i: usize| (0..m).any(|j| opt[i][j] && side(&prices[j]) == sd);
    let mut special = Vec::with_capacity(n);
    for i in 0..n {
        let paired = has(Side::Below, i) && has(Side::Above, i);
        let mut mine: Vec<usize> = (0..m).filter(|&j| held(&x[i][j]) && side(&prices[j]) != Side::At).collect();
        mine.sort_by(|&a, &b| side(&prices[a]).cmp_rank(side(&prices[b])).then(prices[a].cmp(&prices[b])).then(a.cmp(&b)));
        special.push(if paired { mine.first().copied() } else { None });
    }
    let mut shared = BTreeMap::new();
    for a in 0..n {
        for b in a + 1..n {
            let ends = |sd: Side| {
                let list = common_list(prices, &opt[a], &opt[b], sd);
                let mine: Vec<usize> = list.into_iter().filter(|&j| held(&x[a][j])).collect();
                (mine.first().copied(), mine.last().copied())
            };
            let (f_s, r_s) = ends(Side::Below);
            let (f_t, r_t) = ends(Side::Above);
            let (_, h) = ends(Side::At);
            let t = SharedTuple { f_s, r_s, f_t, r_t, h };
            if t != SharedTuple::default() {
                shared.insert((a, b), t);
            }
        }
    }
    AgentStructure { special, shared }
}

trait SideRank {
    fn cmp_rank(self, other: Side) -> std::cmp::Ordering;
}

impl SideRank for Side {
    fn cmp_rank(self, other: Side) -> std::cmp::Ordering {
        let r = |s: Side| match s {
            Side::Below => 0,
            Side::Above => 1,
            Side::At => 2,
        };
        r(self).cmp(&r(other))
    }
}

/// Structures one change away from `s`: an anchor dropped or moved to another
/// optimum item off price 1, or a window end dropped or moved by one place in
/// its common list.
pub fn neighborhood(prices: &[Q], opt: &[Vec<bool>], s: &AgentStructure) -> Vec<AgentStructure> {
    let (n, m) = (opt.len(), prices.len());
    let mut out = BTreeSet::new();
    for i in 0..n {
        let mut choices: Vec<Option<usize>> = vec![None];
        choices.extend((0..m).filter(|&j| opt[i][j] && side(&prices[j]) != Side::At).map(Some));
        for c in choices {
            if c != s.special[i] {
                let mut t = s.clone();
                t.special[i] = c;
                out.insert(t);
            }
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            let base = s.tuple(a, b);
            for slot in 0..5 {
                let sd = [Side::Below, Side::Below, Side::Above, Side::Above, Side::At][slot];
                let list = common_list(prices, &opt[a], &opt[b], sd);
                let cur = base.ends()[slot];
                let pos = cur.and_then(|c| position(&list, c));
                let mut alts: Vec<Option<usize>> = vec![None];
                match pos {
                    Some(p) => {
                        if p > 0 {
                            alts.push(Some(list[p - 1]));
                        }
                        if p + 1 < list.len() {
                            alts.push(Some(list[p + 1]));
                        }
                    }
                    None => alts.extend(list.iter().map(|&j| Some(j))),
                }
                for alt in alts.into_iter().filter(|a| *a != cur) {
                    let mut t = base.clone();
                    match slot {
                        0 => t.f_s = alt,
                        1 => t.r_s = alt,
                        2 => t.f_t = alt,
                        3 => t.r_t = alt,
                        _ => t.h = alt,
                    }
                    let mut st = s.clone();
                    if t == SharedTuple::default() {
                        st.shared.remove(&(a, b));
                    } else {
                        st.shared.insert((a, b), t);
                    }
                    out.insert(st);
                }
            }
        }
    }
    out.remove(s);
    out.into_iter().collect()
}

/// Every structure for two agents over the given optimum items: anchors from
/// the non-unit optimum items (or none) and every window on each side.
pub fn all_structures_two(prices: &[Q], opt: &[Vec<bool>]) -> Vec<AgentStructure> {
    let m = prices.len();
    let anchor = |i: usize| -> Vec<Option<usize>> {
        std::iter::once(None).chain((0..m).filter(|&j| opt[i][j] && side(&prices[j]) != Side::At).map(Some)).collect()
    };
    let windows = |sd: Side| -> Vec<(Option<usize>, Option<usize>)> {
        let list = common_list(prices, &opt[0], &opt[1], sd);
        let mut w = vec![(None, None)];
        for a in 0..list.len() {
            for b in a..list.len() {
                w.push((Some(list[a]), Some(list[b])));
            }
        }
        w
    };
    let hs: Vec<Option<usize>> = std::iter::once(None).chain(common_list(prices, &opt[0], &opt[1], Side::At).into_iter().map(Some)).collect();
    let mut out = Vec::new();
    for g0 in anchor(0) {
        for g1 in anchor(1) {
            for &(f_s, r_s) in &windows(Side::Below) {
                for &(f_t, r_t) in &windows(Side::Above) {
                    for &h in &hs {
                        let t = SharedTuple { f_s, r_s, f_t, r_t, h };
                        let mut shared = BTreeMap::new();
                        if t != SharedTuple::default() {
                            shared.insert((0, 1), t);
                        }
                        out.push(AgentStructure { special: vec![g0, g1], shared });
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct AgentsOptions {
    /// Also try every structure when `n = 2` and `m <= FULL_ENUM_MAX_ITEMS`.
    pub full_enum: bool,
    /// Rounds of single-change moves around each seeded structure.
    pub radius: usize,
    pub oracle: GameOptions,
    /// Grid resolution for extra seeds when `m <= 2`; off by default.
    pub grid_bits: Option<u32>,
    pub eps_bits: u32,
    pub policy: ExecPolicy,
}

impl Default for AgentsOptions {
    fn default() -> Self {
        AgentsOptions { full_enum: false, radius: 1, oracle: GameOptions::default(), grid_bits: None, eps_bits: 64, policy: ExecPolicy::Auto }
    }
}

pub const FULL_ENUM_MAX_ITEMS: usize = 6;

/// An exact point the cells are built around.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Seed {
    prices: Vec<Q>,
    utilities: Vec<Q>,
    allocation: Vec<Vec<Q>>,
}

fn seeds(market: &Market, opts: &AgentsOptions) -> Result<Vec<Seed>> {
    let mut approx = vec![game_oracle(market, &opts.oracle)?];
    if let (Some(r), true) = (opts.grid_bits, market.m() <= GRID_MAX_ITEMS) {
        approx.extend(grid_oracle_with(market, r, opts.policy)?.into_iter().filter(|a| a.gaps.iter().all(Q::is_zero)));
    }
    let mut out = BTreeSet::new();
    for a in approx {
        let Some((p, x)) = polish(market, &a, opts.eps_bits).ok().and_then(|c| exact_parts(&c)) else { continue };
        let mut points = vec![p.clone()];
        points.extend(ray_normalize(&p));
        for p in points {
            let Ok(x) = canonicalize_allocation(market, &p, &x) else { continue };
            let utilities = (0..market.n()).map(|i| exact_row_value(&market.values()[i], &x[i])).collect();
            out.insert(Seed { prices: p, utilities, allocation: x });
        }
    }
    Ok(out.into_iter().collect())
}

struct Cell<'a> {
    market: &'a Market,
    pattern: Vec<Vec<Entry>>,
    shares: Vec<ShareKey>,
    system: PolySystem,
    seed: Vec<f64>,
}

impl<'a> Cell<'a> {
    fn nvars(&self) -> usize {
        self.market.n() + self.market.m() + self.shares.len()
    }

    fn build(market: &'a Market, s: &AgentStructure, seed: &Seed) -> Option<Cell<'a>> {
        let (n, m) = (market.n(), market.m());
        let (p, u) = (&seed.prices, &seed.utilities);
        let opt = optimum_items(market, p).ok()?;
        let pattern = allocation_pattern(p, &opt, s).ok()?;
        let shares: Vec<ShareKey> = pattern.iter().flatten().filter_map(|e| match e {
            Entry::Share(k) => Some(*k),
            _ => None,
        }).collect();
        let nv = n + m + shares.len();
        let uv = |i: usize| Poly::var(nv, i);
        let pv = |j: usize| Poly::var(nv, n + j);
        let one = || Poly::constant(nv, Q::one());
        let entry = |e: &Entry, j: usize| -> Poly {
            let c = market.capacity(j).clone();
            match e {
                Entry::Zero => Poly::zero(nv),
                Entry::Whole => Poly::constant(nv, c),
                Entry::Share(k) => Poly::var(nv, n + m + shares.iter().position(|x| x == k).unwrap()),
                Entry::Rest(ks) => ks.iter().fold(Poly::constant(nv, c), |acc, k| acc - Poly::var(nv, n + m + shares.iter().position(|x| x == k).unwrap())),
            }
        };
        // (u - v_k) p_l + (v_l - u) p_k - (v_l - v_k): zero when the pair costs 1, negative when it costs more
        let pair = |i: usize, l: usize, k: usize| -> Poly {
            let (vl, vk) = (market.value(i, l).clone(), market.value(i, k).clone());
            (uv(i) - Poly::constant(nv, vk.clone())) * pv(l) + (Poly::constant(nv, vl.clone()) - uv(i)) * pv(k) - Poly::constant(nv, vl - vk)
        };
        let mut sys = PolySystem::new(nv);
        let anchors: BTreeSet<usize> = s.special.iter().flatten().copied().collect();
        for i in 0..n {
            if let Some(g) = s.special[i] {
                if !opt[i][g] {
                    return None;
                }
            }
        }
        let mut winner: Vec<Option<(Q, Poly)>> = vec![None; m];
        for i in 0..n {
            for c in candidate_bundles(market, i, &u[i]) {
                let (offers, constraint) = match c.kind {
                    BundleKind::Singleton(j) => (vec![(j, Q::one())], pv(j) - one()),
                    BundleKind::Pair(l, k) => {
                        let b = &c.ratio;
                        let to_l = (Q::one() - (Q::one() - b) * &p[k]) / b;
                        let to_k = (Q::one() - b * &p[l]) / (Q::one() - b);
                        (vec![(l, to_l), (k, to_k)], -pair(i, l, k))
                    }
                };
                for (j, offer) in offers {
                    if winner[j].as_ref().map_or(true, |(w, _)| offer > *w) {
                        let eq = match c.kind {
                            BundleKind::Singleton(_) => pv(j) - one(),
                            BundleKind::Pair(l, k) => pair(i, l, k),
                        };
                        winner[j] = Some((offer, eq));
                    }
                }
                sys.add_ge(constraint);
            }
        }
        for j in 0..m {
            sys.add_ge(pv(j));
            if anchors.contains(&j) {
                continue;
            }
            sys.add_eq(winner[j].take()?.1);
        }
        for i in 0..n {
            let mut row = Poly::zero(nv);
            let mut spend = Poly::zero(nv);
            let mut value = Poly::zero(nv);
            for j in 0..m {
                let e = entry(&pattern[i][j], j);
                if matches!(pattern[i][j], Entry::Rest(_)) {
                    sys.add_ge(e.clone());
                }
                row = row + e.clone();
                spend = spend + pv(j) * e.clone();
                value = value + e.scale(market.value(i, j));
                match market.value(i, j).cmp(&u[i]) {
                    std::cmp::Ordering::Equal => sys.add_eq(Poly::constant(nv, market.value(i, j).clone()) - uv(i)),
                    std::cmp::Ordering::Greater => {
                        sys.add_gt(Poly::constant(nv, market.value(i, j).clone()) - uv(i));
                        sys.add_gt(pv(j) - one());
                    }
                    std::cmp::Ordering::Less => sys.add_gt(uv(i) - Poly::constant(nv, market.value(i, j).clone())),
                }
            }
            sys.add_eq(row - one());
            sys.add_eq(spend - one());
            sys.add_eq(value - uv(i));
        }
        for (t, k) in shares.iter().enumerate() {
            let v = Poly::var(nv, n + m + t);
            sys.add_ge(v.clone());
            sys.add_ge(Poly::constant(nv, market.capacity(k.2).clone()) - v);
        }
        let mut start: Vec<f64> = u.iter().chain(p.iter()).map(to_f64).collect();
        start.extend(shares.iter().map(|&(a, _, j)| to_f64(&seed.allocation[a][j])));
        Some(Cell { market, pattern, shares, system: sys, seed: start })
    }

    fn certify(&self, s: &AgentStructure, sol: &[Scalar], eps_bits: u32) -> Result<Option<EquilibriumCertificate>> {
        let (n, m) = (self.market.n(), self.market.m());
        if let Some(v) = exact_vec(sol) {
            let (u, p) = (&v[..n], &v[n..n + m]);
            let shares: BTreeMap<ShareKey, Q> = self.shares.iter().copied().zip(v[n + m..].iter().cloned()).collect();
            if p.iter().any(Q::is_negative) || !candidate_prices_bounded(self.market, p, u) {
                return Ok(None);
            }
            let x = match reconstruct_allocation(self.market, s, p, &shares) {
                Ok(x) => x,
                Err(_) => match evaluate(self.market, &self.pattern, &shares) {
                    Ok(x) => x,
                    Err(_) => return Ok(None),
                },
            };
            let opt = optimum_items(self.market, p)?;
            if s.special.iter().enumerate().any(|(i, g)| g.map_or(false, |g| !opt[i][g])) {
                return Ok(None);
            }
            let cert = verify_exact(self.market, p, &x)?;
            if !cert.equilibrium || !check_structural_conditions(self.market, p, &x)?.all_hold() {
                return Ok(None);
            }
            return Ok(Some(cert));
        }
        let prices = sol[n..n + m].to_vec();
        let x: Vec<Vec<Scalar>> = self.pattern.iter().map(|row| {
            row.iter().enumerate().map(|(j, e)| {
                let c = Scalar::exact(self.market.capacity(j).clone());
                let share = |k: &ShareKey| sol[n + m + self.shares.iter().position(|x| x == k).unwrap()].clone();
                match e {
                    Entry::Zero => Scalar::zero(),
                    Entry::Whole => c,
                    Entry::Share(k) => share(k),
                    Entry::Rest(ks) => ks.iter().fold(c, |acc, k| &acc - &share(k)),
                }
            }).collect()
        }).collect();
        let cert = match verify_equilibrium(self.market, &prices, &x, VerifyMode::Certified { eps_bits }) {
            Ok(c) => c,
            Err(Error::IndeterminateSign(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        Ok(cert.equilibrium.then_some(cert))
    }
}

fn solve_cell(market: &Market, s: &AgentStructure, seed: &Seed, eps_bits: u32) -> Result<Vec<EquilibriumCertificate>> {
    let Some(cell) = Cell::build(market, s, seed) else { return Ok(vec![]) };
    debug_assert_eq!(cell.seed.len(), cell.nvars());
    let sols = match solve_poly_system(&cell.system, &cell.seed, SolveMode::Certify { eps_bits }) {
        Ok(v) => v,
        Err(Error::NoSolutionFound | Error::IndeterminateSign(_)) => return Ok(vec![]),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    for sol in sols {
        out.extend(cell.certify(s, &sol, eps_bits)?);
    }
    Ok(out)
}

fn support_key(c: &EquilibriumCertificate) -> (Vec<String>, Vec<Vec<bool>>) {
    (
        c.utilities.iter().map(|u| u.to_string()).collect(),
        c.allocation.iter().map(|r| r.iter().map(|x| x.sign().map_or(true, |s| s.is_gt())).collect()).collect(),
    )
}

/// Equilibria of a market with at most four agents, each with a unique
/// favourite item. Structures are read off oracle points, then perturbed; each
/// fixes a polynomial system in utilities, prices and shares.
pub fn solve_fixed_agents(market: &Market, opts: &AgentsOptions) -> Result<Vec<EquilibriumCertificate>> {
    let (n, m) = (market.n(), market.m());
    if n > MAX_AGENTS {
        return Err(Error::TooManyAgents { n, limit: MAX_AGENTS });
    }
    if let Some(i) = (0..n).find(|&i| !market.has_unique_top(i)) {
        return Err(Error::NonUniqueTopItem { agent: i });
    }
    let seeds = seeds(market, opts)?;
    let mut jobs: BTreeSet<(AgentStructure, Seed)> = BTreeSet::new();
    for seed in &seeds {
        let opt = optimum_items(market, &seed.prices)?;
        let base = extract_structure(&seed.prices, &opt, &seed.allocation, &|v: &Q| v.is_positive());
        let mut frontier = vec![base];
        for _ in 0..=opts.radius {
            let mut next = Vec::new();
            for st in frontier {
                if jobs.insert((st.clone(), seed.clone())) {
                    next.extend(neighborhood(&seed.prices, &opt, &st));
                }
            }
            frontier = next;
        }
        if opts.full_enum && n == 2 && m <= FULL_ENUM_MAX_ITEMS {
            for st in all_structures_two(&seed.prices, &opt) {
                jobs.insert((st, seed.clone()));
            }
        }
    }
    let results = par::map(opts.policy, jobs.into_iter().collect(), |(s, seed)| solve_cell(market, &s, &seed, opts.eps_bits));
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for certs in results {
        for c in certs? {
            if seen.insert(support_key(&c)) {
                out.push(c);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::IncompleteSearch(format!("no structure near {} oracle seeds produced a verified equilibrium", seeds.len())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::q;

    fn qs(v: &[(i64, i64)]) -> Vec<Q> {
        v.iter().map(|&(a, b)| q(a, b)).collect()
    }

    fn opts() -> AgentsOptions {
        AgentsOptions { eps_bits: 40, ..AgentsOptions::default() }
    }

    #[test]
    fn propagation_single_agent() {
        let market = Market::new(vec![qs(&[(0, 1), (1, 1), (3, 1)])], vec![q(1, 3); 3]).unwrap();
        let s = AgentStructure { special: vec![Some(2)], shared: BTreeMap::new() };
        let p = propagate_prices(&market, &s, &[q(1, 1)], &[Some(q(3, 2))]).unwrap();
        assert_eq!(p, qs(&[(3, 4), (1, 1), (3, 2)]));
    }

    #[test]
    fn propagation_all_singletons() {
        let market = Market::from_ints(&[&[2, 2], &[1, 1]], &[1, 1]).unwrap();
        let s = AgentStructure { special: vec![None, None], shared: BTreeMap::new() };
        let p = propagate_prices(&market, &s, &qs(&[(2, 1), (1, 1)]), &[None, None]).unwrap();
        assert_eq!(p, qs(&[(1, 1), (1, 1)]));
    }

    #[test]
    fn propagation_unpriced_item() {
        let market = Market::new(vec![qs(&[(3, 1), (1, 1), (0, 1)])], vec![q(1, 3); 3]).unwrap();
        let s = AgentStructure { special: vec![None], shared: BTreeMap::new() };
        let err = propagate_prices(&market, &s, &[q(3, 1)], &[None]).unwrap_err();
        assert!(matches!(err, Error::UnpricedItem { item: 1 }));
    }

    #[test]
    fn propagation_outbid_anchor() {
        // agent 1 would price item 0 at 1 through its singleton, above agent 0's anchor 1/2
        let market = Market::from_ints(&[&[1, 3], &[2, 0]], &[1, 1]).unwrap();
        let s = AgentStructure { special: vec![Some(0), None], shared: BTreeMap::new() };
        let err = propagate_prices(&market, &s, &qs(&[(2, 1), (2, 1)]), &[Some(q(1, 2)), None]).unwrap_err();
        assert!(matches!(err, Error::ProposalExceedsAnchor { agent: 1, item: 0 }));
    }

    #[test]
    fn reconstruct_disjoint() {
        let market = Market::from_ints(&[&[2, 1], &[0, 1]], &[1, 1]).unwrap();
        let x = reconstruct_allocation(&market, &AgentStructure { special: vec![None, None], shared: BTreeMap::new() }, &qs(&[(1, 1), (1, 1)]), &BTreeMap::new()).unwrap();
        assert_eq!(x, vec![qs(&[(1, 1), (0, 1)]), qs(&[(0, 1), (1, 1)])]);
    }

    #[test]
    fn reconstruct_identical_pair() {
        let market = Market::from_ints(&[&[1, 2], &[1, 2]], &[1, 1]).unwrap();
        let mut shared = BTreeMap::new();
        shared.insert((0, 1), SharedTuple { f_s: Some(0), r_s: Some(0), f_t: Some(1), r_t: Some(1), h: None });
        let s = AgentStructure { special: vec![Some(0), Some(0)], shared };
        let shares: BTreeMap<ShareKey, Q> = [((0, 1, 0), q(1, 2)), ((0, 1, 1), q(1, 2))].into_iter().collect();
        let x = reconstruct_allocation(&market, &s, &qs(&[(1, 2), (3, 2)]), &shares).unwrap();
        assert_eq!(x, vec![qs(&[(1, 2), (1, 2)]); 2]);
    }

    #[test]
    fn interval_rule_three_agents() {
        let prices = qs(&[(1, 4), (1, 3), (1, 2), (2, 3), (3, 4)]);
        let opt = vec![vec![true; 5]; 3];
        let t = |f, r| SharedTuple { f_s: Some(f), r_s: Some(r), ..SharedTuple::default() };
        let shared = [((0, 1), t(0, 2)), ((0, 2), t(0, 4)), ((1, 2), t(0, 4))].into_iter().collect();
        let s = AgentStructure { special: vec![None; 3], shared };
        let x = allocation_pattern(&prices, &opt, &s).unwrap();
        assert_eq!(x[0][1], Entry::Whole);
        // outside agent 0's window with agent 1, inside agent 1's window with agent 2
        assert_eq!(x[0][3], Entry::Zero);
        assert_eq!(x[1][3], Entry::Whole);
        assert_eq!(x[2][3], Entry::Zero);
        // item 0 ends a window for every pair, so all three split it
        assert_eq!(x[0][0], Entry::Share((0, 2, 0)));
        assert_eq!(x[1][0], Entry::Share((1, 2, 0)));
        assert_eq!(x[2][0], Entry::Rest(vec![(0, 2, 0), (1, 2, 0)]));
        assert_eq!(x[0][2], Entry::Share((0, 1, 2)));
        assert_eq!(x[1][2], Entry::Rest(vec![(0, 1, 2)]));
        assert_eq!(x[2][2], Entry::Zero);
    }

    #[test]
    fn nobody_wants_item() {
        let prices = qs(&[(1, 1), (1, 1)]);
        let opt = vec![vec![true, false]];
        let s = AgentStructure { special: vec![None], shared: BTreeMap::new() };
        assert!(matches!(allocation_pattern(&prices, &opt, &s), Err(Error::StructureInconsistent { item: 1 })));
    }

    #[test]
    fn solves_simple_market() {
        let market = Market::from_ints(&[&[2, 1], &[0, 1]], &[1, 1]).unwrap();
        let certs = solve_fixed_agents(&market, &opts()).unwrap();
        let c = &certs[0];
        assert!(c.equilibrium);
        assert_eq!(exact_vec(&c.prices).unwrap(), qs(&[(1, 1), (1, 1)]));
        assert_eq!(exact_vec(&c.utilities).unwrap(), qs(&[(2, 1), (1, 1)]));
    }

    #[test]
    fn solves_single_agent_single_item() {
        let market = Market::from_ints(&[&[5]], &[1]).unwrap();
        let certs = solve_fixed_agents(&market, &opts()).unwrap();
        assert_eq!(exact_vec(&certs[0].prices).unwrap(), qs(&[(1, 1)]));
    }

    #[test]
    fn solves_identical_agents() {
        let market = Market::from_ints(&[&[1, 2], &[1, 2]], &[1, 1]).unwrap();
        for c in solve_fixed_agents(&market, &opts()).unwrap() {
            assert_eq!(exact_vec(&c.utilities).unwrap(), qs(&[(3, 2), (3, 2)]));
            let p = exact_vec(&c.prices).unwrap();
            assert_eq!(&p[0] + &p[1], q(2, 1));
        }
    }

    #[test]
    fn rejects_tied_tops() {
        let market = Market::from_ints(&[&[2, 2], &[0, 1]], &[1, 1]).unwrap();
        assert!(matches!(solve_fixed_agents(&market, &opts()), Err(Error::NonUniqueTopItem { agent: 0 })));
    }

    #[test]
    fn full_enumeration_two_agents() {
        let market = Market::new(vec![qs(&[(3, 1), (1, 1), (0, 1)]), qs(&[(1, 1), (3, 1), (2, 1)])], qs(&[(1, 1), (1, 2), (1, 2)])).unwrap();
        let certs = solve_fixed_agents(&market, &AgentsOptions { full_enum: true, ..opts() }).unwrap();
        assert!(certs.iter().all(|c| c.equilibrium));
    }
}

//! Reference mechanisms and brute-force oracles: random serial dictatorship,
//! probabilistic serial, a damped price-adjustment run of the market game,
//! and an exhaustive two-item price grid.

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{exact_row_value, Market};
use crate::par::{self, ExecPolicy};
use crate::demand::clearing_allocation;
use crate::rational::{qi, serde_qmat, serde_qvec, Q};
use crate::scalar::Scalar;
use crate::verify::{check_envy_free, check_pareto_efficient, exact_parts, verify_equilibrium, verify_exact, EnvyVerdict, EquilibriumCertificate, ParetoVerdict, VerifyMode};

/// Per-agent rankings of items, best first. Ties in value go to the lower index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdinalProfile {
    pub rankings: Vec<Vec<usize>>,
}

impl OrdinalProfile {
    pub fn from_market(market: &Market) -> Self {
        let rankings = (0..market.n())
            .map(|i| {
                let mut r: Vec<usize> = (0..market.m()).collect();
                r.sort_by(|&a, &b| market.value(i, b).cmp(market.value(i, a)).then(a.cmp(&b)));
                r
            })
            .collect();
        OrdinalProfile { rankings }
    }

    /// Most preferred item of `agent` among those with `available[j]`.
    pub fn best_available(&self, agent: usize, available: &[bool]) -> Option<usize> {
        self.rankings[agent].iter().copied().find(|&j| available[j])
    }
}

pub const RSD_MAX_AGENTS: usize = 8;

fn require_unit(market: &Market) -> Result<()> {
    if market.has_unit_capacities() { Ok(()) } else { Err(Error::NonUnitCapacities) }
}

/// Lexicographic successor of `perm`, or `false` after the last one.
fn next_permutation(perm: &mut [usize]) -> bool {
    let Some(i) = (1..perm.len()).rev().find(|&i| perm[i - 1] < perm[i]) else { return false };
    let j = (i..perm.len()).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Random serial dictatorship, averaged exactly over all `n!` serving orders.
pub fn rsd_interim(market: &Market) -> Result<Vec<Vec<Q>>> {
    rsd_interim_with(market, ExecPolicy::Auto)
}

pub fn rsd_interim_with(market: &Market, policy: ExecPolicy) -> Result<Vec<Vec<Q>>> {
    require_unit(market)?;
    let (n, m) = (market.n(), market.m());
    if n > RSD_MAX_AGENTS {
        return Err(Error::TooManyAgents { n, limit: RSD_MAX_AGENTS });
    }
    let prof = OrdinalProfile::from_market(market);
    // split by first agent served; each block counts (n-1)! orders
    let blocks = par::map_range(policy, n, |first| {
        let mut counts = vec![vec![0u64; m]; n];
        let mut rest: Vec<usize> = (0..n).filter(|&a| a != first).collect();
        loop {
            let mut avail = vec![true; m];
            for &a in std::iter::once(&first).chain(rest.iter()) {
                if let Some(j) = prof.best_available(a, &avail) {
                    avail[j] = false;
                    counts[a][j] += 1;
                }
            }
            if !next_permutation(&mut rest) {
                break;
            }
        }
        counts
    });
    let total: u64 = (1..=n as u64).product();
    let mut out = vec![vec![Q::zero(); m]; n];
    for c in blocks {
        for i in 0..n {
            for j in 0..m {
                out[i][j] += Q::new(c[i][j].into(), 1u64.into());
            }
        }
    }
    let t = qi(total as i64);
    for row in &mut out {
        for v in row.iter_mut() {
            *v /= &t;
        }
    }
    Ok(out)
}

/// Probabilistic serial: every agent eats its best remaining item at unit
/// speed; breakpoints are computed exactly.
pub fn ps_interim(market: &Market) -> Result<Vec<Vec<Q>>> {
    require_unit(market)?;
    let (n, m) = (market.n(), market.m());
    let prof = OrdinalProfile::from_market(market);
    let mut left: Vec<Q> = market.capacities().to_vec();
    let mut out = vec![vec![Q::zero(); m]; n];
    let mut clock = Q::zero();
    while clock < Q::one() {
        let avail: Vec<bool> = left.iter().map(|c| c.is_positive()).collect();
        let target: Vec<Option<usize>> = (0..n).map(|i| prof.best_available(i, &avail)).collect();
        let mut eaters = vec![0i64; m];
        for j in target.iter().flatten() {
            eaters[*j] += 1;
        }
        let mut step = Q::one() - &clock;
        for j in 0..m {
            if eaters[j] > 0 {
                step = step.min(&left[j] / qi(eaters[j]));
            }
        }
        if step.is_zero() || target.iter().all(Option::is_none) {
            break;
        }
        for (i, t) in target.iter().enumerate() {
            if let Some(j) = *t {
                out[i][j] += &step;
                left[j] -= &step;
            }
        }
        clock += step;
    }
    Ok(out)
}

/// Four agents and items with only the top two ranked by the source example:
/// agents 0 and 2 prefer item 0 then 1, agents 1 and 3 prefer 1 then 0. The
/// rest is ranked by index.
pub fn rsd_four_agent_example() -> Market {
    Market::from_ints(&[&[4, 3, 2, 1], &[3, 4, 2, 1], &[4, 3, 2, 1], &[3, 4, 2, 1]], &[1, 1, 1, 1]).unwrap()
}

/// Three agents over three unit items: `[[1, e, 0], [1, 1 - e, 0], [1, 1 - e, 0]]`.
pub fn epsilon_example(eps: &Q) -> Market {
    let one = Q::one();
    let rest = &one - eps;
    let row = |b: &Q| vec![one.clone(), b.clone(), Q::zero()];
    Market::new(vec![row(eps), row(&rest), row(&rest)], vec![one.clone(), one.clone(), one.clone()]).unwrap()
}

/// Output of a numeric oracle. All numbers are dyadic rationals; residual and
/// gaps are reported as found.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApproxEquilibrium {
    #[serde(with = "serde_qvec")]
    pub prices: Vec<Q>,
    #[serde(with = "serde_qmat")]
    pub allocation: Vec<Vec<Q>>,
    #[serde(with = "serde_qvec")]
    pub utilities: Vec<Q>,
    #[serde(with = "crate::rational::serde_q")]
    pub residual: Q,
    #[serde(with = "serde_qvec")]
    pub gaps: Vec<Q>,
}

const ORACLE_BITS: u32 = 40;

/// Best vertex of `{p.x <= 1, sum x (=|<=) 1, x >= 0}` for values `v`. The
/// vertices are single items (bought whole or up to the budget) and pairs
/// straddling price 1 with both constraints tight.
fn best_vertex(v: &[f64], p: &[f64], matching: bool) -> Option<(f64, Vec<f64>)> {
    let m = v.len();
    let mut best: Option<(f64, Vec<f64>)> = if matching { None } else { Some((0.0, vec![0.0; m])) };
    let mut offer = |val: f64, x: Vec<f64>| {
        if best.as_ref().map_or(true, |(b, _)| val > b + 1e-12) {
            best = Some((val, x));
        }
    };
    for j in 0..m {
        let amount = if p[j] <= 1.0 { 1.0 } else if matching { continue } else { 1.0 / p[j] };
        let mut x = vec![0.0; m];
        x[j] = amount;
        offer(v[j] * amount, x);
    }
    for j in 0..m {
        for k in 0..m {
            if p[j] < 1.0 && p[k] > 1.0 {
                let d = p[k] - p[j];
                let (xj, xk) = ((p[k] - 1.0) / d, (1.0 - p[j]) / d);
                let mut x = vec![0.0; m];
                x[j] = xj;
                x[k] = xk;
                offer(v[j] * xj + v[k] * xk, x);
            }
        }
    }
    best
}

fn values_f64(market: &Market) -> Vec<Vec<f64>> {
    market.values().iter().map(|r| r.iter().map(crate::rational::to_f64).collect()).collect()
}

/// Optimum of the market maker's program `max sum_j (d_j - C_j) p_j` subject
/// to `sum_j C_j p_j <= n`, `p >= 0`. The feasible set is a simplex, so the
/// optimum sits at a vertex `n / C_j e_j` or at the origin.
pub fn market_maker_value(market: &Market, demand: &[Q]) -> Q {
    let n = qi(market.n() as i64);
    (0..market.m())
        .map(|j| (&demand[j] - market.capacity(j)) * &n / market.capacity(j))
        .fold(Q::zero(), |a, b| a.max(b))
}

/// Rounds a numeric point to dyadics and measures it exactly: residual is
/// the largest of the row, column, budget and market-maker violations; gaps
/// are each agent's shortfall against its best unit bundle.
pub fn measure_point(market: &Market, p: &[f64], x: &[Vec<f64>]) -> Result<ApproxEquilibrium> {
    use crate::demand::{demand_lp, Form};
    use crate::rational::{from_f64, round_dyadic};
    let (n, m) = (market.n(), market.m());
    let dy = |v: f64| round_dyadic(&from_f64(v), ORACLE_BITS);
    let prices: Vec<Q> = p.iter().map(|&v| dy(v.max(0.0))).collect();
    let allocation: Vec<Vec<Q>> = x.iter().map(|r| r.iter().map(|&v| dy(v.max(0.0))).collect()).collect();
    let mut residual = Q::zero();
    let mut bump = |r: Q| {
        if r > residual {
            residual = r;
        }
    };
    let demand: Vec<Q> = (0..m).map(|j| (0..n).map(|i| allocation[i][j].clone()).sum()).collect();
    for j in 0..m {
        bump((&demand[j] - market.capacity(j)).abs());
    }
    bump(market_maker_value(market, &demand));
    let mut utilities = Vec::with_capacity(n);
    let mut gaps = Vec::with_capacity(n);
    for i in 0..n {
        let row: Q = allocation[i].iter().sum();
        bump((row - Q::one()).abs());
        let spend: Q = allocation[i].iter().zip(&prices).map(|(a, b)| a * b).sum();
        bump(spend - Q::one());
        let u = crate::market::exact_row_value(&market.values()[i], &allocation[i]);
        let gap = match demand_lp(market, i, &prices, Form::Matching) {
            Ok(d) => (&d.utility - &u).max(Q::zero()),
            Err(Error::InfeasibleDemand { .. }) => market.max_value(i).clone(),
            Err(e) => return Err(e),
        };
        utilities.push(u);
        gaps.push(gap);
    }
    Ok(ApproxEquilibrium { prices, allocation, utilities, residual, gaps })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameOptions {
    pub eta: f64,
    pub rounds: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Stop a run once its residual falls below this.
    pub tolerance: f64,
    pub policy: ExecPolicy,
}

impl Default for GameOptions {
    fn default() -> Self {
        GameOptions { eta: 0.125, rounds: 10_000, restarts: 8, seed: 0, tolerance: 2f64.powi(-30), policy: ExecPolicy::Auto }
    }
}

struct Run {
    residual: f64,
    prices: Vec<f64>,
    allocation: Vec<Vec<f64>>,
}

fn respond(v: &[Vec<f64>], p: &[f64]) -> Vec<Vec<f64>> {
    v.iter().map(|vi| best_vertex(vi, p, false).map(|(_, x)| x).unwrap_or_else(|| vec![0.0; p.len()])).collect()
}

/// Tops up short rows with unsold zero-priced items, which every agent
/// accepts at no cost.
fn complete_rows(cap: &[f64], p: &[f64], x: &mut [Vec<f64>]) {
    for j in (0..cap.len()).filter(|&j| p[j] <= 0.0) {
        let mut left = cap[j] - x.iter().map(|r| r[j]).sum::<f64>();
        for row in x.iter_mut() {
            let short = 1.0 - row.iter().sum::<f64>();
            let add = short.min(left).max(0.0);
            row[j] += add;
            left -= add;
        }
    }
}

/// Worst of the clearing violations (unsold positively priced stock, excess
/// demand), row shortfalls, and the market maker's optimum.
fn clearing_residual(n: usize, cap: &[f64], p: &[f64], x: &[Vec<f64>]) -> f64 {
    let mut r: f64 = 0.0;
    for j in 0..cap.len() {
        let d: f64 = x.iter().map(|row| row[j]).sum();
        let excess = d - cap[j];
        r = r.max(if p[j] > 0.0 { excess.abs() } else { excess.max(0.0) });
        r = r.max(excess * n as f64 / cap[j]);
    }
    for row in x {
        r = r.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    r
}

const WINDOW: usize = 32;

fn run_game(v: &[Vec<f64>], cap: &[f64], start: Vec<f64>, opts: &GameOptions) -> Run {
    let (n, m) = (v.len(), cap.len());
    let mut p = start;
    let mut avg = respond(v, &p);
    let score = |p: &[f64], x: &[Vec<f64>]| {
        let mut y = x.to_vec();
        complete_rows(cap, p, &mut y);
        (clearing_residual(n, cap, p, &y), y)
    };
    let (r0, y0) = score(&p, &avg);
    let mut best = Run { residual: r0, prices: p.clone(), allocation: y0 };
    let mut eta = opts.eta;
    let (mut window, mut last_window) = (0.0, f64::INFINITY);
    for t in 0..opts.rounds {
        if best.residual < opts.tolerance {
            break;
        }
        let x = respond(v, &p);
        // responses are averaged over a sliding horizon; prices follow the
        // current excess demand
        let w = 1.0 / (t % WINDOW + 1) as f64;
        for (a, b) in avg.iter_mut().zip(&x) {
            for j in 0..m {
                a[j] += w * (b[j] - a[j]);
            }
        }
        let (r, y) = score(&p, &avg);
        if r < best.residual {
            best = Run { residual: r, prices: p.clone(), allocation: y };
        }
        for j in 0..m {
            let d: f64 = x.iter().map(|row| row[j]).sum();
            p[j] = (p[j] + eta * (d - cap[j])).max(0.0);
        }
        window += r;
        if (t + 1) % WINDOW == 0 {
            if window >= last_window {
                eta = (eta / 2.0).max(1e-12);
            }
            last_window = window;
            window = 0.0;
        }
    }
    // rescale onto sum_j C_j p_j = n when that does not hurt
    let spend: f64 = p_dot(cap, &best.prices);
    if spend > 0.0 {
        let s = n as f64 / spend;
        let q: Vec<f64> = best.prices.iter().map(|&a| a * s).collect();
        let (rq, y) = score(&q, &respond(v, &q));
        if rq <= best.residual {
            best = Run { residual: rq, prices: q, allocation: y };
        }
    }
    best
}

fn p_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Damped price adjustment on the market game: agents best-respond with the
/// relaxed demand program, prices move by `eta (demand - C)` and are clipped
/// at zero, and the market maker's program scores each round. Run 0 starts
/// from the uniform point `1 / (n sum C)`; the others from seeded random
/// prices. The best point found is returned together with its residuals.
pub fn game_oracle(market: &Market, opts: &GameOptions) -> Result<ApproxEquilibrium> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    let v = values_f64(market);
    let cap: Vec<f64> = market.capacities().iter().map(crate::rational::to_f64).collect();
    let (n, m) = (market.n(), market.m());
    let eps = 1.0 / (n as f64 * cap.iter().sum::<f64>());
    let hi = n as f64 / cap.iter().cloned().fold(f64::INFINITY, f64::min);
    let starts: Vec<Vec<f64>> = (0..opts.restarts.max(1))
        .map(|k| {
            if k == 0 {
                vec![eps; m]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
                (0..m).map(|_| rng.gen_range(0.0..hi)).collect()
            }
        })
        .collect();
    let runs = par::map(opts.policy, starts, |s| run_game(&v, &cap, s, opts));
    // first run with the smallest residual
    let best = runs.into_iter().reduce(|a, b| if b.residual < a.residual { b } else { a }).unwrap();
    measure_point(market, &best.prices, &best.allocation)
}

pub const GRID_MAX_ITEMS: usize = 2;

/// Smallest `t` such that some unit-row allocation spends at most `1 + t`,
/// reaches each agent's best value within `t`, and clears every item within
/// `t`. `None` when some agent has no affordable unit bundle.
fn grid_point(v: &[Vec<f64>], cap: &[f64], p: &[f64]) -> Option<(f64, Vec<Vec<f64>>)> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let (n, m) = (v.len(), p.len());
    let opt: Vec<f64> = v.iter().map(|vi| best_vertex(vi, p, true).map(|b| b.0)).collect::<Option<_>>()?;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let t = lp.add_var(1.0, (0.0, f64::INFINITY));
    let x: Vec<Vec<_>> = (0..n).map(|_| (0..m).map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect()).collect();
    for i in 0..n {
        lp.add_constraint(x[i].iter().map(|&a| (a, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
        let mut spend: Vec<_> = (0..m).map(|j| (x[i][j], p[j])).collect();
        spend.push((t, -1.0));
        lp.add_constraint(spend, ComparisonOp::Le, 1.0);
        let mut value: Vec<_> = (0..m).map(|j| (x[i][j], v[i][j])).collect();
        value.push((t, 1.0));
        lp.add_constraint(value, ComparisonOp::Ge, opt[i]);
    }
    for j in 0..m {
        let col: Vec<_> = (0..n).map(|i| (x[i][j], 1.0)).collect();
        let mut up = col.clone();
        up.push((t, -1.0));
        lp.add_constraint(up, ComparisonOp::Le, cap[j]);
        let mut down = col;
        down.push((t, 1.0));
        lp.add_constraint(down, ComparisonOp::Ge, cap[j]);
    }
    let sol = lp.solve().ok()?;
    let alloc = x.iter().map(|r| r.iter().map(|&a| *sol.var_value(a)).collect()).collect();
    Some((sol.objective(), alloc))
}

/// Exhaustive scan of the price box `[0, n / min C]^m` at step `2^-r`
/// (`m <= 2`). Returns every grid point whose residual is at most `2^-r`,
/// in row-major order of the grid.
pub fn grid_oracle(market: &Market, r: u32) -> Result<Vec<ApproxEquilibrium>> {
    grid_oracle_with(market, r, ExecPolicy::Auto)
}

pub fn grid_oracle_with(market: &Market, r: u32, policy: ExecPolicy) -> Result<Vec<ApproxEquilibrium>> {
    let m = market.m();
    if m > GRID_MAX_ITEMS {
        return Err(Error::TooManyItems { m, limit: GRID_MAX_ITEMS });
    }
    let v = values_f64(market);
    let cap: Vec<f64> = market.capacities().iter().map(crate::rational::to_f64).collect();
    let step = 2f64.powi(-(r as i32));
    let hi = market.n() as f64 / cap.iter().cloned().fold(f64::INFINITY, f64::min);
    let ticks = (hi / step).floor() as usize + 1;
    let total = ticks.pow(m as u32);
    let tol = step + 1e-9;
    let hits = par::map_range(policy, total, |k| {
        let p: Vec<f64> = (0..m).map(|d| ((k / ticks.pow((m - 1 - d) as u32)) % ticks) as f64 * step).collect();
        match grid_point(&v, &cap, &p) {
            Some((t, x)) if t <= tol => Some((p, x)),
            _ => None,
        }
    });
    hits.into_iter().flatten().map(|(p, x)| measure_point(market, &p, &x)).collect()
}

/// Groups grid points into clusters of neighbours (Chebyshev distance at
/// most `2^-r`). Clusters are listed by first member.
pub fn grid_clusters(points: &[ApproxEquilibrium], r: u32) -> Vec<Vec<usize>> {
    let step = crate::rational::two_pow_neg(r);
    let near = |a: &ApproxEquilibrium, b: &ApproxEquilibrium| a.prices.iter().zip(&b.prices).all(|(x, y)| (x - y).abs() <= step);
    let mut label = vec![usize::MAX; points.len()];
    let mut clusters = Vec::new();
    for s in 0..points.len() {
        if label[s] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![s];
        label[s] = id;
        let mut head = 0;
        while head < members.len() {
            let a = members[head];
            head += 1;
            for b in 0..points.len() {
                if label[b] == usize::MAX && near(&points[a], &points[b]) {
                    label[b] = id;
                    members.push(b);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters
}

/// Turns an oracle point into a checked certificate. First tries simple
/// rationals near the prices with an exact clearing allocation; failing that,
/// solves the support system (rows, columns, supporting lines `v = a p + b`,
/// budgets) with the polynomial solver and checks the result to `2^-eps_bits`.
pub fn polish(market: &Market, approx: &ApproxEquilibrium, eps_bits: u32) -> Result<EquilibriumCertificate> {
    use crate::numerics::simplest_near;
    use crate::rational::to_f64;
    let pf: Vec<f64> = approx.prices.iter().map(to_f64).collect();
    for k in 3..=12 {
        let tol = 10f64.powi(-k);
        let p: Vec<Q> = pf.iter().map(|&v| simplest_near(v, tol)).collect();
        if let Some(x) = clearing_allocation(market, &p)? {
            let cert = verify_exact(market, &p, &x)?;
            if cert.equilibrium {
                return Ok(cert);
            }
        }
    }
    // the free direction may be pinned off the end of the price ray, so the
    // normalized point is tried too
    let mut starts = vec![approx.clone()];
    starts.extend(crate::market::ray_normalize(&approx.prices).map(|p| ApproxEquilibrium { prices: p, ..approx.clone() }));
    for a in &starts {
        for slack_below in [None, Some(0.9)] {
            if let Ok(c) = polish_system(market, a, eps_bits, slack_below) {
                return Ok(c);
            }
        }
    }
    Err(Error::NoSolutionFound)
}

/// With `slack_below = Some(s)`, agents spending less than `s` at the seed
/// get a flat supporting line instead of an exhausted budget.
fn polish_system(market: &Market, approx: &ApproxEquilibrium, eps_bits: u32, slack_below: Option<f64>) -> Result<EquilibriumCertificate> {
    use crate::demand::{demand_lp, Form};
    use crate::numerics::{solve_poly_system, Poly, PolySystem, SolveMode};
    use crate::rational::to_f64;
    let (n, m) = (market.n(), market.m());
    let cut = 1e-6;
    let support: Vec<Vec<usize>> =
        (0..n).map(|i| (0..m).filter(|&j| to_f64(&approx.allocation[i][j]) > cut).collect()).collect();
    // variables: p_j, then (a_i, b_i), then x over the support
    let a_var = |i: usize| m + 2 * i;
    let b_var = |i: usize| m + 2 * i + 1;
    let mut x_var = vec![vec![None; m]; n];
    let mut nv = m + 2 * n;
    for i in 0..n {
        for &j in &support[i] {
            x_var[i][j] = Some(nv);
            nv += 1;
        }
    }
    let var = |k: usize| Poly::var(nv, k);
    let cst = |c: Q| Poly::constant(nv, c);
    let mut sys = PolySystem::new(nv);
    let mut seed = vec![0.0; nv];
    for j in 0..m {
        seed[j] = to_f64(&approx.prices[j]);
        sys.add_ge(var(j));
        let col: Vec<(usize, Q)> = (0..n).filter_map(|i| x_var[i][j].map(|k| (k, Q::one()))).collect();
        sys.add_eq(Poly::affine(nv, &col, -market.capacity(j).clone()));
    }
    for i in 0..n {
        let d = demand_lp(market, i, &approx.prices, Form::Matching)?;
        seed[a_var(i)] = to_f64(&d.alpha);
        seed[b_var(i)] = to_f64(&d.beta);
        sys.add_ge(var(a_var(i)));
        let row: Vec<(usize, Q)> = support[i].iter().map(|&j| (x_var[i][j].unwrap(), Q::one())).collect();
        sys.add_eq(Poly::affine(nv, &row, -Q::one()));
        let mut spend = cst(-Q::one());
        for j in 0..m {
            let line = &(&var(a_var(i)) * &var(j)) + &(&var(b_var(i)) - &cst(market.value(i, j).clone()));
            match x_var[i][j] {
                Some(k) => {
                    seed[k] = to_f64(&approx.allocation[i][j]);
                    sys.add_ge(var(k));
                    sys.add_eq(line);
                    spend = &spend + &(&var(k) * &var(j));
                }
                None => sys.add_ge(line),
            }
        }
        let spent: f64 = support[i].iter().map(|&j| to_f64(&approx.allocation[i][j]) * seed[j]).sum();
        if slack_below.map_or(true, |s| spent >= s) {
            sys.add_eq(spend);
        } else {
            sys.add_eq(var(a_var(i)));
        }
    }
    let sols = solve_poly_system(&sys, &seed, SolveMode::Certify { eps_bits })?;
    for s in sols {
        let prices: Vec<Scalar> = s[..m].to_vec();
        let x: Vec<Vec<Scalar>> = (0..n)
            .map(|i| (0..m).map(|j| x_var[i][j].map_or_else(Scalar::zero, |k| s[k].clone())).collect())
            .collect();
        let cert = verify_equilibrium(market, &prices, &x, VerifyMode::Certified { eps_bits })?;
        if cert.equilibrium {
            return Ok(cert);
        }
    }
    Err(Error::NoSolutionFound)
}

/// One mechanism's interim allocation with its audits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    pub mechanism: String,
    #[serde(with = "serde_qmat")]
    pub allocation: Vec<Vec<Q>>,
    #[serde(with = "serde_qvec")]
    pub utilities: Vec<Q>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prices: Option<Vec<Scalar>>,
    pub pareto_efficient: bool,
    #[serde(skip_serializing_if = "Option::is_none", default, with = "opt_qmat")]
    pub dominating_allocation: Option<Vec<Vec<Q>>>,
    pub envy_free: bool,
}

mod opt_qmat {
    use super::{serde_qmat, Q};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct W(#[serde(with = "serde_qmat")] Vec<Vec<Q>>);

    pub fn serialize<S: Serializer>(v: &Option<Vec<Vec<Q>>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|m| W(m.clone())).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Vec<Q>>>, D::Error> {
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MechanismReport {
    pub rsd: MechanismOutcome,
    pub ps: MechanismOutcome,
    pub equilibrium: MechanismOutcome,
}

impl MechanismReport {
    pub fn outcomes(&self) -> [&MechanismOutcome; 3] {
        [&self.rsd, &self.ps, &self.equilibrium]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct ReportOptions {
    pub oracle: GameOptions,
    pub eps_bits: u32,
    pub policy: ExecPolicy,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { oracle: GameOptions::default(), eps_bits: 64, policy: ExecPolicy::Auto }
    }
}

fn outcome(market: &Market, mechanism: &str, x: Vec<Vec<Q>>, prices: Option<Vec<Scalar>>) -> MechanismOutcome {
    let utilities = (0..market.n()).map(|i| exact_row_value(&market.values()[i], &x[i])).collect();
    let dominating_allocation = match check_pareto_efficient(market, &x) {
        ParetoVerdict::Efficient => None,
        ParetoVerdict::Dominated { witness } => Some(witness),
    };
    MechanismOutcome {
        mechanism: mechanism.to_string(),
        utilities,
        prices,
        pareto_efficient: dominating_allocation.is_none(),
        dominating_allocation,
        envy_free: check_envy_free(market, &x) == EnvyVerdict::EnvyFree,
        allocation: x,
    }
}

/// RSD, PS and a market equilibrium side by side. The equilibrium comes from
/// the fixed-goods solver when `m <= 4`, otherwise from the fixed-agents one;
/// the first exact certificate is reported.
pub fn mechanism_report(market: &Market, opts: &ReportOptions) -> Result<MechanismReport> {
    let rsd = outcome(market, "rsd", rsd_interim_with(market, opts.policy)?, None);
    let ps = outcome(market, "ps", ps_interim(market)?, None);
    let certs = if market.m() <= crate::solver_goods::MAX_GOODS {
        let o = crate::solver_goods::GoodsOptions { oracle: opts.oracle.clone(), eps_bits: opts.eps_bits, policy: opts.policy, ..Default::default() };
        crate::solver_goods::solve_fixed_goods(market, &o)?
    } else {
        let o = crate::solver_agents::AgentsOptions { oracle: opts.oracle.clone(), eps_bits: opts.eps_bits, policy: opts.policy, ..Default::default() };
        crate::solver_agents::solve_fixed_agents(market, &o)?
    };
    let (p, x) = certs
        .iter()
        .find_map(exact_parts)
        .ok_or_else(|| Error::IncompleteSearch("no equilibrium with exact prices for the report".into()))?;
    let equilibrium = outcome(market, "equilibrium", x, Some(p.into_iter().map(Scalar::Exact).collect()));
    Ok(MechanismReport { rsd, ps, equilibrium })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, two_pow_neg};

    fn unit(values: &[&[i64]]) -> Market {
        Market::from_ints(values, &vec![1; values.len()]).unwrap()
    }

    fn third_rows(n: usize) -> Vec<Vec<Q>> {
        vec![vec![q(1, 3); 3]; n]
    }

    #[test]
    fn rsd_four_agent_example_mixes_top_items() {
        let x = rsd_interim(&rsd_four_agent_example()).unwrap();
        assert!(x[0][1].is_positive() && x[1][0].is_positive());
        for i in 0..4 {
            assert_eq!(x[i].iter().sum::<Q>(), Q::one());
            assert_eq!((0..4).map(|k| x[k][i].clone()).sum::<Q>(), Q::one());
        }
    }

    #[test]
    fn rsd_epsilon_example_is_uniform() {
        assert_eq!(rsd_interim(&epsilon_example(&q(1, 4))).unwrap(), third_rows(3));
    }

    #[test]
    fn rsd_single_agent_takes_top() {
        let m = Market::from_ints(&[&[5]], &[1]).unwrap();
        assert_eq!(rsd_interim(&m).unwrap(), vec![vec![Q::one()]]);
    }

    #[test]
    fn rsd_preconditions() {
        let m = Market::from_ints(&[&[1, 2], &[2, 1]], &[2, 0]);
        if let Ok(m) = m {
            assert_eq!(rsd_interim(&m), Err(Error::NonUnitCapacities));
        }
        let nine: Vec<Vec<i64>> = (0..9).map(|i| (0..9).map(|j| ((i + j) % 9) as i64).collect()).collect();
        let rows: Vec<&[i64]> = nine.iter().map(|r| r.as_slice()).collect();
        assert_eq!(rsd_interim(&unit(&rows)), Err(Error::TooManyAgents { n: 9, limit: 8 }));
    }

    #[test]
    fn rsd_policies_agree() {
        let m = rsd_four_agent_example();
        assert_eq!(rsd_interim_with(&m, ExecPolicy::Sequential).unwrap(), rsd_interim_with(&m, ExecPolicy::Auto).unwrap());
    }

    #[test]
    fn ps_examples() {
        assert_eq!(ps_interim(&unit(&[&[3, 2, 1], &[3, 2, 1], &[3, 2, 1]])).unwrap(), third_rows(3));
        let x = ps_interim(&unit(&[&[2, 1], &[2, 1]])).unwrap();
        assert_eq!(x, vec![vec![q(1, 2), q(1, 2)]; 2]);
        let d = unit(&[&[2, 1], &[1, 2]]);
        assert_eq!(ps_interim(&d).unwrap(), vec![vec![Q::one(), Q::zero()], vec![Q::zero(), Q::one()]]);
        assert_eq!(ps_interim(&d).unwrap(), rsd_interim(&d).unwrap());
    }

    #[test]
    fn game_finds_unit_prices_for_the_simple_market() {
        let m = Market::from_ints(&[&[2, 1], &[0, 1]], &[1, 1]).unwrap();
        let a = game_oracle(&m, &GameOptions::default()).unwrap();
        assert!(a.residual < two_pow_neg(10), "residual {}", a.residual);
        for p in &a.prices {
            assert!((p - Q::one()).abs() < q(1, 64), "prices {:?}", a.prices);
        }
    }

    #[test]
    fn game_single_agent_single_item() {
        let m = Market::from_ints(&[&[3]], &[1]).unwrap();
        let a = game_oracle(&m, &GameOptions::default()).unwrap();
        assert!(a.residual.is_zero());
        assert_eq!(a.prices, vec![Q::one()]);
    }

    #[test]
    fn game_lands_on_the_identical_agents_family() {
        let m = Market::from_ints(&[&[1, 2], &[1, 2]], &[1, 1]).unwrap();
        let a = game_oracle(&m, &GameOptions::default()).unwrap();
        assert!(a.residual < two_pow_neg(10), "residual {}", a.residual);
        assert!((&a.prices[0] + &a.prices[1] - qi(2)).abs() < q(1, 256), "prices {:?}", a.prices);
        assert!(a.prices.iter().all(|p| !p.is_negative()));
    }

    #[test]
    fn grid_recovers_unit_prices() {
        let m = Market::from_ints(&[&[2, 1], &[0, 1]], &[1, 1]).unwrap();
        let pts = grid_oracle(&m, 3).unwrap();
        let at = pts.iter().position(|a| a.prices == vec![Q::one(), Q::one()]).expect("(1,1) on the grid");
        assert!(grid_clusters(&pts, 3).iter().any(|c| c.contains(&at)));
        // both prices well above one leave no affordable unit bundle
        assert!(pts.iter().all(|a| !(a.prices[0] > q(9, 8) && a.prices[1] > q(9, 8))));
    }

    #[test]
    fn grid_recovers_the_family_line() {
        let m = Market::from_ints(&[&[1, 2], &[1, 2]], &[1, 1]).unwrap();
        let r = 4;
        let pts = grid_oracle(&m, r).unwrap();
        let step = two_pow_neg(r);
        let mut c = Q::zero();
        while c < Q::one() {
            let p = vec![c.clone(), qi(2) - &c];
            assert!(pts.iter().any(|a| a.prices == p), "missing {:?}", p);
            c += &step;
        }
        // the tolerance band has width, but exact clearing happens only on the line
        for a in pts.iter().filter(|a| a.residual.is_zero() && a.gaps.iter().all(Q::is_zero)) {
            assert_eq!(&a.prices[0] + &a.prices[1], qi(2), "stray {:?}", a.prices);
            assert!(a.prices[0] < Q::one());
        }
        let clusters = grid_clusters(&pts, r);
        assert_eq!(clusters.len(), 1);
    }

    #[test]
    fn polished_oracle_points_verify() {
        let m = Market::from_ints(&[&[1, 2], &[1, 2]], &[1, 1]).unwrap();
        let a = game_oracle(&m, &GameOptions::default()).unwrap();
        let cert = polish(&m, &a, 16).unwrap();
        assert!(cert.equilibrium);
        let simple = Market::from_ints(&[&[2, 1], &[0, 1]], &[1, 1]).unwrap();
        for a in grid_oracle(&simple, 2).unwrap() {
            if a.residual < two_pow_neg(20) && a.gaps.iter().all(|g| g < &two_pow_neg(20)) {
                assert!(polish(&simple, &a, 16).unwrap().equilibrium);
            }
        }
    }

    #[test]
    fn polish_falls_back_to_the_support_system() {
        let m = Market::from_ints(&[&[1, 2], &[1, 2]], &[1, 1]).unwrap();
        let a = game_oracle(&m, &GameOptions::default()).unwrap();
        let cert = polish_system(&m, &a, 16, None).unwrap();
        assert!(cert.equilibrium);
    }

    #[test]
    fn grid_rejects_three_items() {
        let m = unit(&[&[1, 2, 3], &[1, 2, 3], &[3, 2, 1]]);
        assert_eq!(grid_oracle(&m, 2), Err(Error::TooManyItems { m: 3, limit: 2 }));
    }

    #[test]
    fn vertex_demand_matches_exact_program() {
        use crate::demand::{demand_lp, Form};
        use crate::rational::to_f64;
        let m = Market::from_ints(&[&[3, 1, 2, 0]], &[4]).unwrap_or_else(|_| Market::new(vec![vec![qi(3), qi(1), qi(2), qi(0)]], vec![q(1, 4); 4]).unwrap());
        for p in [[q(1, 2), q(3, 2), q(5, 4), q(1, 8)], [qi(2), qi(3), qi(5), qi(7)], [qi(1), qi(1), qi(1), qi(1)]] {
            let pf: Vec<f64> = p.iter().map(to_f64).collect();
            for (form, matching) in [(Form::Relaxed, false), (Form::Matching, true)] {
                let fast = best_vertex(&values_f64(&m)[0], &pf, matching).map(|b| b.0);
                let exact = demand_lp(&m, 0, &p, form).ok().map(|d| to_f64(&d.utility));
                match (fast, exact) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                    (a, b) => assert_eq!(a.is_some(), b.is_some()),
                }
            }
        }
    }

    #[test]
    fn report_epsilon_example() {
        let r = mechanism_report(&epsilon_example(&q(1, 4)), &ReportOptions::default()).unwrap();
        assert!(!r.rsd.pareto_efficient);
        assert!(r.equilibrium.pareto_efficient);
        assert!(r.equilibrium.envy_free);
        assert_eq!(MechanismReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn report_disjoint_tops() {
        let m = Market::from_ints(&[&[3, 1, 0], &[0, 4, 1], &[1, 0, 2]], &[1, 1, 1]).unwrap();
        let r = mechanism_report(&m, &ReportOptions::default()).unwrap();
        assert_eq!(r.rsd.allocation, r.ps.allocation);
        assert_eq!(r.rsd.allocation, r.equilibrium.allocation);
        assert!(r.outcomes().iter().all(|o| o.pareto_efficient && o.envy_free));
    }

    #[test]
    fn report_single_agent() {
        let m = Market::from_ints(&[&[5]], &[1]).unwrap();
        let r = mechanism_report(&m, &ReportOptions::default()).unwrap();
        assert!(r.outcomes().iter().all(|o| o.allocation == vec![vec![qi(1)]] && o.pareto_efficient));
    }
}

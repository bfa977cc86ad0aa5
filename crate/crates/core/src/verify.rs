//! Equilibrium checking: feasibility, clearing, budgets, optimality against
//! the matching-form demand program, plus efficiency and envy audits.

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::bundling::{build_bundles, decompose_allocation, optimum_bundles};
use crate::demand::{demand_lp, demand_program, Form};
use crate::error::{Error, Result};
use crate::market::{exact_matrix, exact_vec, row_value, Allocation, Market, PriceVector};
use crate::numerics::{lp_solve, LinearProgram, LpStatus, Relation};
use crate::rational::{format_rational, two_pow_neg, Q};
use crate::scalar::{Interval, Scalar, DEFAULT_EPS_BITS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerifyMode {
    Exact,
    Certified { eps_bits: u32 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub agent: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub item: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual: Option<Scalar>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub improving_allocation: Option<Vec<Scalar>>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquilibriumCertificate {
    pub prices: PriceVector,
    pub allocation: Allocation,
    pub utilities: Vec<Scalar>,
    pub mode: VerifyMode,
    pub verdicts: Vec<Verdict>,
    pub equilibrium: bool,
}

impl EquilibriumCertificate {
    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// A `(prices, allocation)` pair as read from a candidate file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub prices: PriceVector,
    pub allocation: Allocation,
}

impl Candidate {
    pub fn exact(prices: &[Q], allocation: &[Vec<Q>]) -> Self {
        Candidate {
            prices: prices.iter().cloned().map(Scalar::Exact).collect(),
            allocation: allocation.iter().map(|r| r.iter().cloned().map(Scalar::Exact).collect()).collect(),
        }
    }
}

pub const FEASIBILITY: &str = "feasibility";
pub const FULL_ALLOCATION: &str = "full_allocation";
pub const BUDGET: &str = "budget";
pub const OPTIMALITY: &str = "optimality";
pub const NONNEGATIVE_PRICES: &str = "nonnegative_prices";

/// Residual tests under a mode: exact comparisons, or `|r| < eps` style
/// acceptance with definite violations rejected and anything else surfaced
/// as an indeterminate sign.
struct Judge {
    eps: Option<Q>,
}

impl Judge {
    fn is_zero(&self, r: &Scalar) -> Result<bool> {
        match (&self.eps, r) {
            (None, Scalar::Exact(v)) => Ok(v.is_zero()),
            (Some(eps), _) => {
                let iv = r.interval();
                if iv.abs_max() < *eps {
                    Ok(true)
                } else if iv.lo >= *eps || iv.hi <= -eps.clone() {
                    Ok(false)
                } else {
                    Err(Error::IndeterminateSign(format!("residual {r} against tolerance {}", format_rational(eps))))
                }
            }
            (None, Scalar::Certified(_)) => unreachable!("certified inputs are judged with a tolerance"),
        }
    }

    /// `r <= 0`.
    fn nonpositive(&self, r: &Scalar) -> Result<bool> {
        match (&self.eps, r) {
            (None, Scalar::Exact(v)) => Ok(!v.is_positive()),
            (Some(eps), _) => {
                let iv = r.interval();
                if iv.hi < *eps {
                    Ok(true)
                } else if iv.lo >= *eps {
                    Ok(false)
                } else {
                    Err(Error::IndeterminateSign(format!("residual {r} against tolerance {}", format_rational(eps))))
                }
            }
            (None, Scalar::Certified(_)) => unreachable!("certified inputs are judged with a tolerance"),
        }
    }
}

fn check_dims(market: &Market, prices: &[Scalar], x: &[Vec<Scalar>]) -> Result<()> {
    if prices.len() != market.m() {
        return Err(Error::DimensionMismatch(format!("{} prices for m = {}", prices.len(), market.m())));
    }
    if x.len() != market.n() || x.iter().any(|r| r.len() != market.m()) {
        return Err(Error::DimensionMismatch(format!("allocation must be {} x {}", market.n(), market.m())));
    }
    Ok(())
}

fn sum(xs: impl Iterator<Item = Scalar>) -> Scalar {
    xs.fold(Scalar::zero(), |a, b| &a + &b)
}

fn fail(name: &str, w: Witness) -> Verdict {
    Verdict { name: name.into(), passed: false, witness: Some(w) }
}

fn pass(name: &str) -> Verdict {
    Verdict { name: name.into(), passed: true, witness: None }
}

/// Checks a candidate against the equilibrium definition. Inputs containing
/// intervals are judged in certified mode even when `Exact` is requested.
pub fn verify_equilibrium(market: &Market, prices: &[Scalar], x: &[Vec<Scalar>], mode: VerifyMode) -> Result<EquilibriumCertificate> {
    check_dims(market, prices, x)?;
    let all_exact = prices.iter().all(Scalar::is_exact) && x.iter().flatten().all(Scalar::is_exact);
    let mode = match mode {
        VerifyMode::Exact if !all_exact => VerifyMode::Certified { eps_bits: DEFAULT_EPS_BITS },
        m => m,
    };
    let judge = Judge {
        eps: match mode {
            VerifyMode::Exact => None,
            VerifyMode::Certified { eps_bits } => Some(two_pow_neg(eps_bits)),
        },
    };
    let n = market.n();
    let m = market.m();
    let one = Scalar::Exact(Q::one());
    let mut verdicts = Vec::new();

    // feasibility: nonnegative entries, unit rows, capacities respected
    let mut feas = pass(FEASIBILITY);
    'outer: for i in 0..n {
        for j in 0..m {
            if !judge.nonpositive(&-&x[i][j])? {
                feas = fail(FEASIBILITY, Witness { agent: Some(i), item: Some(j), residual: Some(x[i][j].clone()), note: "negative entry".into(), ..Default::default() });
                break 'outer;
            }
        }
        let r = &sum(x[i].iter().cloned()) - &one;
        if !judge.is_zero(&r)? {
            feas = fail(FEASIBILITY, Witness { agent: Some(i), residual: Some(r), note: "row does not sum to one unit".into(), ..Default::default() });
            break;
        }
    }
    let col: Vec<Scalar> = (0..m).map(|j| sum((0..n).map(|i| x[i][j].clone()))).collect();
    if feas.passed {
        for j in 0..m {
            let r = &col[j] - &Scalar::Exact(market.capacity(j).clone());
            if !judge.nonpositive(&r)? {
                feas = fail(FEASIBILITY, Witness { item: Some(j), residual: Some(r), note: "capacity exceeded".into(), ..Default::default() });
                break;
            }
        }
    }
    verdicts.push(feas);

    let mut full = pass(FULL_ALLOCATION);
    for j in 0..m {
        let r = &col[j] - &Scalar::Exact(market.capacity(j).clone());
        if !judge.is_zero(&r)? {
            full = fail(FULL_ALLOCATION, Witness { item: Some(j), residual: Some(r), note: "item not fully allocated".into(), ..Default::default() });
            break;
        }
    }
    verdicts.push(full);

    let mut budget = pass(BUDGET);
    for i in 0..n {
        let spend = sum(x[i].iter().zip(prices).map(|(a, p)| a * p));
        let r = &spend - &one;
        if !judge.nonpositive(&r)? {
            budget = fail(BUDGET, Witness { agent: Some(i), residual: Some(r), note: "spend exceeds the unit budget".into(), ..Default::default() });
            break;
        }
    }
    verdicts.push(budget);

    let utilities: Vec<Scalar> = (0..n).map(|i| row_value(&market.values()[i], &x[i])).collect::<Result<_>>()?;
    let mut opt = pass(OPTIMALITY);
    for i in 0..n {
        if let Some(w) = optimality_witness(market, i, prices, &utilities[i], &judge)? {
            opt = fail(OPTIMALITY, w);
            break;
        }
    }
    verdicts.push(opt);

    let mut nonneg = pass(NONNEGATIVE_PRICES);
    for (j, p) in prices.iter().enumerate() {
        if !judge.nonpositive(&-p)? {
            nonneg = fail(NONNEGATIVE_PRICES, Witness { item: Some(j), residual: Some(p.clone()), note: "negative price".into(), ..Default::default() });
            break;
        }
    }
    verdicts.push(nonneg);

    let equilibrium = verdicts.iter().all(|v| v.passed);
    Ok(EquilibriumCertificate { prices: prices.to_vec(), allocation: x.to_vec(), utilities, mode, verdicts, equilibrium })
}

/// `None` when agent `i` cannot do better than `u` at these prices.
fn optimality_witness(market: &Market, i: usize, prices: &[Scalar], u: &Scalar, judge: &Judge) -> Result<Option<Witness>> {
    let values = &market.values()[i];
    if let (Some(p), Scalar::Exact(u)) = (exact_vec(prices), u) {
        if judge.eps.is_none() {
            return Ok(match demand_lp(market, i, &p, Form::Matching) {
                Err(Error::InfeasibleDemand { .. }) => Some(Witness { agent: Some(i), note: "no affordable unit bundle exists".into(), ..Default::default() }),
                Err(e) => return Err(e),
                Ok(d) if d.utility == *u => None,
                Ok(d) => Some(Witness {
                    agent: Some(i),
                    residual: Some(Scalar::Exact(&d.utility - u)),
                    improving_allocation: Some(d.vertex_allocation.into_iter().map(Scalar::Exact).collect()),
                    note: format!("best affordable value is {}", format_rational(&d.utility)),
                    ..Default::default()
                }),
            });
        }
    }
    // certified: upper bound a + max_j (v_j - a p_j) with a from the midpoint program
    let mid: Vec<Q> = prices.iter().map(Scalar::midpoint).collect();
    let out = lp_solve(&demand_program(values, &mid, Form::Matching));
    if out.status != LpStatus::Optimal {
        return Ok(Some(Witness { agent: Some(i), note: "no affordable unit bundle at the midpoint prices".into(), ..Default::default() }));
    }
    let a = Scalar::Exact(out.duals[0].clone().max(Q::zero()));
    let mut best: Option<Interval> = None;
    for (v, p) in values.iter().zip(prices) {
        let t = (&Scalar::Exact(v.clone()) - &(&a * p)).interval();
        best = Some(match best {
            None => t,
            Some(b) => Interval { lo: b.lo.max(t.lo), hi: b.hi.max(t.hi) },
        });
    }
    let bound = &a + &Scalar::Certified(best.unwrap());
    let gap = &bound - u;
    if judge.nonpositive(&gap).unwrap_or(false) {
        return Ok(None);
    }
    // look for a definite improvement that is affordable up to the tolerance
    let xs: Vec<Scalar> = out.x.iter().cloned().map(Scalar::Exact).collect();
    let value = Scalar::Exact(out.value.clone());
    let improvement = &value - u;
    let cost = &sum(xs.iter().zip(prices).map(|(a, p)| a * p)) - &Scalar::Exact(Q::one());
    if !judge.nonpositive(&improvement).unwrap_or(true) && judge.nonpositive(&cost)? {
        return Ok(Some(Witness {
            agent: Some(i),
            residual: Some(improvement),
            improving_allocation: Some(xs),
            note: "an affordable bundle is worth more".into(),
            ..Default::default()
        }));
    }
    Err(Error::IndeterminateSign(format!("optimality of agent {i}: dual gap {gap}")))
}

pub fn verify_exact(market: &Market, prices: &[Q], x: &[Vec<Q>]) -> Result<EquilibriumCertificate> {
    let c = Candidate::exact(prices, x);
    verify_equilibrium(market, &c.prices, &c.allocation, VerifyMode::Exact)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParetoVerdict {
    Efficient,
    Dominated { witness: Vec<Vec<Q>> },
}

/// Maximizes total improvement over `x` among feasible allocations; zero
/// means no Pareto improvement exists.
pub fn check_pareto_efficient(market: &Market, x: &[Vec<Q>]) -> ParetoVerdict {
    let n = market.n();
    let m = market.m();
    let y = |i: usize, j: usize| i * m + j;
    let t = |i: usize| n * m + i;
    let nv = n * m + n;
    let mut c = vec![Q::zero(); nv];
    for i in 0..n {
        c[t(i)] = Q::one();
    }
    let mut lp = LinearProgram::new(nv).maximize(c);
    for i in 0..n {
        lp.add_sparse(&(0..m).map(|j| (y(i, j), Q::one())).collect::<Vec<_>>(), Relation::Eq, Q::one());
        let mut terms: Vec<(usize, Q)> = (0..m).map(|j| (y(i, j), market.value(i, j).clone())).collect();
        terms.push((t(i), -Q::one()));
        let base: Q = (0..m).map(|j| market.value(i, j) * &x[i][j]).sum();
        lp.add_sparse(&terms, Relation::Eq, base);
    }
    for j in 0..m {
        lp.add_sparse(&(0..n).map(|i| (y(i, j), Q::one())).collect::<Vec<_>>(), Relation::Le, market.capacity(j).clone());
    }
    let out = lp_solve(&lp);
    assert_eq!(out.status, LpStatus::Optimal, "x itself is feasible and the program is bounded");
    if out.value.is_zero() {
        ParetoVerdict::Efficient
    } else {
        ParetoVerdict::Dominated { witness: (0..n).map(|i| (0..m).map(|j| out.x[y(i, j)].clone()).collect()).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EnvyVerdict {
    EnvyFree,
    Envy { envious: usize, envied: usize, gain: Q },
}

pub fn check_envy_free(market: &Market, x: &[Vec<Q>]) -> EnvyVerdict {
    let n = market.n();
    for i in 0..n {
        let v = &market.values()[i];
        let own: Q = v.iter().zip(&x[i]).map(|(a, b)| a * b).sum();
        for k in 0..n {
            if k == i {
                continue;
            }
            let other: Q = v.iter().zip(&x[k]).map(|(a, b)| a * b).sum();
            if other > own {
                return EnvyVerdict::Envy { envious: i, envied: k, gain: other - own };
            }
        }
    }
    EnvyVerdict::EnvyFree
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Tri {
    True,
    False,
    Undefined,
}

/// The four per-structure conditions: items fully allocated, unit rows,
/// exact budget spend, and every held item drawn from optimum bundles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StructuralReport {
    pub items_fully_allocated: bool,
    pub unit_rows: bool,
    pub budgets_exactly_spent: bool,
    pub optimum_bundles_only: Tri,
    pub witness: Option<String>,
}

impl StructuralReport {
    pub fn all_hold(&self) -> bool {
        self.items_fully_allocated && self.unit_rows && self.budgets_exactly_spent && self.optimum_bundles_only == Tri::True
    }
}

pub fn check_structural_conditions(market: &Market, prices: &[Q], x: &[Vec<Q>]) -> Result<StructuralReport> {
    if let Some(j) = prices.iter().position(|p| p.is_negative()) {
        return Err(Error::PreconditionViolated(format!("price of item {j} is negative")));
    }
    let n = market.n();
    let m = market.m();
    let mut witness = None;
    let items_fully_allocated = (0..m).all(|j| {
        let ok = (0..n).map(|i| &x[i][j]).sum::<Q>() == *market.capacity(j);
        if !ok && witness.is_none() {
            witness = Some(format!("item {j} is not fully allocated"));
        }
        ok
    });
    let unit_rows = (0..n).all(|i| {
        let ok = x[i].iter().sum::<Q>() == Q::one();
        if !ok && witness.is_none() {
            witness = Some(format!("agent {i} does not hold one unit"));
        }
        ok
    });
    let spend: Vec<Q> = (0..n).map(|i| x[i].iter().zip(prices).map(|(a, p)| a * p).sum()).collect();
    let budgets_exactly_spent = (0..n).all(|i| {
        let ok = spend[i] == Q::one();
        if !ok && witness.is_none() {
            witness = Some(format!("agent {i} spends {}", format_rational(&spend[i])));
        }
        ok
    });
    let optimum_bundles_only = if !(unit_rows && budgets_exactly_spent) {
        Tri::Undefined
    } else {
        let bundles = build_bundles(prices);
        let mut ok = true;
        for i in 0..n {
            let y = decompose_allocation(prices, &x[i])?;
            let best = optimum_bundles(market, i, &bundles, None)?;
            if let Some(b) = (0..bundles.len()).find(|b| y[*b].is_positive() && !best.contains(b)) {
                ok = false;
                if witness.is_none() {
                    witness = Some(format!("agent {i} uses non-optimal bundle {:?}", bundles[b].kind));
                }
                break;
            }
        }
        if ok { Tri::True } else { Tri::False }
    };
    Ok(StructuralReport { items_fully_allocated, unit_rows, budgets_exactly_spent, optimum_bundles_only, witness })
}

/// Exact view of a certificate's prices and allocation, if it has one.
pub fn exact_parts(cert: &EquilibriumCertificate) -> Option<(Vec<Q>, Vec<Vec<Q>>)> {
    Some((exact_vec(&cert.prices)?, exact_matrix(&cert.allocation)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, qi};

    fn free_disposal() -> Market {
        Market::from_ints(&[&[2, 1], &[0, 1]], &[1, 1]).unwrap()
    }

    #[test]
    fn non_equilibrium_prices_from_the_free_disposal_example() {
        let m = free_disposal();
        let p = [q(1, 2), q(3, 2)];
        for x in [
            vec![vec![qi(1), qi(0)], vec![qi(0), qi(1)]],
            vec![vec![q(1, 2), q(1, 2)], vec![q(1, 2), q(1, 2)]],
            vec![vec![qi(0), qi(1)], vec![qi(1), qi(0)]],
        ] {
            let c = verify_exact(&m, &p, &x).unwrap();
            assert!(!c.equilibrium);
        }
    }

    #[test]
    fn identity_assignment_at_unit_prices() {
        let m = free_disposal();
        let c = verify_exact(&m, &[qi(1), qi(1)], &[vec![qi(1), qi(0)], vec![qi(0), qi(1)]]).unwrap();
        assert!(c.equilibrium, "{c:?}");
        assert_eq!(c.utilities, vec![Scalar::Exact(qi(2)), Scalar::Exact(qi(1))]);
        let back = EquilibriumCertificate::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn trivial_market() {
        let m = Market::from_ints(&[&[5]], &[1]).unwrap();
        assert!(verify_exact(&m, &[qi(1)], &[vec![qi(1)]]).unwrap().equilibrium);
    }

    #[test]
    fn failures_carry_witnesses() {
        let m = free_disposal();
        let c = verify_exact(&m, &[qi(1), qi(1)], &[vec![qi(0), qi(1)], vec![qi(1), qi(0)]]).unwrap();
        let v = c.verdict(OPTIMALITY).unwrap();
        assert!(!v.passed);
        let w = v.witness.as_ref().unwrap();
        assert_eq!(w.agent, Some(0));
        assert!(w.improving_allocation.is_some());
    }

    #[test]
    fn certified_mode_accepts_tight_boxes_and_rejects_wide_ones() {
        let m = free_disposal();
        let box_of = |v: Q, bits: u32| Scalar::Certified(Interval::new(&v - two_pow_neg(bits), &v + two_pow_neg(bits)));
        let p = vec![box_of(qi(1), 80), box_of(qi(1), 80)];
        let x = vec![vec![Scalar::Exact(qi(1)), Scalar::Exact(qi(0))], vec![Scalar::Exact(qi(0)), box_of(qi(1), 80)]];
        let c = verify_equilibrium(&m, &p, &x, VerifyMode::Certified { eps_bits: 64 }).unwrap();
        assert!(c.equilibrium);
        let wide = vec![Scalar::Certified(Interval::new(q(1, 2), q(3, 2))), Scalar::Exact(qi(1))];
        let r = verify_equilibrium(&m, &wide, &x, VerifyMode::Certified { eps_bits: 64 });
        assert!(matches!(r, Err(Error::IndeterminateSign(_))));
    }

    #[test]
    fn pareto_checks() {
        let one = Market::from_ints(&[&[3, 1]], &[1, 0]).unwrap();
        assert_eq!(check_pareto_efficient(&one, &[vec![qi(1), qi(0)]]), ParetoVerdict::Efficient);
        let m = free_disposal();
        let swapped = [vec![qi(0), qi(1)], vec![qi(1), qi(0)]];
        assert!(matches!(check_pareto_efficient(&m, &swapped), ParetoVerdict::Dominated { .. }));
    }

    #[test]
    fn envy_checks() {
        let m = Market::from_ints(&[&[2, 1], &[1, 2]], &[1, 1]).unwrap();
        let x = [vec![qi(0), qi(1)], vec![qi(1), qi(0)]];
        assert_eq!(check_envy_free(&m, &x), EnvyVerdict::Envy { envious: 0, envied: 1, gain: qi(1) });
        let twins = Market::from_ints(&[&[2, 1], &[2, 1]], &[1, 1]).unwrap();
        let sym = [vec![q(1, 2), q(1, 2)], vec![q(1, 2), q(1, 2)]];
        assert_eq!(check_envy_free(&twins, &sym), EnvyVerdict::EnvyFree);
    }

    #[test]
    fn structural_conditions() {
        let m = free_disposal();
        let ok = check_structural_conditions(&m, &[qi(1), qi(1)], &[vec![qi(1), qi(0)], vec![qi(0), qi(1)]]).unwrap();
        assert!(ok.all_hold());
        let half = check_structural_conditions(&m, &[qi(1), qi(1)], &[vec![q(1, 2), q(1, 2)], vec![q(1, 2), q(1, 2)]]).unwrap();
        assert_eq!(half.optimum_bundles_only, Tri::False);
        let cheap = check_structural_conditions(&m, &[q(1, 2), q(1, 2)], &[vec![qi(1), qi(0)], vec![qi(0), qi(1)]]).unwrap();
        assert!(!cheap.budgets_exactly_spent);
        assert_eq!(cheap.optimum_bundles_only, Tri::Undefined);
        assert!(cheap.witness.unwrap().contains("spends 1/2"));
    }
}

//! Single-agent demand: the budgeted LP in matching and relaxed form, the
//! dual closed form `min_a a + max+_j (v_j - a p_j)`, and two-item shares.

use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::Market;
use crate::numerics::{lp_solve, LinearProgram, LpStatus, Relation};
use crate::rational::Q;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Form {
    /// `sum_j x_j = 1`, the matching constraint.
    Matching,
    /// `sum_j x_j <= 1`.
    Relaxed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DemandResult {
    pub utility: Q,
    pub alpha: Q,
    pub beta: Q,
    pub demand_set: Vec<usize>,
    pub vertex_allocation: Vec<Q>,
}

fn check_prices(market: &Market, prices: &[Q]) -> Result<()> {
    if prices.len() != market.m() {
        return Err(Error::DimensionMismatch(format!("{} prices for m = {}", prices.len(), market.m())));
    }
    if let Some(j) = prices.iter().position(|p| p.is_negative()) {
        return Err(Error::NegativeValue(format!("p[{j}]")));
    }
    Ok(())
}

/// Builds the agent's program: maximize `v.x` s.t. `p.x <= 1`, `sum x (=|<=) 1`.
pub fn demand_program(values: &[Q], prices: &[Q], form: Form) -> LinearProgram {
    let m = values.len();
    let mut lp = LinearProgram::new(m).maximize(values.to_vec());
    lp.add(prices.to_vec(), Relation::Le, Q::one());
    let rel = match form {
        Form::Matching => Relation::Eq,
        Form::Relaxed => Relation::Le,
    };
    lp.add(vec![Q::one(); m], rel, Q::one());
    lp
}

fn tight_items(values: &[Q], prices: &[Q], alpha: &Q, beta: &Q) -> Vec<usize> {
    (0..values.len()).filter(|&j| &values[j] - alpha * &prices[j] == *beta).collect()
}

pub fn demand_lp(market: &Market, agent: usize, prices: &[Q], form: Form) -> Result<DemandResult> {
    check_prices(market, prices)?;
    let values = &market.values()[agent];
    let out = lp_solve(&demand_program(values, prices, form));
    if out.status != LpStatus::Optimal {
        return Err(Error::InfeasibleDemand { agent });
    }
    let alpha = out.duals[0].clone();
    let best = (0..values.len()).map(|j| &values[j] - &alpha * &prices[j]).max().unwrap();
    let beta = match form {
        Form::Matching => best,
        Form::Relaxed => best.max(Q::zero()),
    };
    let mut demand_set = tight_items(values, prices, &alpha, &beta);
    if demand_set.is_empty() {
        demand_set = (0..values.len()).filter(|&j| !out.x[j].is_zero()).collect();
    }
    Ok(DemandResult { utility: out.value, alpha, beta, demand_set, vertex_allocation: out.x })
}

fn g(values: &[Q], prices: &[Q], a: &Q) -> Q {
    let best = values.iter().zip(prices).map(|(v, p)| v - a * p).max().unwrap();
    a + best.max(Q::zero())
}

/// Minimizes the convex piecewise-linear `g(a)` over its breakpoints; the
/// smallest minimizing `a` is reported.
pub fn closed_form_utility(market: &Market, agent: usize, prices: &[Q]) -> Result<DemandResult> {
    check_prices(market, prices)?;
    let values = &market.values()[agent];
    let m = values.len();
    let mut cands: Vec<Q> = vec![Q::zero()];
    for j in 0..m {
        if prices[j].is_positive() {
            cands.push(&values[j] / &prices[j]);
        }
        for k in j + 1..m {
            if prices[j] != prices[k] {
                cands.push((&values[j] - &values[k]) / (&prices[j] - &prices[k]));
            }
        }
    }
    cands.retain(|a| !a.is_negative());
    cands.sort();
    cands.dedup();
    let mut best: Option<(Q, Q)> = None;
    for a in cands {
        let val = g(values, prices, &a);
        if best.as_ref().is_none_or(|(bv, _)| val < *bv) {
            best = Some((val, a));
        }
    }
    let (utility, alpha) = best.unwrap();
    let beta = &utility - &alpha;
    let relaxed = demand_lp(market, agent, prices, Form::Relaxed)?;
    debug_assert_eq!(relaxed.utility, utility);
    let mut demand_set = tight_items(values, prices, &alpha, &beta);
    if demand_set.is_empty() {
        demand_set = relaxed.demand_set.clone();
    }
    Ok(DemandResult { utility, alpha, beta, demand_set, vertex_allocation: relaxed.vertex_allocation })
}

/// Budget-tight shares `(x_high, x_low)` of a two-item mix costing exactly 1.
pub fn two_item_demand(p_high: &Q, p_low: &Q) -> Result<(Q, Q)> {
    if p_high == p_low {
        return Err(Error::DegeneratePrices("both items have the same price".into()));
    }
    let one = Q::one();
    if !(p_low <= &one && &one <= p_high) {
        return Err(Error::PreconditionViolated("need p_low <= 1 <= p_high".into()));
    }
    let d = p_high - p_low;
    Ok(((&one - p_low) / &d, (p_high - &one) / &d))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GsViolationReport {
    #[serde(with = "crate::rational::serde_q")]
    pub share_high_before: Q,
    #[serde(with = "crate::rational::serde_q")]
    pub share_high_after: Q,
    #[serde(with = "crate::rational::serde_q")]
    pub share_low_before: Q,
    #[serde(with = "crate::rational::serde_q")]
    pub share_low_after: Q,
    /// `d x_high / d p_low = (1 - p_high) / (p_high - p_low)^2` at the start point.
    #[serde(with = "crate::rational::serde_q")]
    pub derivative: Q,
    pub degenerate: bool,
    pub violates_gross_substitutes: bool,
}

/// Raising the cheap item's price by `delta` shifts demand toward it.
pub fn gross_substitute_violation_demo(p_high: &Q, p_low: &Q, delta: &Q) -> Result<GsViolationReport> {
    let raised = p_low + delta;
    if delta.is_negative() || !(raised < Q::one() && &Q::one() < p_high) {
        return Err(Error::PreconditionViolated("need p_low + delta < 1 < p_high, delta >= 0".into()));
    }
    let (hb, lb) = two_item_demand(p_high, p_low)?;
    let (ha, la) = two_item_demand(p_high, &raised)?;
    let diff = p_high - p_low;
    let derivative = (Q::one() - p_high) / (&diff * &diff);
    let degenerate = delta.is_zero();
    let violates = ha < hb && la > lb;
    if !degenerate {
        assert!(violates, "share of the expensive item must fall");
        assert!(derivative.is_negative());
    }
    Ok(GsViolationReport {
        share_high_before: hb,
        share_high_after: ha,
        share_low_before: lb,
        share_low_after: la,
        derivative,
        degenerate,
        violates_gross_substitutes: violates,
    })
}

/// Concave extension of the agent's value beyond one unit: the value drops
/// at rate `v* = max_j v_j + 1` per unit of excess.
pub fn plc_encode(market: &Market, agent: usize, row: &[Q]) -> Result<Q> {
    if row.len() != market.m() {
        return Err(Error::DimensionMismatch(format!("row of length {} for m = {}", row.len(), market.m())));
    }
    let values = &market.values()[agent];
    let v_star = market.max_value(agent) + Q::one();
    let plain: Q = values.iter().zip(row).map(|(v, x)| v * x).sum();
    let total: Q = row.iter().sum();
    let penalized = &plain + v_star * (Q::one() - total);
    Ok(plain.min(penalized))
}

/// An allocation giving every agent an optimal unit bundle at `prices` and
/// using every item exactly, found by an exact LP over the agents' optimal
/// faces. `None` when no such allocation exists.
pub fn clearing_allocation(market: &Market, prices: &[Q]) -> Result<Option<Vec<Vec<Q>>>> {
    check_prices(market, prices)?;
    let (n, m) = (market.n(), market.m());
    let mut vars = Vec::new();
    let mut best = Vec::with_capacity(n);
    for i in 0..n {
        let d = match demand_lp(market, i, prices, Form::Matching) {
            Ok(d) => d,
            Err(Error::InfeasibleDemand { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        for &j in &d.demand_set {
            vars.push((i, j));
        }
        best.push(d.utility);
    }
    let mut lp = LinearProgram::new(vars.len()).maximize(vec![Q::zero(); vars.len()]);
    let pick = |f: &dyn Fn(usize, usize) -> Option<Q>| -> Vec<(usize, Q)> {
        vars.iter().enumerate().filter_map(|(k, &(i, j))| f(i, j).map(|c| (k, c))).collect()
    };
    for i in 0..n {
        lp.add_sparse(&pick(&|a, _| (a == i).then(Q::one)), Relation::Eq, Q::one());
        lp.add_sparse(&pick(&|a, j| (a == i).then(|| prices[j].clone())), Relation::Le, Q::one());
        lp.add_sparse(&pick(&|a, j| (a == i).then(|| market.value(a, j).clone())), Relation::Ge, best[i].clone());
    }
    for j in 0..m {
        lp.add_sparse(&pick(&|_, b| (b == j).then(Q::one)), Relation::Eq, market.capacity(j).clone());
    }
    let out = lp_solve(&lp);
    if out.status != LpStatus::Optimal {
        return Ok(None);
    }
    let mut x = vec![vec![Q::zero(); m]; n];
    for (k, &(i, j)) in vars.iter().enumerate() {
        x[i][j] = out.x[k].clone();
    }
    Ok(Some(x))
}

/// Value of the best single unit inside `row`, filling from the most
/// valuable item down.
pub fn best_unit_value(values: &[Q], row: &[Q]) -> Q {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].cmp(&values[a]).then(a.cmp(&b)));
    let (mut left, mut total) = (Q::one(), Q::zero());
    for j in order {
        let take = row[j].clone().min(left.clone());
        total += &values[j] * &take;
        left -= take;
        if left.is_zero() {
            break;
        }
    }
    total
}

/// Equilibrium check in the free-disposal model: agents may buy more than one
/// unit and value only the best unit, so each row must be affordable and
/// reach the relaxed-demand optimum, and every item must be fully sold.
pub fn free_disposal_equilibrium(market: &Market, prices: &[Q], x: &[Vec<Q>]) -> Result<bool> {
    for i in 0..market.n() {
        if x[i].iter().any(Q::is_negative) {
            return Ok(false);
        }
        let spend: Q = x[i].iter().zip(prices).map(|(a, p)| a * p).sum();
        let best = demand_lp(market, i, prices, Form::Relaxed)?.utility;
        if spend > Q::one() || best_unit_value(&market.values()[i], &x[i]) != best {
            return Ok(false);
        }
    }
    Ok((0..market.m()).all(|j| {
        let col: Q = x.iter().map(|r| r[j].clone()).sum();
        col == *market.capacity(j) || (col < *market.capacity(j) && prices[j].is_zero())
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, qi};
    use proptest::prelude::*;

    #[test]
    fn clearing_allocation_examples() {
        let m = Market::from_ints(&[&[2, 1], &[0, 1]], &[1, 1]).unwrap();
        let x = clearing_allocation(&m, &[qi(1), qi(1)]).unwrap().unwrap();
        assert_eq!(x, vec![vec![qi(1), qi(0)], vec![qi(0), qi(1)]]);
        let id = Market::from_ints(&[&[1, 2], &[1, 2]], &[1, 1]).unwrap();
        assert_eq!(clearing_allocation(&id, &[qi(1), qi(1)]).unwrap(), None);
        assert_eq!(clearing_allocation(&id, &[q(1, 2), q(3, 2)]).unwrap(), Some(vec![vec![q(1, 2), q(1, 2)]; 2]));
        assert_eq!(clearing_allocation(&id, &[qi(2), qi(2)]).unwrap(), None);
    }

    fn agent(v: &[i64]) -> Market {
        let mut caps = vec![0; v.len()];
        caps[0] = 1;
        Market::from_ints(&[v], &caps).unwrap()
    }

    #[test]
    fn relaxed_and_matching_forms_differ() {
        let m = agent(&[0, 1]);
        let p = [q(1, 2), q(3, 2)];
        let r = demand_lp(&m, 0, &p, Form::Relaxed).unwrap();
        assert_eq!(r.utility, q(2, 3));
        assert_eq!(r.vertex_allocation, vec![qi(0), q(2, 3)]);
        let e = demand_lp(&m, 0, &p, Form::Matching).unwrap();
        assert_eq!(e.utility, q(1, 2));
        assert_eq!(e.vertex_allocation, vec![q(1, 2), q(1, 2)]);
    }

    #[test]
    fn uniform_unit_prices_pick_the_top_item() {
        let m = agent(&[1, 4, 2]);
        let d = demand_lp(&m, 0, &[qi(1), qi(1), qi(1)], Form::Matching).unwrap();
        assert_eq!(d.utility, qi(4));
        assert_eq!(d.vertex_allocation, vec![qi(0), qi(1), qi(0)]);
    }

    #[test]
    fn unaffordable_matching_demand() {
        let m = agent(&[1, 2]);
        assert_eq!(demand_lp(&m, 0, &[qi(2), q(3, 2)], Form::Matching), Err(Error::InfeasibleDemand { agent: 0 }));
    }

    #[test]
    fn closed_form_examples() {
        let d = closed_form_utility(&agent(&[2, 1]), 0, &[q(1, 2), q(3, 2)]).unwrap();
        assert_eq!((d.utility, d.alpha), (qi(2), qi(0)));
        let d = closed_form_utility(&agent(&[0, 1]), 0, &[q(1, 2), q(3, 2)]).unwrap();
        assert_eq!((d.utility, d.alpha), (q(2, 3), q(2, 3)));
        let d = closed_form_utility(&agent(&[5]), 0, &[qi(1)]).unwrap();
        assert_eq!((d.utility, d.alpha), (qi(5), qi(0)));
    }

    #[test]
    fn two_item_shares() {
        assert_eq!(two_item_demand(&q(3, 2), &q(1, 2)).unwrap(), (q(1, 2), q(1, 2)));
        assert_eq!(two_item_demand(&qi(1), &q(1, 4)).unwrap(), (qi(1), qi(0)));
        assert_eq!(two_item_demand(&qi(2), &qi(0)).unwrap(), (q(1, 2), q(1, 2)));
        assert!(matches!(two_item_demand(&qi(1), &qi(1)), Err(Error::DegeneratePrices(_))));
    }

    #[test]
    fn gross_substitutes_fail() {
        let r = gross_substitute_violation_demo(&q(3, 2), &q(1, 2), &q(1, 10)).unwrap();
        assert_eq!((r.share_high_before.clone(), r.share_high_after.clone()), (q(1, 2), q(4, 9)));
        assert!(r.violates_gross_substitutes && r.derivative.is_negative());
        let r = gross_substitute_violation_demo(&qi(2), &qi(0), &q(1, 2)).unwrap();
        assert_eq!(r.share_high_after, q(1, 3));
        let r = gross_substitute_violation_demo(&qi(2), &qi(0), &qi(0)).unwrap();
        assert!(r.degenerate && !r.violates_gross_substitutes);
    }

    #[test]
    fn plc_examples() {
        let m = agent(&[2, 1]);
        assert_eq!(plc_encode(&m, 0, &[q(1, 2), q(1, 2)]).unwrap(), q(3, 2));
        assert_eq!(plc_encode(&m, 0, &[qi(1), qi(1)]).unwrap(), qi(0));
        assert_eq!(plc_encode(&m, 0, &[qi(0), qi(0)]).unwrap(), qi(0));
    }

    fn small_q() -> impl Strategy<Value = Q> {
        (0i64..12, 1i64..5).prop_map(|(a, b)| q(a, b))
    }

    proptest! {
        #[test]
        fn closed_form_equals_relaxed_lp(
            v in proptest::collection::vec(0i64..10, 1..5),
            p in proptest::collection::vec(small_q(), 4),
        ) {
            let m = agent(&v);
            let p: Vec<Q> = p[..v.len()].iter().map(|x| x + q(1, 7)).collect();
            let cf = closed_form_utility(&m, 0, &p).unwrap();
            let lp = demand_lp(&m, 0, &p, Form::Relaxed).unwrap();
            prop_assert_eq!(&cf.utility, &lp.utility);
            if let Ok(mt) = demand_lp(&m, 0, &p, Form::Matching) {
                prop_assert!(mt.utility <= lp.utility);
                let used: Q = lp.vertex_allocation.iter().sum();
                if used == Q::one() {
                    prop_assert_eq!(mt.utility, lp.utility);
                }
                for (j, x) in mt.vertex_allocation.iter().enumerate() {
                    prop_assert!(x.is_zero() || mt.demand_set.contains(&j));
                }
            }
        }

        #[test]
        fn two_item_identities(lo in 0i64..8, hi in 9i64..40) {
            let (pl, ph) = (q(lo, 8), q(hi, 8));
            let (xh, xl) = two_item_demand(&ph, &pl).unwrap();
            prop_assert_eq!(&xh + &xl, Q::one());
            prop_assert_eq!(&xh * &ph + &xl * &pl, Q::one());
        }

        #[test]
        fn plc_is_midpoint_concave(
            v in proptest::collection::vec(0i64..6, 3),
            a in proptest::collection::vec(small_q(), 3),
            b in proptest::collection::vec(small_q(), 3),
        ) {
            let m = agent(&v);
            let mid: Vec<Q> = a.iter().zip(&b).map(|(x, y)| (x + y) / qi(2)).collect();
            let f = |r: &[Q]| plc_encode(&m, 0, r).unwrap();
            prop_assert!(f(&mid) * qi(2) >= f(&a) + f(&b));
            // strictly decreasing once the total exceeds one unit
            let over: Vec<Q> = vec![qi(1), qi(1), qi(0)];
            let more: Vec<Q> = vec![qi(1), qi(1), q(1, 2)];
            prop_assert!(f(&more) < f(&over));
        }
    }

    #[test]
    fn free_disposal_model_accepts_what_matching_rejects() {
        let m = Market::from_ints(&[&[2, 1], &[0, 1]], &[1, 1]).unwrap();
        let p = [q(1, 2), q(3, 2)];
        let x = vec![vec![q(1, 1), q(1, 3)], vec![q(0, 1), q(2, 3)]];
        assert!(free_disposal_equilibrium(&m, &p, &x).unwrap());
        assert_eq!(clearing_allocation(&m, &p).unwrap(), None);
        assert_eq!(best_unit_value(&[q(2, 1), q(1, 1)], &x[0]), q(2, 1));
    }
}

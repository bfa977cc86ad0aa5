//! Price-1 bundles: singletons priced exactly 1 and pairs mixing an item
//! below 1 with one above 1.

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Market;
use crate::numerics::{lp_solve, LinearProgram, LpStatus, Relation};
use crate::rational::{format_rational, Q};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BundleKind {
    Singleton(usize),
    /// `(low, high)`: `p_low < 1 < p_high`.
    Pair(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bundle {
    pub kind: BundleKind,
    /// Share of the low item; 1 for singletons.
    pub alpha: Q,
}

impl Bundle {
    pub fn singleton(j: usize) -> Self {
        Bundle { kind: BundleKind::Singleton(j), alpha: Q::one() }
    }

    pub fn pair(low: usize, high: usize, alpha: Q) -> Self {
        Bundle { kind: BundleKind::Pair(low, high), alpha }
    }

    /// `(item, share)` per unit of the bundle.
    pub fn shares(&self) -> Vec<(usize, Q)> {
        match self.kind {
            BundleKind::Singleton(j) => vec![(j, Q::one())],
            BundleKind::Pair(j, k) => vec![(j, self.alpha.clone()), (k, Q::one() - &self.alpha)],
        }
    }

    pub fn value(&self, values: &[Q]) -> Q {
        self.shares().iter().map(|(j, s)| &values[*j] * s).sum()
    }

    pub fn price(&self, prices: &[Q]) -> Q {
        self.shares().iter().map(|(j, s)| &prices[*j] * s).sum()
    }

    pub fn contains(&self, item: usize) -> bool {
        match self.kind {
            BundleKind::Singleton(j) => j == item,
            BundleKind::Pair(j, k) => j == item || k == item,
        }
    }
}

/// Share of `low` in the unit-cost mix of `low` and `high`.
pub fn pair_alpha(p_low: &Q, p_high: &Q) -> Q {
    (Q::one() - p_high) / (p_low - p_high)
}

/// Every singleton at price 1 and every pair straddling 1, ordered by item.
pub fn build_bundles(prices: &[Q]) -> Vec<Bundle> {
    let one = Q::one();
    let mut out = Vec::new();
    for (j, pj) in prices.iter().enumerate() {
        if *pj == one {
            out.push(Bundle::singleton(j));
        }
        if *pj < one {
            for (k, pk) in prices.iter().enumerate() {
                if *pk > one {
                    out.push(Bundle::pair(j, k, pair_alpha(pj, pk)));
                }
            }
        }
    }
    out
}

/// Spreads a row of bundle amounts back onto items.
pub fn flatten(bundles: &[Bundle], amounts: &[Q], m: usize) -> Vec<Q> {
    let mut x = vec![Q::zero(); m];
    for (b, y) in bundles.iter().zip(amounts) {
        if y.is_zero() {
            continue;
        }
        for (j, s) in b.shares() {
            x[j] += y * s;
        }
    }
    x
}

/// Rewrites a budget-tight unit row as amounts of the bundles of
/// `build_bundles(prices)`, pairing lowest-index residuals first.
pub fn decompose_allocation(prices: &[Q], row: &[Q]) -> Result<Vec<Q>> {
    let one = Q::one();
    let mass: Q = row.iter().sum();
    let spend: Q = row.iter().zip(prices).map(|(x, p)| x * p).sum();
    if mass != one || spend != one {
        return Err(Error::PreconditionViolated(format!(
            "row has mass {} and cost {}, both must be 1",
            format_rational(&mass),
            format_rational(&spend)
        )));
    }
    let bundles = build_bundles(prices);
    let index = |kind: BundleKind| bundles.iter().position(|b| b.kind == kind).unwrap();
    let mut y = vec![Q::zero(); bundles.len()];
    let mut r = row.to_vec();
    for j in 0..prices.len() {
        if prices[j] == one && !r[j].is_zero() {
            y[index(BundleKind::Singleton(j))] += &r[j];
            r[j] = Q::zero();
        }
    }
    let mut steps = 0;
    loop {
        let low = (0..prices.len()).find(|&j| prices[j] < one && r[j].is_positive());
        let high = (0..prices.len()).find(|&k| prices[k] > one && r[k].is_positive());
        match (low, high) {
            (None, None) => break,
            (Some(j), Some(k)) => {
                let a = pair_alpha(&prices[j], &prices[k]);
                let t = (&r[j] / &a).min(&r[k] / (&one - &a));
                r[j] -= &t * &a;
                r[k] -= &t * (&one - &a);
                y[index(BundleKind::Pair(j, k))] += t;
            }
            _ => return Err(Error::DecompositionFailed("unbalanced residual mass".into())),
        }
        steps += 1;
        assert!(steps <= 2 * prices.len(), "pairing must zero one residual per step");
    }
    Ok(y)
}

/// Indices of the bundles of highest value to `agent`. With `utility`
/// given, it must equal that maximum.
pub fn optimum_bundles(market: &Market, agent: usize, bundles: &[Bundle], utility: Option<&Q>) -> Result<Vec<usize>> {
    let values = &market.values()[agent];
    let vals: Vec<Q> = bundles.iter().map(|b| b.value(values)).collect();
    let Some(best) = vals.iter().max().cloned() else { return Ok(vec![]) };
    if let Some(u) = utility {
        if *u != best {
            return Err(Error::UtilityMismatch { given: format_rational(u), best: format_rational(&best) });
        }
    }
    let set: Vec<usize> = (0..bundles.len()).filter(|&b| vals[b] == best).collect();
    let pairs: Vec<(usize, usize)> = set
        .iter()
        .filter_map(|&b| match bundles[b].kind {
            BundleKind::Pair(j, k) => Some((j, k)),
            _ => None,
        })
        .collect();
    for &(j, k) in &pairs {
        for &(j2, k2) in &pairs {
            assert!(
                pairs.contains(&(j, k2)) && pairs.contains(&(j2, k)),
                "optimum pairs must be closed under exchange"
            );
        }
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateBundle {
    pub agent: usize,
    pub kind: BundleKind,
    /// Share of the first item; 1 for singletons.
    pub ratio: Q,
}

/// Bundles that could give `agent` exactly `utility`: singletons of that
/// value and pairs straddling it, mixed by `(u - v_k)/(v_j - v_k)`.
pub fn candidate_bundles(market: &Market, agent: usize, utility: &Q) -> Vec<CandidateBundle> {
    let v = &market.values()[agent];
    let mut out = Vec::new();
    for j in 0..v.len() {
        if v[j] == *utility {
            out.push(CandidateBundle { agent, kind: BundleKind::Singleton(j), ratio: Q::one() });
        }
        if v[j] < *utility {
            for k in 0..v.len() {
                if v[k] > *utility {
                    let ratio = (utility - &v[k]) / (&v[j] - &v[k]);
                    out.push(CandidateBundle { agent, kind: BundleKind::Pair(j, k), ratio });
                }
            }
        }
    }
    out
}

/// Solves the bundle-level clearing system and flattens it to items.
/// Returns `(y, x)`: bundle amounts per agent and item amounts per agent.
pub fn extract_allocation(market: &Market, bundles: &[Bundle], optimum: &[Vec<usize>]) -> Result<(Vec<Vec<Q>>, Vec<Vec<Q>>)> {
    let n = market.n();
    let m = market.m();
    let mut vars: Vec<(usize, usize)> = Vec::new();
    for (i, set) in optimum.iter().enumerate() {
        for &b in set {
            vars.push((i, b));
        }
    }
    let mut lp = LinearProgram::new(vars.len());
    for i in 0..n {
        let terms: Vec<(usize, Q)> = vars.iter().enumerate().filter(|(_, v)| v.0 == i).map(|(t, _)| (t, Q::one())).collect();
        lp.add_sparse(&terms, Relation::Eq, Q::one());
    }
    for j in 0..m {
        let mut terms = Vec::new();
        for (t, &(_, b)) in vars.iter().enumerate() {
            for (item, s) in bundles[b].shares() {
                if item == j {
                    terms.push((t, s));
                }
            }
        }
        lp.add_sparse(&terms, Relation::Eq, market.capacity(j).clone());
    }
    let out = lp_solve(&lp);
    if out.status != LpStatus::Optimal {
        return Err(Error::InfeasibleBundleSystem);
    }
    let mut y = vec![vec![Q::zero(); bundles.len()]; n];
    for (t, &(i, b)) in vars.iter().enumerate() {
        y[i][b] = out.x[t].clone();
    }
    let x = y.iter().map(|row| flatten(bundles, row, m)).collect();
    Ok((y, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, qi};
    use proptest::prelude::*;

    #[test]
    fn builds_complete_bundle_lists() {
        assert_eq!(build_bundles(&[qi(1), qi(1)]), vec![Bundle::singleton(0), Bundle::singleton(1)]);
        assert_eq!(build_bundles(&[q(1, 2), q(3, 2)]), vec![Bundle::pair(0, 1, q(1, 2))]);
        assert_eq!(
            build_bundles(&[q(1, 4), qi(1), q(7, 4)]),
            vec![Bundle::pair(0, 2, q(1, 2)), Bundle::singleton(1)]
        );
    }

    #[test]
    fn decomposes_examples() {
        assert_eq!(decompose_allocation(&[q(1, 2), q(3, 2)], &[q(1, 2), q(1, 2)]).unwrap(), vec![qi(1)]);
        assert_eq!(decompose_allocation(&[qi(1), qi(1)], &[q(1, 3), q(2, 3)]).unwrap(), vec![q(1, 3), q(2, 3)]);
        assert_eq!(
            decompose_allocation(&[q(1, 4), qi(1), q(7, 4)], &[q(1, 4), q(1, 2), q(1, 4)]).unwrap(),
            vec![q(1, 2), q(1, 2)]
        );
        assert!(matches!(
            decompose_allocation(&[q(1, 2), q(3, 2)], &[qi(1), qi(0)]),
            Err(Error::PreconditionViolated(_))
        ));
    }

    #[test]
    fn optimum_sets() {
        let m = Market::from_ints(&[&[2, 1]], &[1, 0]).unwrap();
        let b = build_bundles(&[qi(1), qi(1)]);
        assert_eq!(optimum_bundles(&m, 0, &b, None).unwrap(), vec![0]);
        assert!(matches!(optimum_bundles(&m, 0, &b, Some(&qi(1))), Err(Error::UtilityMismatch { .. })));
        let single = build_bundles(&[q(1, 2), q(3, 2)]);
        assert_eq!(optimum_bundles(&m, 0, &single, None).unwrap(), vec![0]);
    }

    #[test]
    fn tied_disjoint_pairs_close_under_exchange() {
        // values on the line v = 2p: every pair is worth exactly 2
        let prices = [q(1, 2), q(1, 4), q(3, 2), q(7, 4)];
        let m = Market::new(vec![vec![qi(1), q(1, 2), qi(3), q(7, 2)]], vec![qi(1), qi(0), qi(0), qi(0)]).unwrap();
        let b = build_bundles(&prices);
        let set = optimum_bundles(&m, 0, &b, Some(&qi(2))).unwrap();
        let kinds: Vec<BundleKind> = set.iter().map(|&i| b[i].kind).collect();
        for kind in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            assert!(kinds.contains(&BundleKind::Pair(kind.0, kind.1)));
        }
    }

    #[test]
    fn candidate_examples() {
        let m = Market::from_ints(&[&[2, 1]], &[1, 0]).unwrap();
        let c = candidate_bundles(&m, 0, &qi(2));
        assert_eq!(c, vec![CandidateBundle { agent: 0, kind: BundleKind::Singleton(0), ratio: qi(1) }]);
        let m = Market::from_ints(&[&[0, 1, 3]], &[1, 0, 0]).unwrap();
        let c = candidate_bundles(&m, 0, &qi(1));
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].kind, BundleKind::Pair(0, 2));
        assert_eq!(c[0].ratio, q(2, 3));
        assert_eq!(c[1].kind, BundleKind::Singleton(1));
        assert!(candidate_bundles(&m, 0, &qi(-1)).is_empty());
    }

    #[test]
    fn extraction_examples() {
        let one = Market::from_ints(&[&[3]], &[1]).unwrap();
        let (_, x) = extract_allocation(&one, &[Bundle::singleton(0)], &[vec![0]]).unwrap();
        assert_eq!(x, vec![vec![qi(1)]]);
        let two = Market::from_ints(&[&[0, 1], &[1, 2]], &[1, 1]).unwrap();
        let b = build_bundles(&[q(1, 2), q(3, 2)]);
        let (y, x) = extract_allocation(&two, &b, &[vec![0], vec![0]]).unwrap();
        assert_eq!(y, vec![vec![qi(1)], vec![qi(1)]]);
        assert_eq!(x, vec![vec![q(1, 2), q(1, 2)], vec![q(1, 2), q(1, 2)]]);
        let b = build_bundles(&[qi(1), qi(1)]);
        assert_eq!(extract_allocation(&two, &b, &[vec![0], vec![0]]), Err(Error::InfeasibleBundleSystem));
    }

    proptest! {
        #[test]
        fn bundles_cost_one_and_decomposition_round_trips(
            prices in proptest::collection::vec((0i64..16, 1i64..4), 2..6),
            weights in proptest::collection::vec(1i64..6, 12),
        ) {
            let p: Vec<Q> = prices.iter().map(|&(a, b)| q(a, b) / qi(2) + q(1, 9)).collect();
            let bundles = build_bundles(&p);
            for b in &bundles {
                prop_assert_eq!(b.price(&p), Q::one());
            }
            prop_assume!(!bundles.is_empty());
            let total: i64 = weights[..bundles.len().min(12)].iter().sum();
            let amounts: Vec<Q> = (0..bundles.len()).map(|b| if b < 12 { q(weights[b], total) } else { Q::zero() }).collect();
            let row = flatten(&bundles, &amounts, p.len());
            let y = decompose_allocation(&p, &row).unwrap();
            prop_assert_eq!(flatten(&bundles, &y, p.len()), row);
        }
    }
}

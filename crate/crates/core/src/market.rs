//! Problem instances: agents' values, item capacities, and the JSON instance format.

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{format_rational, parse_rational, Q};
use crate::scalar::Scalar;

pub type PriceVector = Vec<Scalar>;
pub type Allocation = Vec<Vec<Scalar>>;

/// Instance as it appears on disk; rationals are strings.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct RawMarket {
    pub n: usize,
    pub m: usize,
    pub values: Vec<Vec<String>>,
    pub capacities: Vec<String>,
}

/// A validated matching market: `n` unit-budget agents, `m` divisible items,
/// capacities summing to exactly `n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Market {
    n: usize,
    m: usize,
    values: Vec<Vec<Q>>,
    capacities: Vec<Q>,
    unique_top: Vec<bool>,
}

impl Market {
    pub fn new(values: Vec<Vec<Q>>, capacities: Vec<Q>) -> Result<Self> {
        let n = values.len();
        let m = capacities.len();
        if n == 0 || m == 0 {
            return Err(Error::EmptyMarket);
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch(format!("agent {i} has {} values, expected {m}", row.len())));
            }
            if let Some(j) = row.iter().position(|v| v.is_negative()) {
                return Err(Error::NegativeValue(format!("v[{i}][{j}]")));
            }
        }
        if let Some(j) = capacities.iter().position(|c| c.is_negative()) {
            return Err(Error::NegativeValue(format!("C[{j}]")));
        }
        let sum: Q = capacities.iter().sum();
        if sum != Q::from_integer(n.into()) {
            return Err(Error::CapacityMismatch { sum: format_rational(&sum), expected: n });
        }
        let unique_top = values
            .iter()
            .map(|row| {
                let best = row.iter().max().unwrap();
                row.iter().filter(|v| *v == best).count() == 1
            })
            .collect();
        Ok(Market { n, m, values, capacities, unique_top })
    }

    pub fn from_ints(values: &[&[i64]], capacities: &[i64]) -> Result<Self> {
        Market::new(
            values.iter().map(|r| r.iter().map(|&v| Q::from_integer(v.into())).collect()).collect(),
            capacities.iter().map(|&c| Q::from_integer(c.into())).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[Vec<Q>] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> &Q {
        &self.values[i][j]
    }

    pub fn capacities(&self) -> &[Q] {
        &self.capacities
    }

    pub fn capacity(&self, j: usize) -> &Q {
        &self.capacities[j]
    }

    pub fn has_unique_top(&self, i: usize) -> bool {
        self.unique_top[i]
    }

    pub fn all_unique_tops(&self) -> bool {
        self.unique_top.iter().all(|&u| u)
    }

    /// Most valued item of agent `i`, lowest index on ties.
    pub fn top_item(&self, i: usize) -> usize {
        let row = &self.values[i];
        let best = row.iter().max().unwrap();
        row.iter().position(|v| v == best).unwrap()
    }

    pub fn max_value(&self, i: usize) -> &Q {
        self.values[i].iter().max().unwrap()
    }

    pub fn has_unit_capacities(&self) -> bool {
        self.capacities.iter().all(|c| *c == Q::from_integer(1.into()))
    }

    pub fn to_raw(&self) -> RawMarket {
        RawMarket {
            n: self.n,
            m: self.m,
            values: self.values.iter().map(|r| r.iter().map(format_rational).collect()).collect(),
            capacities: self.capacities.iter().map(format_rational).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawMarket = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        validate_market(&raw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("instance serializes")
    }
}

/// Parses and checks a raw instance: dimensions, nonnegativity, `sum C_j = n`.
pub fn validate_market(raw: &RawMarket) -> Result<Market> {
    if raw.n == 0 || raw.m == 0 {
        return Err(Error::EmptyMarket);
    }
    if raw.values.len() != raw.n {
        return Err(Error::DimensionMismatch(format!("{} value rows for n = {}", raw.values.len(), raw.n)));
    }
    if raw.capacities.len() != raw.m {
        return Err(Error::DimensionMismatch(format!("{} capacities for m = {}", raw.capacities.len(), raw.m)));
    }
    let values = raw
        .values
        .iter()
        .map(|row| row.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let capacities = raw.capacities.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>>>()?;
    Market::new(values, capacities)
}

/// Value `sum_j v_ij x_ij` of agent `i` for an allocation row.
pub fn allocation_value(market: &Market, allocation: &[Vec<Scalar>], agent: usize) -> Result<Scalar> {
    if agent >= market.n() || allocation.len() != market.n() {
        return Err(Error::DimensionMismatch(format!("allocation has {} rows for n = {}", allocation.len(), market.n())));
    }
    row_value(market.values()[agent].as_slice(), &allocation[agent])
}

pub fn row_value(values: &[Q], row: &[Scalar]) -> Result<Scalar> {
    if row.len() != values.len() {
        return Err(Error::DimensionMismatch(format!("row of length {} for m = {}", row.len(), values.len())));
    }
    let mut acc = Scalar::Exact(Q::zero());
    for (v, x) in values.iter().zip(row) {
        acc = &acc + &(&Scalar::Exact(v.clone()) * x);
    }
    Ok(acc)
}

pub fn exact_row_value(values: &[Q], row: &[Q]) -> Q {
    values.iter().zip(row).map(|(v, x)| v * x).sum()
}

pub fn to_scalar_matrix(x: &[Vec<Q>]) -> Allocation {
    x.iter().map(|r| r.iter().cloned().map(Scalar::Exact).collect()).collect()
}

pub fn to_scalar_vec(p: &[Q]) -> PriceVector {
    p.iter().cloned().map(Scalar::Exact).collect()
}

/// Exact view of a scalar matrix, if every entry is exact.
pub fn exact_matrix(x: &[Vec<Scalar>]) -> Option<Vec<Vec<Q>>> {
    x.iter().map(|r| r.iter().map(|s| s.as_exact().cloned()).collect()).collect()
}

pub fn exact_vec(p: &[Scalar]) -> Option<Vec<Q>> {
    p.iter().map(|s| s.as_exact().cloned()).collect()
}

/// Moves prices along `p -> 1 + l (p - 1)` so the cheapest sits at 1/2.
/// Budget-exhausting equilibria stay equilibria along this ray. `None` when
/// no price is below 1.
pub fn ray_normalize(prices: &[Q]) -> Option<Vec<Q>> {
    let one = Q::one();
    let low = prices.iter().min()?;
    if *low >= one {
        return None;
    }
    let l = Q::new(1.into(), 2.into()) / (&one - low);
    Some(prices.iter().map(|p| &one + &l * (p - &one)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{q, qi};
    use crate::scalar::Interval;

    fn raw(values: &[&[&str]], caps: &[&str]) -> RawMarket {
        RawMarket {
            n: values.len(),
            m: caps.len(),
            values: values.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
            capacities: caps.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn free_disposal_market_is_valid() {
        let m = validate_market(&raw(&[&["2", "1"], &["0", "1"]], &["1", "1"])).unwrap();
        assert!(m.has_unique_top(0) && m.has_unique_top(1));
        assert_eq!(m.top_item(1), 1);
    }

    #[test]
    fn minimal_market() {
        let m = validate_market(&raw(&[&["5"]], &["1"])).unwrap();
        assert_eq!((m.n(), m.m()), (1, 1));
    }

    #[test]
    fn capacity_mismatch() {
        let e = validate_market(&raw(&[&["2", "1"], &["0", "1"]], &["1", "2"])).unwrap_err();
        assert!(matches!(e, Error::CapacityMismatch { .. }));
    }

    #[test]
    fn rejects_negative_and_empty() {
        assert!(matches!(
            validate_market(&raw(&[&["-1", "1"], &["0", "1"]], &["1", "1"])),
            Err(Error::NegativeValue(_))
        ));
        let empty = RawMarket { n: 0, m: 0, values: vec![], capacities: vec![] };
        assert_eq!(validate_market(&empty), Err(Error::EmptyMarket));
    }

    #[test]
    fn tied_top_is_flagged() {
        let m = Market::from_ints(&[&[3, 3, 1]], &[1, 0, 0]).unwrap();
        assert!(!m.has_unique_top(0));
    }

    #[test]
    fn validation_is_idempotent() {
        let m = validate_market(&raw(&[&["1/2", "0.25"], &["3", "1"]], &["1/2", "3/2"])).unwrap();
        assert_eq!(validate_market(&m.to_raw()).unwrap(), m);
        assert_eq!(Market::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn allocation_values() {
        let m = Market::from_ints(&[&[2, 1], &[0, 1]], &[1, 1]).unwrap();
        let x = to_scalar_matrix(&[vec![qi(1), qi(0)], vec![q(1, 3), q(2, 3)]]);
        assert_eq!(allocation_value(&m, &x, 0).unwrap(), Scalar::Exact(qi(2)));
        assert_eq!(allocation_value(&m, &x, 1).unwrap(), Scalar::Exact(q(2, 3)));
        let half = to_scalar_matrix(&[vec![q(1, 2), q(1, 2)], vec![qi(0), qi(1)]]);
        assert_eq!(allocation_value(&m, &half, 0).unwrap(), Scalar::Exact(q(3, 2)));
        // interval mode encloses the exact value
        let iv = vec![
            vec![Scalar::Exact(qi(1)), Scalar::Exact(qi(0))],
            vec![
                Scalar::Certified(Interval::point(q(1, 3)).round_outward(20)),
                Scalar::Certified(Interval::point(q(2, 3)).round_outward(20)),
            ],
        ];
        assert!(allocation_value(&m, &iv, 1).unwrap().contains(&q(2, 3)));
        assert!(allocation_value(&m, &x[..1], 0).is_err());
    }
}

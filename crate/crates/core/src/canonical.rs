//! Shared-item normal form of equilibrium allocations.
//!
//! For agents `i < j`, let `L` be the items (sorted by price, then index)
//! that lie in optimum bundles of both, on one side of price 1. In normal
//! form `j` holds nothing strictly between the cheapest and dearest items of
//! `L` that `i` holds, so the two share at most two items per side; among
//! unit-priced common items `i` holds a prefix and `j` a suffix by index.

use std::cmp::Ordering;

use num_traits::{One, Signed};

use crate::bundling::{build_bundles, optimum_bundles};
use crate::demand::{demand_lp, Form};
use crate::error::{Error, Result};
use crate::market::Market;
use crate::rational::Q;
use crate::verify::verify_exact;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Below,
    At,
    Above,
}

pub fn side(p: &Q) -> Side {
    match p.cmp(&Q::one()) {
        Ordering::Less => Side::Below,
        Ordering::Equal => Side::At,
        Ordering::Greater => Side::Above,
    }
}

/// Items appearing in some optimum bundle of each agent.
pub fn optimum_items(market: &Market, prices: &[Q]) -> Result<Vec<Vec<bool>>> {
    let bundles = build_bundles(prices);
    (0..market.n())
        .map(|i| {
            let mut mark = vec![false; market.m()];
            for b in optimum_bundles(market, i, &bundles, None)? {
                for (j, _) in bundles[b].shares() {
                    mark[j] = true;
                }
            }
            Ok(mark)
        })
        .collect()
}

/// Items on agent `i`'s supporting line `v = a p + b` for an optimal dual of
/// the matching-form demand program. Every optimal bundle lives on it.
fn line_items(market: &Market, prices: &[Q], i: usize) -> Result<Vec<bool>> {
    let d = demand_lp(market, i, prices, Form::Matching)?;
    let mut mark = vec![false; market.m()];
    for j in d.demand_set {
        mark[j] = true;
    }
    Ok(mark)
}

/// Common items of a side in `(price, index)` order (index order for `At`).
pub fn common_list(prices: &[Q], a: &[bool], b: &[bool], s: Side) -> Vec<usize> {
    let mut l: Vec<usize> = (0..prices.len()).filter(|&k| a[k] && b[k] && side(&prices[k]) == s).collect();
    l.sort_by(|&x, &y| prices[x].cmp(&prices[y]).then(x.cmp(&y)));
    l
}

fn positions(list: &[usize], row: &[Q]) -> Vec<usize> {
    (0..list.len()).filter(|&t| row[list[t]].is_positive()).collect()
}

fn phi(list: &[usize], xi: &[Q], xj: &[Q]) -> usize {
    let held = positions(list, xi);
    let (Some(&lo), Some(&hi)) = (held.first(), held.last()) else { return 0 };
    (hi - lo) + positions(list, xj).iter().filter(|&&t| lo < t && t < hi).count()
}

/// Sweeps one price side for the pair `(i, j)`; returns whether anything moved.
fn sweep_side(prices: &[Q], list: &[usize], x: &mut [Vec<Q>], i: usize, j: usize) -> bool {
    let mut moved = false;
    loop {
        let held = positions(list, &x[i]);
        let (Some(&lo), Some(&hi)) = (held.first(), held.last()) else { return moved };
        let Some(rp) = (lo + 1..hi).find(|&t| x[j][list[t]].is_positive()) else { return moved };
        let before = phi(list, &x[i], &x[j]);
        let (k, z, r) = (list[lo], list[hi], list[rp]);
        // beta p_k + (1 - beta) p_z = p_r
        let beta = if prices[k] == prices[z] { Q::one() } else { (&prices[z] - &prices[r]) / (&prices[z] - &prices[k]) };
        let gamma = Q::one() - &beta;
        let mut w = x[j][r].clone();
        if beta.is_positive() {
            w = w.min(&x[i][k] / &beta);
        }
        if gamma.is_positive() {
            w = w.min(&x[i][z] / &gamma);
        }
        let (bk, gz) = (&beta * &w, &gamma * &w);
        x[i][k] -= &bk;
        x[i][z] -= &gz;
        x[i][r] += &w;
        x[j][r] -= &w;
        x[j][k] += bk;
        x[j][z] += gz;
        let after = phi(list, &x[i], &x[j]);
        assert!(after < before, "trade must lower the potential ({before} -> {after})");
        moved = true;
    }
}

/// Moves unit-priced common items so that `i` holds a prefix and `j` a suffix.
fn sweep_unit(list: &[usize], x: &mut [Vec<Q>], i: usize, j: usize) -> bool {
    let mut moved = false;
    loop {
        let Some(a) = positions(list, &x[j]).first().copied() else { return moved };
        let Some(b) = positions(list, &x[i]).last().copied() else { return moved };
        if a >= b {
            return moved;
        }
        let (ka, kb) = (list[a], list[b]);
        let w = x[j][ka].clone().min(x[i][kb].clone());
        x[j][ka] -= &w;
        x[i][ka] += &w;
        x[i][kb] -= &w;
        x[j][kb] += w;
        moved = true;
    }
}

const MAX_PASSES: usize = 10_000;

/// Rewrites a verified equilibrium allocation into normal form. Per-agent
/// value and spend and per-item totals are unchanged.
pub fn canonicalize_allocation(market: &Market, prices: &[Q], x: &[Vec<Q>]) -> Result<Vec<Vec<Q>>> {
    let cert = verify_exact(market, prices, x)?;
    if !cert.equilibrium {
        let failed: Vec<&str> = cert.verdicts.iter().filter(|v| !v.passed).map(|v| v.name.as_str()).collect();
        return Err(Error::NotAnEquilibrium(failed.join(", ")));
    }
    let n = market.n();
    let lines: Vec<Vec<bool>> = (0..n).map(|i| line_items(market, prices, i)).collect::<Result<_>>()?;
    let mut y = x.to_vec();
    for _ in 0..MAX_PASSES {
        let mut changed = false;
        for i in 0..n {
            for j in i + 1..n {
                for s in [Side::Below, Side::Above] {
                    let l = common_list(prices, &lines[i], &lines[j], s);
                    changed |= sweep_side(prices, &l, &mut y, i, j);
                }
                let l = common_list(prices, &lines[i], &lines[j], Side::At);
                changed |= sweep_unit(&l, &mut y, i, j);
            }
        }
        if !changed {
            debug_assert!(verify_exact(market, prices, &y)?.equilibrium);
            return Ok(y);
        }
    }
    Err(Error::DecompositionFailed("pairwise trading did not settle".into()))
}

/// Number of items held by both agents.
pub fn count_shared_items(x: &[Vec<Q>], i: usize, j: usize) -> usize {
    x[i].iter().zip(&x[j]).filter(|(a, b)| a.is_positive() && b.is_positive()).count()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSharing {
    pub i: usize,
    pub j: usize,
    pub below: usize,
    pub above: usize,
    pub at: usize,
    pub ordered: bool,
}

/// Shared counts per side over common optimum items, and whether the
/// ordering rule holds, for every pair `i < j`.
pub fn sharing_profile(market: &Market, prices: &[Q], x: &[Vec<Q>]) -> Result<Vec<PairSharing>> {
    let items = optimum_items(market, prices)?;
    let n = market.n();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let shared = |l: &[usize]| l.iter().filter(|&&k| x[i][k].is_positive() && x[j][k].is_positive()).count();
            let mut ordered = true;
            let mut counts = [0; 2];
            for (t, s) in [Side::Below, Side::Above].into_iter().enumerate() {
                let l = common_list(prices, &items[i], &items[j], s);
                counts[t] = shared(&l);
                let held = positions(&l, &x[i]);
                if let (Some(&lo), Some(&hi)) = (held.first(), held.last()) {
                    ordered &= positions(&l, &x[j]).iter().all(|&t| t <= lo || t >= hi);
                }
            }
            let l = common_list(prices, &items[i], &items[j], Side::At);
            let at = shared(&l);
            if let (Some(&hi), Some(&lo)) = (positions(&l, &x[i]).last(), positions(&l, &x[j]).first()) {
                ordered &= hi <= lo;
            }
            out.push(PairSharing { i, j, below: counts[0], above: counts[1], at, ordered });
        }
    }
    Ok(out)
}

pub fn is_canonical(market: &Market, prices: &[Q], x: &[Vec<Q>]) -> Result<bool> {
    Ok(sharing_profile(market, prices, x)?.iter().all(|s| s.ordered && s.below <= 2 && s.above <= 2 && s.at <= 1))
}

//! Dense two-phase simplex over exact rationals with Bland's pivoting rule.

use num_traits::{One, Signed, Zero};

use crate::rational::Q;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<Q>,
    pub relation: Relation,
    pub rhs: Q,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sense {
    Max,
    Min,
}

#[derive(Clone, Debug)]
pub struct LinearProgram {
    num_vars: usize,
    objective: Option<(Sense, Vec<Q>)>,
    constraints: Vec<Constraint>,
    lower: Vec<Q>,
    upper: Vec<Option<Q>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of [`lp_solve`]. `duals` has one entry per user constraint, with the
/// sign convention of the stated sense: for a maximization, `<=` rows carry
/// nonnegative duals and `A^T y >= c`; for a minimization, `>=` rows carry
/// nonnegative duals and `A^T y <= c`.
#[derive(Clone, Debug, PartialEq)]
pub struct LpOutcome {
    pub status: LpStatus,
    pub value: Q,
    pub x: Vec<Q>,
    pub duals: Vec<Q>,
}

impl LpOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

impl LinearProgram {
    /// Pure feasibility program over `num_vars` variables, all bounded below by 0.
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            num_vars,
            objective: None,
            constraints: Vec::new(),
            lower: vec![Q::zero(); num_vars],
            upper: vec![None; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn maximize(mut self, c: Vec<Q>) -> Self {
        assert_eq!(c.len(), self.num_vars);
        self.objective = Some((Sense::Max, c));
        self
    }

    pub fn minimize(mut self, c: Vec<Q>) -> Self {
        assert_eq!(c.len(), self.num_vars);
        self.objective = Some((Sense::Min, c));
        self
    }

    pub fn add(&mut self, coeffs: Vec<Q>, relation: Relation, rhs: Q) {
        assert_eq!(coeffs.len(), self.num_vars, "constraint row has wrong width");
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    /// Adds `sum_k coef_k x_{idx_k} (rel) rhs` from sparse terms.
    pub fn add_sparse(&mut self, terms: &[(usize, Q)], relation: Relation, rhs: Q) {
        let mut row = vec![Q::zero(); self.num_vars];
        for (j, c) in terms {
            row[*j] += c;
        }
        self.add(row, relation, rhs);
    }

    pub fn set_lower(&mut self, j: usize, lo: Q) {
        self.lower[j] = lo;
    }

    pub fn set_upper(&mut self, j: usize, hi: Q) {
        self.upper[j] = Some(hi);
    }
}

struct Tableau {
    rows: Vec<Vec<Q>>,
    basis: Vec<usize>,
    obj: Vec<Q>,
    ncols: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> &Q {
        &self.rows[r][self.ncols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.rows[r][c].clone();
        if !piv.is_one() {
            for v in self.rows[r].iter_mut() {
                if !v.is_zero() {
                    *v /= &piv;
                }
            }
        }
        let prow = self.rows[r].clone();
        for (k, row) in self.rows.iter_mut().enumerate() {
            if k == r || row[c].is_zero() {
                continue;
            }
            let f = row[c].clone();
            for (v, p) in row.iter_mut().zip(&prow) {
                if !p.is_zero() {
                    *v -= &f * p;
                }
            }
        }
        if !self.obj[c].is_zero() {
            let f = self.obj[c].clone();
            for (v, p) in self.obj.iter_mut().zip(&prow) {
                if !p.is_zero() {
                    *v -= &f * p;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Sets the reduced-cost row for maximizing `cost` given the current basis.
    fn load_objective(&mut self, cost: &[Q]) {
        let mut obj: Vec<Q> = cost.to_vec();
        obj.push(Q::zero());
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = &cost[b];
            if cb.is_zero() {
                continue;
            }
            for (v, a) in obj.iter_mut().zip(&self.rows[r]) {
                if !a.is_zero() {
                    *v -= cb * a;
                }
            }
        }
        self.obj = obj;
    }

    /// Bland's rule iterations; `allowed` masks columns that may enter.
    fn optimize(&mut self, allowed: &[bool]) -> bool {
        loop {
            let entering = (0..self.ncols).find(|&j| allowed[j] && self.obj[j].is_positive());
            let Some(c) = entering else { return true };
            let mut best: Option<(Q, usize, usize)> = None;
            for r in 0..self.rows.len() {
                let a = &self.rows[r][c];
                if a.is_positive() {
                    let ratio = self.rhs(r) / a;
                    let better = match &best {
                        None => true,
                        Some((br, _, bb)) => ratio < *br || (ratio == *br && self.basis[r] < *bb),
                    };
                    if better {
                        best = Some((ratio, r, self.basis[r]));
                    }
                }
            }
            match best {
                None => return false,
                Some((_, r, _)) => self.pivot(r, c),
            }
        }
    }
}

/// Solves the program exactly. Deterministic for identical input.
pub fn lp_solve(lp: &LinearProgram) -> LpOutcome {
    let nv = lp.num_vars;
    // shift x = lower + y, y >= 0
    let mut rows: Vec<(Vec<Q>, Relation, Q, bool)> = Vec::new();
    for con in &lp.constraints {
        let shift: Q = con.coeffs.iter().zip(&lp.lower).map(|(a, l)| a * l).sum();
        rows.push((con.coeffs.clone(), con.relation, &con.rhs - shift, false));
    }
    for j in 0..nv {
        if let Some(u) = &lp.upper[j] {
            let mut a = vec![Q::zero(); nv];
            a[j] = Q::one();
            rows.push((a, Relation::Le, u - &lp.lower[j], false));
        }
    }
    for row in rows.iter_mut() {
        if row.2.is_negative() {
            for v in row.0.iter_mut() {
                *v = -v.clone();
            }
            row.2 = -row.2.clone();
            row.1 = match row.1 {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
            row.3 = true;
        }
    }
    let nrows = rows.len();
    // column layout: y | slack/surplus per row (Le, Ge) | artificial per row (Ge, Eq)
    let mut slack_col = vec![None; nrows];
    let mut art_col = vec![None; nrows];
    let mut ncols = nv;
    for (r, row) in rows.iter().enumerate() {
        if row.1 != Relation::Eq {
            slack_col[r] = Some(ncols);
            ncols += 1;
        }
    }
    for (r, row) in rows.iter().enumerate() {
        if row.1 != Relation::Le {
            art_col[r] = Some(ncols);
            ncols += 1;
        }
    }
    let mut tab = Tableau { rows: Vec::with_capacity(nrows), basis: Vec::with_capacity(nrows), obj: Vec::new(), ncols };
    for (r, (a, rel, b, _)) in rows.iter().enumerate() {
        let mut t = vec![Q::zero(); ncols + 1];
        t[..nv].clone_from_slice(a);
        if let Some(s) = slack_col[r] {
            t[s] = if *rel == Relation::Le { Q::one() } else { -Q::one() };
        }
        if let Some(ac) = art_col[r] {
            t[ac] = Q::one();
        }
        t[ncols] = b.clone();
        tab.rows.push(t);
        tab.basis.push(if *rel == Relation::Le { slack_col[r].unwrap() } else { art_col[r].unwrap() });
    }
    let is_art: Vec<bool> = {
        let mut v = vec![false; ncols];
        for c in art_col.iter().flatten() {
            v[*c] = true;
        }
        v
    };

    // phase 1: maximize -sum(artificials)
    let mut phase1_cost = vec![Q::zero(); ncols];
    for c in art_col.iter().flatten() {
        phase1_cost[*c] = -Q::one();
    }
    tab.load_objective(&phase1_cost);
    let all = vec![true; ncols];
    tab.optimize(&all);
    let infeasibility: Q = tab
        .basis
        .iter()
        .enumerate()
        .filter(|(_, b)| is_art[**b])
        .map(|(r, _)| tab.rhs(r).clone())
        .sum();
    if infeasibility.is_positive() {
        return LpOutcome { status: LpStatus::Infeasible, value: Q::zero(), x: vec![], duals: vec![] };
    }
    // drive zero-level artificials out of the basis
    let mut r = 0;
    while r < tab.rows.len() {
        if is_art[tab.basis[r]] {
            match (0..ncols).find(|&c| !is_art[c] && !tab.rows[r][c].is_zero()) {
                Some(c) => {
                    tab.pivot(r, c);
                    r += 1;
                }
                None => {
                    // redundant row; kept with its artificial pinned at zero
                    r += 1;
                }
            }
        } else {
            r += 1;
        }
    }

    let (sense, cost_x) = match &lp.objective {
        Some((s, c)) => (*s, c.clone()),
        None => (Sense::Max, vec![Q::zero(); nv]),
    };
    let mut cost = vec![Q::zero(); ncols];
    for j in 0..nv {
        cost[j] = if sense == Sense::Max { cost_x[j].clone() } else { -cost_x[j].clone() };
    }
    tab.load_objective(&cost);
    let allowed: Vec<bool> = (0..ncols).map(|c| !is_art[c]).collect();
    if !tab.optimize(&allowed) {
        return LpOutcome { status: LpStatus::Unbounded, value: Q::zero(), x: vec![], duals: vec![] };
    }

    let mut y = vec![Q::zero(); ncols];
    for (r, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.rhs(r).clone();
    }
    let x: Vec<Q> = (0..nv).map(|j| &lp.lower[j] + &y[j]).collect();
    let value: Q = cost_x.iter().zip(&x).map(|(c, v)| c * v).sum();

    // reduced cost of a unit column e_r is -pi_r
    let mut duals = Vec::with_capacity(lp.constraints.len());
    for (r, row) in rows.iter().enumerate().take(lp.constraints.len()) {
        let pi = match (row.1, slack_col[r], art_col[r]) {
            (Relation::Le, Some(s), _) => -tab.obj[s].clone(),
            (_, _, Some(a)) => -tab.obj[a].clone(),
            _ => unreachable!(),
        };
        let pi = if row.3 { -pi } else { pi };
        duals.push(if sense == Sense::Max { pi } else { -pi });
    }
    LpOutcome { status: LpStatus::Optimal, value, x, duals }
}

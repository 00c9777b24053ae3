//! Dense two-phase simplex with Bland's anti-cycling rule.
//!
//! Sized for the tiny programs used here (a few hundred columns at most):
//! per-column coherence programs and basis pursuit. Free variables are
//! split into positive and negative parts; inequality rows receive slack or
//! surplus columns and every row that lacks an obvious starting basic column
//! receives an artificial one.

use crate::error::{DscError, Result};
use nalgebra::DMatrix;

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;
const REFACTOR_EVERY: usize = 32;
const DEGENERATE_LIMIT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `minimize objective . x` subject to the constraints; variables flagged
/// free are unrestricted in sign, all others are nonnegative.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub free: Vec<bool>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            objective: vec![0.0; n_vars],
            free: vec![false; n_vars],
            constraints: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.n_vars());
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self).run()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ColKind {
    Structural,
    Slack,
    Artificial,
}

struct Tableau {
    rows: usize,
    cols: usize,
    // rows x (cols + 1); last column is the right-hand side
    data: Vec<f64>,
    basis: Vec<usize>,
    kinds: Vec<ColKind>,
    // structural column -> (original variable, sign)
    col_map: Vec<(usize, f64)>,
    n_orig: usize,
    cost: Vec<f64>,
    // structural column whose original coefficients are the exact negation
    mirror: Vec<Option<usize>>,
    // initial tableau, for refactorization
    orig: Vec<f64>,
    pivots: usize,
    since_refactor: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.n_vars();
        let mut col_map = Vec::new();
        let mut cost = Vec::new();
        for v in 0..n {
            col_map.push((v, 1.0));
            cost.push(lp.objective[v]);
            if lp.free[v] {
                col_map.push((v, -1.0));
                cost.push(-lp.objective[v]);
            }
        }
        let n_struct = col_map.len();
        let rows = lp.constraints.len();
        let column = |c: usize| -> Vec<f64> {
            let (v, sign) = col_map[c];
            lp.constraints.iter().map(|k| sign * k.coeffs[v]).collect()
        };
        let columns: Vec<Vec<f64>> = (0..n_struct).map(column).collect();
        let mut mirror = vec![None; n_struct];
        for a in 0..n_struct {
            if mirror[a].is_some() || columns[a].iter().all(|v| *v == 0.0) {
                continue;
            }
            if let Some(b) = (a + 1..n_struct).find(|&b| {
                mirror[b].is_none() && columns[a].iter().zip(&columns[b]).all(|(x, y)| *x == -*y)
            }) {
                mirror[a] = Some(b);
                mirror[b] = Some(a);
            }
        }

        // normalize rows to nonnegative rhs
        let normalized: Vec<(Vec<f64>, Relation, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                let expanded: Vec<f64> = col_map
                    .iter()
                    .map(|&(v, sign)| sign * c.coeffs[v])
                    .collect();
                if c.rhs < 0.0 {
                    let flipped = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (expanded.iter().map(|a| -a).collect(), flipped, -c.rhs)
                } else {
                    (expanded, c.relation, c.rhs)
                }
            })
            .collect();

        let n_slack = normalized
            .iter()
            .filter(|(_, r, _)| *r != Relation::Eq)
            .count();
        let n_art = normalized
            .iter()
            .filter(|(_, r, _)| *r != Relation::Le)
            .count();
        let cols = n_struct + n_slack + n_art;
        let width = cols + 1;
        let mut data = vec![0.0; rows * width];
        let mut kinds = vec![ColKind::Structural; n_struct];
        kinds.extend(std::iter::repeat_n(ColKind::Slack, n_slack));
        kinds.extend(std::iter::repeat_n(ColKind::Artificial, n_art));
        cost.extend(std::iter::repeat_n(0.0, n_slack + n_art));

        let mut basis = vec![0; rows];
        let mut next_slack = n_struct;
        let mut next_art = n_struct + n_slack;
        for (r, (coeffs, relation, rhs)) in normalized.iter().enumerate() {
            let row = &mut data[r * width..(r + 1) * width];
            row[..n_struct].copy_from_slice(coeffs);
            row[cols] = *rhs;
            match relation {
                Relation::Le => {
                    row[next_slack] = 1.0;
                    basis[r] = next_slack;
                    next_slack += 1;
                }
                Relation::Ge => {
                    row[next_slack] = -1.0;
                    next_slack += 1;
                    row[next_art] = 1.0;
                    basis[r] = next_art;
                    next_art += 1;
                }
                Relation::Eq => {
                    row[next_art] = 1.0;
                    basis[r] = next_art;
                    next_art += 1;
                }
            }
        }

        let orig = data.clone();
        Self {
            rows,
            cols,
            data,
            basis,
            kinds,
            col_map,
            n_orig: n,
            cost,
            mirror,
            orig,
            pivots: 0,
            since_refactor: 0,
        }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize, obj: &mut [f64]) {
        let width = self.cols + 1;
        let pv = self.at(pr, pc);
        for c in 0..width {
            self.data[pr * width + c] /= pv;
        }
        self.data[pr * width + pc] = 1.0;
        let pivot_row: Vec<f64> = self.data[pr * width..(pr + 1) * width].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.data[r * width + pc];
            if f != 0.0 {
                let row = &mut self.data[r * width..(r + 1) * width];
                for (x, p) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * p;
                }
                row[pc] = 0.0;
            }
        }
        let f = obj[pc];
        if f != 0.0 {
            for (x, p) in obj.iter_mut().zip(&pivot_row) {
                *x -= f * p;
            }
            obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.pivots += 1;
        self.since_refactor += 1;
    }

    /// Reduced-cost row (last entry is minus the objective value).
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let width = self.cols + 1;
        let mut obj = vec![0.0; width];
        obj[..self.cols].copy_from_slice(cost);
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                let row = &self.data[r * width..(r + 1) * width];
                for (o, a) in obj.iter_mut().zip(row) {
                    *o -= cb * a;
                }
            }
        }
        obj
    }

    /// A column whose mirror is basic has tableau column `−e_r` in exact
    /// arithmetic, so any positive entry is rounding noise. It can only improve
    /// the objective along an unbounded ray, when the two costs sum below zero.
    fn mirror_blocked(&self, c: usize, costs: &[f64]) -> Result<bool> {
        let Some(m) = self.mirror.get(c).copied().flatten() else {
            return Ok(false);
        };
        if !self.basis.contains(&m) {
            return Ok(false);
        }
        if costs[c] + costs[m] < -COST_TOL {
            return Err(DscError::LpUnbounded);
        }
        Ok(true)
    }

    /// Recompute the tableau as `B⁻¹ [A | b]` from the original data to shed
    /// accumulated rounding. Leaves the tableau untouched if `B` is singular.
    fn refactor(&mut self) -> bool {
        let width = self.cols + 1;
        let b = DMatrix::from_fn(self.rows, self.rows, |r, k| self.orig[r * width + self.basis[k]]);
        let orig = DMatrix::from_row_slice(self.rows, width, &self.orig);
        let Some(fresh) = b.lu().solve(&orig) else {
            return false;
        };
        if fresh.iter().any(|v| !v.is_finite()) {
            return false;
        }
        for r in 0..self.rows {
            for c in 0..width {
                self.data[r * width + c] = fresh[(r, c)];
            }
        }
        for (r, &c) in self.basis.iter().enumerate() {
            for k in 0..self.rows {
                self.data[k * width + c] = if k == r { 1.0 } else { 0.0 };
            }
        }
        self.since_refactor = 0;
        true
    }

    /// Bland's rule over columns, Harris ratio test over rows.
    fn optimize(&mut self, obj: &mut [f64], costs: &[f64], allow: impl Fn(ColKind) -> bool) -> Result<()> {
        let mut degenerate_run = 0;
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(DscError::LpNumericalFailure("pivot limit reached".into()));
            }
            if self.since_refactor >= REFACTOR_EVERY && self.refactor() {
                obj.copy_from_slice(&self.reduced_costs(costs));
            }
            let mut entering = None;
            for c in 0..self.cols {
                if allow(self.kinds[c]) && obj[c] < -COST_TOL && !self.mirror_blocked(c, costs)? {
                    entering = Some(c);
                    break;
                }
            }
            let Some(pc) = entering else {
                return Ok(());
            };
            // Harris two-pass ratio test: bound the step with rhs relaxed by
            // FEAS_TOL, then pivot on the largest entry within that bound.
            let eligible: Vec<(usize, f64)> = (0..self.rows)
                .filter_map(|r| {
                    let a = self.at(r, pc);
                    (a > PIVOT_TOL).then_some((r, a))
                })
                .collect();
            let step = eligible
                .iter()
                .map(|&(r, a)| (self.rhs(r).max(0.0) + FEAS_TOL) / a)
                .fold(f64::INFINITY, f64::min);
            let best = if degenerate_run < DEGENERATE_LIMIT {
                eligible
                    .iter()
                    .filter(|&&(r, a)| self.rhs(r).max(0.0) / a <= step)
                    .max_by(|x, y| x.1.total_cmp(&y.1).then_with(|| self.basis[y.0].cmp(&self.basis[x.0])))
                    .map(|&(r, a)| (r, self.rhs(r).max(0.0) / a))
            } else {
                // strict Bland: minimum ratio, lowest basic index on ties
                let min = eligible
                    .iter()
                    .map(|&(r, a)| self.rhs(r).max(0.0) / a)
                    .fold(f64::INFINITY, f64::min);
                eligible
                    .iter()
                    .map(|&(r, a)| (r, self.rhs(r).max(0.0) / a))
                    .filter(|&(_, t)| t <= min)
                    .min_by_key(|&(r, _)| self.basis[r])
            };
            let Some((pr, ratio)) = best else {
                if self.since_refactor > 0 && self.refactor() {
                    obj.copy_from_slice(&self.reduced_costs(costs));
                    continue;
                }
                return Err(DscError::LpUnbounded);
            };
            if ratio <= FEAS_TOL {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(pr, pc, obj);
        }
    }

    fn run(mut self) -> Result<LpSolution> {
        let has_art = self.kinds.contains(&ColKind::Artificial);
        if has_art {
            let phase1: Vec<f64> = self
                .kinds
                .iter()
                .map(|k| if *k == ColKind::Artificial { 1.0 } else { 0.0 })
                .collect();
            let mut obj = self.reduced_costs(&phase1);
            self.optimize(&mut obj, &phase1, |_| true)?;
            let infeas = -obj[self.cols];
            let scale = 1.0 + (0..self.rows).map(|r| self.rhs(r).abs()).fold(0.0, f64::max);
            if infeas > FEAS_TOL * scale {
                return Err(DscError::LpInfeasible);
            }
            // Drive remaining (zero-level) artificials out of the basis.
            let mut r = 0;
            while r < self.rows {
                if self.kinds[self.basis[r]] == ColKind::Artificial {
                    let candidate = (0..self.cols)
                        .filter(|&c| self.kinds[c] != ColKind::Artificial && self.at(r, c).abs() > 1e-9)
                        .max_by(|&a, &b| self.at(r, a).abs().total_cmp(&self.at(r, b).abs()));
                    match candidate {
                        Some(pc) => {
                            let mut dummy = vec![0.0; self.cols + 1];
                            self.pivot(r, pc, &mut dummy);
                            r += 1;
                        }
                        // redundant row: the artificial stays basic at zero
                        None => r += 1,
                    }
                } else {
                    r += 1;
                }
            }
        }
        let cost = self.cost.clone();
        let mut obj = self.reduced_costs(&cost);
        self.optimize(&mut obj, &cost, |k| k != ColKind::Artificial)?;

        let mut x = vec![0.0; self.n_orig];
        for r in 0..self.rows {
            let c = self.basis[r];
            if c < self.col_map.len() {
                let (v, sign) = self.col_map[c];
                x[v] += sign * self.rhs(r);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DscError::LpNumericalFailure("non-finite solution".into()));
        }
        let objective = self
            .col_map
            .iter()
            .enumerate()
            .filter(|(c, _)| self.kinds[*c] == ColKind::Structural)
            .map(|(c, _)| c)
            .fold(0.0, |acc, c| acc + self.cost[c] * self.column_value(c));
        Ok(LpSolution {
            x,
            objective,
            pivots: self.pivots,
        })
    }

    fn column_value(&self, c: usize) -> f64 {
        self.basis
            .iter()
            .position(|&b| b == c)
            .map(|r| self.rhs(r))
            .unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-3.0, -5.0];
        lp.add(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.add(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.add(vec![3.0, 2.0], Relation::Le, 18.0);
        let sol = lp.solve().unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-9);
        assert!((sol.x[1] - 6.0).abs() < 1e-9);
        assert!((sol.objective + 36.0).abs() < 1e-9);
    }

    #[test]
    fn free_variables_and_equalities() {
        // min |x| + |y| written as epigraph, with x + y = -2: optimum 2
        let mut lp = LinearProgram::new(4); // x, y, tx, ty
        lp.free[0] = true;
        lp.free[1] = true;
        lp.objective = vec![0.0, 0.0, 1.0, 1.0];
        lp.add(vec![1.0, 1.0, 0.0, 0.0], Relation::Eq, -2.0);
        lp.add(vec![1.0, 0.0, -1.0, 0.0], Relation::Le, 0.0);
        lp.add(vec![-1.0, 0.0, -1.0, 0.0], Relation::Le, 0.0);
        lp.add(vec![0.0, 1.0, 0.0, -1.0], Relation::Le, 0.0);
        lp.add(vec![0.0, -1.0, 0.0, -1.0], Relation::Le, 0.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-9);
        assert!((sol.x[0] + sol.x[1] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinearProgram::new(1);
        lp.add(vec![1.0], Relation::Ge, 2.0);
        lp.add(vec![1.0], Relation::Le, 1.0);
        assert!(matches!(lp.solve(), Err(DscError::LpInfeasible)));
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![-1.0];
        lp.add(vec![1.0], Relation::Ge, 0.0);
        assert!(matches!(lp.solve(), Err(DscError::LpUnbounded)));
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 1.0];
        lp.add(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add(vec![2.0, 2.0], Relation::Eq, 2.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-9);
    }
}

//! A small, deterministic dense linear-program solver.
//!
//! Two-phase primal simplex with Bland's rule (lowest eligible index enters,
//! ties in the ratio test resolved toward the lowest basic index). Bland's
//! rule precludes cycling, and the fixed tie-breaking makes every solve
//! reproducible bit-for-bit across runs and platforms, which the decoy
//! bounds inherit.
//!
//! Problems here are tiny (tens of variables and rows), so a dense tableau
//! is the right tool.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("linear program infeasible; violated constraints: {violated:?}")]
    Infeasible { violated: Vec<String> },
    #[error("linear program unbounded")]
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
    pub label: String,
}

/// `min c·x` subject to the constraints and `0 ≤ x_j ≤ upper[j]`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub n_vars: usize,
    pub var_names: Vec<String>,
    pub upper_bounds: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
}

const PIVOT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-8;

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        LinearProgram {
            n_vars,
            var_names: (0..n_vars).map(|j| format!("x{j}")).collect(),
            upper_bounds: vec![f64::INFINITY; n_vars],
            constraints: Vec::new(),
        }
    }

    pub fn push(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64, label: impl Into<String>) {
        debug_assert_eq!(coeffs.len(), self.n_vars);
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
            label: label.into(),
        });
    }

    pub fn minimize(&self, objective: &[f64]) -> Result<Solution, LpError> {
        Tableau::build(self).solve(objective)
    }

    pub fn maximize(&self, objective: &[f64]) -> Result<Solution, LpError> {
        let negated: Vec<f64> = objective.iter().map(|c| -c).collect();
        let mut sol = self.minimize(&negated)?;
        sol.objective = -sol.objective;
        Ok(sol)
    }

    /// Human-readable constraint listing.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "variables: {}", self.n_vars);
        for (j, name) in self.var_names.iter().enumerate() {
            if self.upper_bounds[j].is_finite() {
                let _ = writeln!(s, "  0 <= {name} <= {}", self.upper_bounds[j]);
            } else {
                let _ = writeln!(s, "  0 <= {name}");
            }
        }
        for c in &self.constraints {
            let mut terms = Vec::new();
            for (j, &a) in c.coeffs.iter().enumerate() {
                if a != 0.0 {
                    terms.push(format!("{:+.6e}·{}", a, self.var_names[j]));
                }
            }
            let op = match c.relation {
                Relation::Le => "<=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(s, "{}: {} {} {:.6e}", c.label, terms.join(" "), op, c.rhs);
        }
        s
    }
}

struct Tableau {
    /// rows × (n_total + 1); last column is the rhs.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_struct: usize,
    n_total: usize,
    artificial_start: usize,
    row_labels: Vec<String>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        // Materialize upper bounds as rows, then normalize every row to
        // non-negative rhs and unit max coefficient.
        let mut raw: Vec<(Vec<f64>, Relation, f64, String)> = Vec::new();
        for c in &lp.constraints {
            raw.push((c.coeffs.clone(), c.relation, c.rhs, c.label.clone()));
        }
        for j in 0..lp.n_vars {
            if lp.upper_bounds[j].is_finite() {
                let mut coeffs = vec![0.0; lp.n_vars];
                coeffs[j] = 1.0;
                raw.push((
                    coeffs,
                    Relation::Le,
                    lp.upper_bounds[j],
                    format!("ub[{}]", lp.var_names[j]),
                ));
            }
        }

        let m = raw.len();
        let mut needs_surplus = Vec::with_capacity(m);
        for (coeffs, relation, rhs, _) in raw.iter_mut() {
            let scale = coeffs
                .iter()
                .map(|a| a.abs())
                .fold(0.0f64, f64::max)
                .max(1e-30);
            coeffs.iter_mut().for_each(|a| *a /= scale);
            *rhs /= scale;
            if *rhs < 0.0 {
                coeffs.iter_mut().for_each(|a| *a = -*a);
                *rhs = -*rhs;
                *relation = match *relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                };
            }
            needs_surplus.push(*relation == Relation::Ge);
        }

        // Columns: structural | slack/surplus (one per row) | artificials
        // (for Ge rows with positive rhs).
        let n_struct = lp.n_vars;
        let slack_start = n_struct;
        let artificial_start = slack_start + m;
        let n_art = needs_surplus
            .iter()
            .zip(raw.iter())
            .filter(|(&ge, (_, _, rhs, _))| ge && *rhs > 0.0)
            .count();
        let n_total = artificial_start + n_art;

        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut row_labels = Vec::with_capacity(m);
        let mut art = artificial_start;
        for (i, (coeffs, relation, rhs, label)) in raw.into_iter().enumerate() {
            let mut row = vec![0.0; n_total + 1];
            row[..n_struct].copy_from_slice(&coeffs);
            row[n_total] = rhs;
            match relation {
                Relation::Le => {
                    row[slack_start + i] = 1.0;
                    basis.push(slack_start + i);
                }
                Relation::Ge => {
                    row[slack_start + i] = -1.0;
                    if rhs > 0.0 {
                        row[art] = 1.0;
                        basis.push(art);
                        art += 1;
                    } else {
                        // Degenerate: 0 rhs, start from the surplus at zero.
                        row.iter_mut().for_each(|a| *a = -*a);
                        row[slack_start + i] = 1.0;
                        basis.push(slack_start + i);
                    }
                }
            }
            rows.push(row);
            row_labels.push(label);
        }

        Tableau {
            rows,
            basis,
            n_struct,
            n_total,
            artificial_start,
            row_labels,
        }
    }

    fn solve(mut self, objective: &[f64]) -> Result<Solution, LpError> {
        // Phase 1: drive the artificials to zero.
        if self.artificial_start < self.n_total {
            let mut cost = vec![0.0; self.n_total + 1];
            for j in self.artificial_start..self.n_total {
                cost[j] = 1.0;
            }
            self.reduce_cost_row(&mut cost);
            self.iterate(&mut cost, self.n_total)?;
            let phase1 = -cost[self.n_total];
            if phase1 > FEAS_TOL {
                let violated: Vec<String> = self
                    .basis
                    .iter()
                    .enumerate()
                    .filter(|(i, &b)| b >= self.artificial_start && self.rows[*i][self.n_total] > FEAS_TOL)
                    .map(|(i, _)| self.row_labels[i].clone())
                    .collect();
                return Err(LpError::Infeasible { violated });
            }
            // Pivot remaining zero-level artificials out of the basis where
            // possible; rows where no pivot exists are redundant.
            for i in 0..self.rows.len() {
                if self.basis[i] >= self.artificial_start {
                    if let Some(j) = (0..self.artificial_start)
                        .find(|&j| self.rows[i][j].abs() > PIVOT_TOL)
                    {
                        self.pivot(i, j, &mut cost);
                    }
                }
            }
        }

        // Phase 2 with the real objective; artificial columns are barred
        // from entering.
        let mut cost = vec![0.0; self.n_total + 1];
        cost[..objective.len()].copy_from_slice(objective);
        self.reduce_cost_row(&mut cost);
        self.iterate(&mut cost, self.artificial_start)?;

        let mut x = vec![0.0; self.n_struct];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n_struct {
                x[b] = self.rows[i][self.n_total];
            }
        }
        let objective_value = objective
            .iter()
            .zip(&x)
            .map(|(c, v)| c * v)
            .sum::<f64>();
        Ok(Solution {
            x,
            objective: objective_value,
        })
    }

    /// Express the cost row in terms of the current non-basic variables.
    fn reduce_cost_row(&self, cost: &mut [f64]) {
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                let row = &self.rows[i];
                for j in 0..=self.n_total {
                    cost[j] -= cb * row[j];
                }
            }
        }
    }

    /// Primal simplex iterations with Bland's rule. Columns at or above
    /// `enter_limit` may not enter the basis.
    fn iterate(&mut self, cost: &mut Vec<f64>, enter_limit: usize) -> Result<(), LpError> {
        loop {
            // Entering: lowest index with negative reduced cost.
            let entering = (0..enter_limit).find(|&j| cost[j] < -PIVOT_TOL);
            let Some(j) = entering else {
                return Ok(());
            };
            // Ratio test; ties toward the lowest basic variable index.
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][j];
                if a > PIVOT_TOL {
                    let ratio = self.rows[i][self.n_total] / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((best_i, best_r)) => {
                            if ratio < best_r - 1e-12
                                || ((ratio - best_r).abs() <= 1e-12
                                    && self.basis[i] < self.basis[best_i])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((i, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            self.pivot(i, j, cost);
        }
    }

    fn pivot(&mut self, pivot_row: usize, pivot_col: usize, cost: &mut [f64]) {
        let p = self.rows[pivot_row][pivot_col];
        let row: Vec<f64> = self.rows[pivot_row].iter().map(|a| a / p).collect();
        self.rows[pivot_row] = row.clone();
        for (i, r) in self.rows.iter_mut().enumerate() {
            if i != pivot_row {
                let f = r[pivot_col];
                if f != 0.0 {
                    for (rj, pj) in r.iter_mut().zip(&row) {
                        *rj -= f * pj;
                    }
                    r[pivot_col] = 0.0;
                }
            }
        }
        let f = cost[pivot_col];
        if f != 0.0 {
            for (cj, pj) in cost.iter_mut().zip(&row) {
                *cj -= f * pj;
            }
            cost[pivot_col] = 0.0;
        }
        self.basis[pivot_row] = pivot_col;
    }
}

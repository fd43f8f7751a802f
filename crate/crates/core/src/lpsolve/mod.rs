//! Linear programming behind a small solver abstraction.
//!
//! Problems are stated as
//!
//! ```text
//! minimize  c·z
//! s.t.      a_i·z <= b_i   (ineq)
//!           e_i·z  = f_i   (eq)
//!           lo_j <= z_j <= hi_j
//! ```
//!
//! with sparse constraint rows. [`DenseSimplex`] is the bundled solver; any
//! other implementation of [`LpSolver`] can be injected where a solver is
//! accepted.

mod simplex;

pub use simplex::DenseSimplex;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One sparse linear row `terms·z (<= | =) rhs`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { terms, rhs }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * z[j]).sum()
    }

    fn scale(&self) -> f64 {
        self.terms.iter().fold(0.0_f64, |m, &(_, a)| m.max(a.abs()))
    }

    /// Residual `terms·z − rhs` divided by the largest coefficient magnitude.
    pub fn scaled_residual(&self, z: &[f64]) -> f64 {
        let s = self.scale();
        let r = self.eval(z) - self.rhs;
        if s > 0.0 {
            r / s
        } else {
            r
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub ineq: Vec<LinearConstraint>,
    pub eq: Vec<LinearConstraint>,
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// Empty program over `num_vars` free variables with zero objective.
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            ineq: Vec::new(),
            eq: Vec::new(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); num_vars],
        }
    }

    /// Builds a program from dense rows.
    pub fn from_dense(
        objective: Vec<f64>,
        a: &[Vec<f64>],
        b: &[f64],
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if a.len() != b.len() {
            return invalid("row count of A and b differ");
        }
        let n = objective.len();
        let mut lp = Self::new(n);
        lp.objective = objective;
        lp.bounds = bounds;
        for (row, &rhs) in a.iter().zip(b) {
            if row.len() != n {
                return invalid("constraint row length differs from objective length");
            }
            let terms = row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, &v)| (j, v))
                .collect();
            lp.ineq.push(LinearConstraint::new(terms, rhs));
        }
        lp.validate()?;
        Ok(lp)
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_ineq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.ineq.push(LinearConstraint::new(terms, rhs));
        self.ineq.len() - 1
    }

    pub fn add_eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.eq.push(LinearConstraint::new(terms, rhs));
        self.eq.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return invalid(format!(
                "bounds length {} differs from variable count {n}",
                self.bounds.len()
            ));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return invalid("objective has non-finite entries");
        }
        for (lo, hi) in &self.bounds {
            if lo.is_nan() || hi.is_nan() || *lo == f64::INFINITY || *hi == f64::NEG_INFINITY {
                return invalid("malformed variable bound");
            }
        }
        for row in self.ineq.iter().chain(&self.eq) {
            if !row.rhs.is_finite() {
                return invalid("constraint right-hand side is not finite");
            }
            for &(j, a) in &row.terms {
                if j >= n {
                    return invalid(format!("term index {j} out of range for {n} variables"));
                }
                if !a.is_finite() {
                    return invalid("constraint coefficient is not finite");
                }
            }
        }
        Ok(())
    }

    pub fn objective_at(&self, z: &[f64]) -> f64 {
        self.objective.iter().zip(z).map(|(c, x)| c * x).sum()
    }

    /// Largest scaled violation over all rows and bounds (zero when feasible).
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for row in &self.ineq {
            worst = worst.max(row.scaled_residual(z));
        }
        for row in &self.eq {
            worst = worst.max(row.scaled_residual(z).abs());
        }
        for (x, (lo, hi)) in z.iter().zip(&self.bounds) {
            worst = worst.max(lo - x).max(x - hi);
        }
        worst
    }

    /// Dual objective of a multiplier vector `y` (ineq rows first, then eq
    /// rows) under the Lagrangian `c·z − y·(Az − b)`. Returns `None` when the
    /// multipliers are not dual feasible within `tol`.
    pub fn dual_objective(&self, y: &[f64], tol: f64) -> Option<f64> {
        if y.len() != self.ineq.len() + self.eq.len() {
            return None;
        }
        let mut reduced = self.objective.clone();
        let mut value = 0.0;
        for (row, &yi) in self.ineq.iter().zip(y).chain(self.eq.iter().zip(&y[self.ineq.len()..])) {
            value += yi * row.rhs;
            for &(j, a) in &row.terms {
                reduced[j] -= yi * a;
            }
        }
        if y[..self.ineq.len()].iter().any(|&yi| yi > tol) {
            return None;
        }
        for (r, (lo, hi)) in reduced.iter().zip(&self.bounds) {
            if *r > tol {
                if !lo.is_finite() {
                    return None;
                }
                value += r * lo;
            } else if *r < -tol {
                if !hi.is_finite() {
                    return None;
                }
                value += r * hi;
            } else {
                let pick = if lo.is_finite() { *lo } else if hi.is_finite() { *hi } else { 0.0 };
                value += r * pick;
            }
        }
        Some(value)
    }

    /// Writes the program in a plain fixed text layout: an `obj` row, one
    /// `le`/`eq` row per constraint (dense coefficients then rhs) and a
    /// `bounds` section.
    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.num_vars();
        writeln!(w, "vars {n} ineq {} eq {}", self.ineq.len(), self.eq.len())?;
        write!(w, "obj")?;
        for c in &self.objective {
            write!(w, " {c:.17e}")?;
        }
        writeln!(w)?;
        for (tag, rows) in [("le", &self.ineq), ("eq", &self.eq)] {
            for row in rows {
                let mut dense = vec![0.0; n];
                for &(j, a) in &row.terms {
                    dense[j] += a;
                }
                write!(w, "{tag}")?;
                for a in dense {
                    write!(w, " {a:.17e}")?;
                }
                writeln!(w, " | {:.17e}", row.rhs)?;
            }
        }
        writeln!(w, "bounds")?;
        for (lo, hi) in &self.bounds {
            writeln!(w, "{lo:.17e} {hi:.17e}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Iteration cap reached before a decision; distinct from infeasibility.
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub z: Vec<f64>,
    pub objective_value: f64,
    /// Multipliers from the final basis, inequality rows first.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub(crate) fn non_optimal(status: LpStatus, n: usize, rows: usize, iterations: usize) -> Self {
        Self {
            status,
            z: vec![0.0; n],
            objective_value: f64::NAN,
            duals: vec![0.0; rows],
            iterations,
        }
    }
}

pub trait LpSolver: Send + Sync {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution>;
}

/// Solves with the bundled dense simplex and default settings.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    DenseSimplex::default().solve(lp)
}

/// Solves `lp` by generating inequality rows on demand.
///
/// Rows listed in `lazy_groups` start inactive; every other inequality row
/// and all equality rows are always present. After each solve the most
/// violated row of every group (scaled residual above `tol`) is activated.
/// The returned solution is optimal for the full program; duals of rows that
/// never became active are zero.
pub fn solve_with_row_generation(
    solver: &dyn LpSolver,
    lp: &LinearProgram,
    lazy_groups: &[Vec<usize>],
    tol: f64,
) -> Result<LpSolution> {
    lp.validate()?;
    let mut lazy = vec![false; lp.ineq.len()];
    for group in lazy_groups {
        for &i in group {
            if i >= lp.ineq.len() {
                return invalid(format!("lazy row {i} out of range"));
            }
            lazy[i] = true;
        }
    }
    let mut active: Vec<usize> = (0..lp.ineq.len()).filter(|&i| !lazy[i]).collect();
    let mut is_active: Vec<bool> = lazy.iter().map(|l| !l).collect();
    let max_rounds = 100 + lazy_groups.len();
    let mut iterations = 0;

    for _ in 0..max_rounds {
        let sub = LinearProgram {
            objective: lp.objective.clone(),
            ineq: active.iter().map(|&i| lp.ineq[i].clone()).collect(),
            eq: lp.eq.clone(),
            bounds: lp.bounds.clone(),
        };
        let sol = solver.solve(&sub)?;
        iterations += sol.iterations;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Unbounded => break,
            LpStatus::Infeasible | LpStatus::IterationLimit => {
                let rows = lp.ineq.len() + lp.eq.len();
                return Ok(LpSolution::non_optimal(sol.status, lp.num_vars(), rows, iterations));
            }
        }
        let mut added = 0;
        for group in lazy_groups {
            let mut worst: Option<(usize, f64)> = None;
            for &i in group {
                if is_active[i] {
                    continue;
                }
                let r = lp.ineq[i].scaled_residual(&sol.z);
                if r > tol && worst.is_none_or(|(_, w)| r > w) {
                    worst = Some((i, r));
                }
            }
            if let Some((i, _)) = worst {
                is_active[i] = true;
                active.push(i);
                added += 1;
            }
        }
        if added == 0 {
            let mut duals = vec![0.0; lp.ineq.len() + lp.eq.len()];
            for (k, &i) in active.iter().enumerate() {
                duals[i] = sol.duals[k];
            }
            duals[lp.ineq.len()..].copy_from_slice(&sol.duals[active.len()..]);
            return Ok(LpSolution {
                duals,
                iterations,
                ..sol
            });
        }
    }
    log::debug!("row generation fell back to the full program");
    let mut sol = solver.solve(lp)?;
    sol.iterations += iterations;
    Ok(sol)
}

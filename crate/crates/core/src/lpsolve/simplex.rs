//! Two-phase bounded-variable primal simplex on a dense tableau.

use nalgebra::{DMatrix, DVector};

use super::{LinearProgram, LpSolution, LpSolver, LpStatus};
use crate::error::Result;

/// Dense tableau simplex. Dantzig pricing with a Harris ratio test,
/// switching to Bland's rule while a run of degenerate pivots longer than
/// `stall_limit` is in progress.
#[derive(Clone, Debug)]
pub struct DenseSimplex {
    /// Pivot cap; `None` means `50 * (rows + cols)`.
    pub max_iter: Option<usize>,
    pub stall_limit: usize,
    pub pivot_tol: f64,
    pub cost_tol: f64,
    pub feas_tol: f64,
    /// Bound relaxation of the Harris ratio test; kept well below
    /// `feas_tol` so accepted overshoots stay invisible to the feasibility checks.
    pub harris_tol: f64,
    /// Pivots between rebuilds of the tableau from the original rows;
    /// `0` rebuilds only when a phase ends suspiciously.
    pub refactor_interval: usize,
}

impl Default for DenseSimplex {
    fn default() -> Self {
        Self {
            max_iter: None,
            stall_limit: 50,
            pivot_tol: 1e-10,
            cost_tol: 1e-10,
            feas_tol: 1e-9,
            harris_tol: 1e-11,
            refactor_interval: 0,
        }
    }
}

/// How an original variable is expressed through tableau columns.
#[derive(Clone, Copy, Debug)]
enum VarMap {
    /// z = lo + col
    Shift { col: usize, lo: f64 },
    /// z = hi − col
    Mirror { col: usize, hi: f64 },
    /// z = col⁺ − col⁻
    Split { pos: usize, neg: usize },
}

struct Tableau {
    rows: usize,
    cols: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    ub: Vec<f64>,
    d: Vec<f64>,
    /// Initial tableau and right-hand side, kept for reinversion.
    t0: Vec<f64>,
    b0: Vec<f64>,
    cost: Vec<f64>,
}

enum Phase {
    Done,
    Unbounded,
    Limit,
}

impl Tableau {
    fn row(&self, i: usize) -> &[f64] {
        &self.t[i * self.cols..(i + 1) * self.cols]
    }

    fn reset_costs(&mut self, cost: &[f64]) {
        self.cost.clear();
        self.cost.extend_from_slice(cost);
        self.d.copy_from_slice(cost);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.cols..(i + 1) * self.cols];
                for (dj, a) in self.d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        for i in 0..self.rows {
            self.d[self.basis[i]] = 0.0;
        }
    }

    /// Recomputes `B⁻¹A`, the basic values and the reduced costs for the
    /// current basis, discarding the rounding error of earlier pivots.
    fn refactor(&mut self) -> bool {
        let (m, cols) = (self.rows, self.cols);
        if m == 0 {
            return true;
        }
        let b = DMatrix::from_fn(m, m, |i, k| self.t0[i * cols + self.basis[k]]);
        let Some(binv) = b.try_inverse() else {
            return false;
        };
        let a = DMatrix::from_row_slice(m, cols, &self.t0);
        let mut rhs = DVector::from_column_slice(&self.b0);
        for j in 0..cols {
            if !self.is_basic[j] && self.at_upper[j] && self.ub[j] != 0.0 {
                for i in 0..m {
                    rhs[i] -= self.t0[i * cols + j] * self.ub[j];
                }
            }
        }
        let x = &binv * a;
        let beta = &binv * rhs;
        for i in 0..m {
            for j in 0..cols {
                self.t[i * cols + j] = x[(i, j)];
            }
            for k in 0..m {
                self.t[i * cols + self.basis[k]] = if i == k { 1.0 } else { 0.0 };
            }
            self.beta[i] = beta[i];
        }
        let cost = std::mem::take(&mut self.cost);
        self.reset_costs(&cost);
        true
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.t[r * cols + j];
        let inv = 1.0 / p;
        for a in &mut self.t[r * cols..(r + 1) * cols] {
            *a *= inv;
        }
        self.t[r * cols + j] = 1.0;
        let prow: Vec<f64> = self.row(r).to_vec();
        let nz: Vec<usize> = prow
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, _)| k)
            .collect();
        let dense = nz.len() * 3 > cols;
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * cols + j];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * cols..(i + 1) * cols];
            if dense {
                for (a, b) in row.iter_mut().zip(&prow) {
                    *a -= f * b;
                }
            } else {
                for &k in &nz {
                    row[k] -= f * prow[k];
                }
            }
            row[j] = 0.0;
        }
        let f = self.d[j];
        if f != 0.0 {
            for &k in &nz {
                self.d[k] -= f * prow[k];
            }
            self.d[j] = 0.0;
        }
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[j] = true;
        self.basis[r] = j;
    }

    /// Step to the blocking bound of every basic variable along column `j`:
    /// `(row, exact step, step with the bound relaxed by tol, to_upper)`.
    fn blocking_rows(&self, j: usize, dir: f64, pivot_tol: f64, tol: f64) -> Vec<(usize, f64, f64, bool)> {
        let mut out = Vec::new();
        for i in 0..self.rows {
            let alpha = self.t[i * self.cols + j] * dir;
            if alpha.abs() <= pivot_tol {
                continue;
            }
            let b = self.basis[i];
            if alpha > 0.0 {
                let room = self.beta[i].max(0.0);
                out.push((i, room / alpha, (room + tol) / alpha, false));
            } else if self.ub[b].is_finite() {
                let room = (self.ub[b] - self.beta[i]).max(0.0);
                out.push((i, room / -alpha, (room + tol) / -alpha, true));
            }
        }
        out
    }

    /// Smallest ratio, ties to the lowest basic index (anti-cycling).
    fn ratio_test_bland(&self, j: usize, dir: f64, pivot_tol: f64) -> (f64, Option<(usize, bool)>) {
        let mut step = self.ub[j];
        let mut leave: Option<(usize, bool)> = None;
        for (i, t, _, up) in self.blocking_rows(j, dir, pivot_tol, 0.0) {
            let better = match leave {
                _ if t < step - 1e-12 => true,
                Some((li, _)) if t <= step + 1e-12 => self.basis[i] < self.basis[li],
                _ => false,
            };
            if better {
                step = step.min(t);
                leave = Some((i, up));
            }
        }
        (step, leave)
    }

    /// Two-pass Harris test: among rows whose ratio is within the relaxed
    /// minimum, take the largest pivot.
    fn ratio_test_harris(&self, j: usize, dir: f64, pivot_tol: f64, tol: f64) -> (f64, Option<(usize, bool)>) {
        let rows = self.blocking_rows(j, dir, pivot_tol, tol);
        let bound = rows.iter().fold(self.ub[j], |m, r| m.min(r.2));
        if !bound.is_finite() {
            return (f64::INFINITY, None);
        }
        let mut best: Option<(usize, f64, bool, f64)> = None;
        for &(i, t, _, up) in &rows {
            if t <= bound {
                let mag = self.t[i * self.cols + j].abs();
                if best.is_none_or(|b| mag > b.3) {
                    best = Some((i, t, up, mag));
                }
            }
        }
        match best {
            Some((_, t, _, _)) if self.ub[j] <= t => (self.ub[j], None),
            Some((i, t, up, _)) => (t, Some((i, up))),
            None => (self.ub[j], None),
        }
    }

    /// Runs simplex iterations for the cost currently loaded in `d`.
    fn run(&mut self, opts: &DenseSimplex, max_iter: usize, iters: &mut usize) -> Phase {
        let mut degenerate_run = 0usize;
        let mut since_refactor = 0usize;
        loop {
            if *iters >= max_iter {
                return Phase::Limit;
            }
            if opts.refactor_interval > 0 && since_refactor >= opts.refactor_interval {
                self.refactor();
                since_refactor = 0;
            }
            let bland = degenerate_run > opts.stall_limit;
            let mut enter: Option<(usize, f64)> = None;
            for j in 0..self.cols {
                if self.is_basic[j] || self.ub[j] <= 0.0 {
                    continue;
                }
                let dj = self.d[j];
                let eligible = if self.at_upper[j] { dj > opts.cost_tol } else { dj < -opts.cost_tol };
                if !eligible {
                    continue;
                }
                if bland {
                    enter = Some((j, dj));
                    break;
                }
                if enter.is_none_or(|(_, best)| dj.abs() > best.abs()) {
                    enter = Some((j, dj));
                }
            }
            let Some((j, _)) = enter else {
                return Phase::Done;
            };
            let dir = if self.at_upper[j] { -1.0 } else { 1.0 };

            let (step, leave) = if bland {
                self.ratio_test_bland(j, dir, opts.pivot_tol)
            } else {
                self.ratio_test_harris(j, dir, opts.pivot_tol, opts.harris_tol)
            };
            if !step.is_finite() {
                return Phase::Unbounded;
            }
            *iters += 1;
            since_refactor += 1;
            if step <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            for i in 0..self.rows {
                let alpha = self.t[i * self.cols + j] * dir;
                if alpha != 0.0 {
                    self.beta[i] -= step * alpha;
                }
            }
            match leave {
                None => {
                    self.at_upper[j] = !self.at_upper[j];
                }
                Some((r, to_upper)) => {
                    let entering_value = if self.at_upper[j] { self.ub[j] - step } else { step };
                    let leaving = self.basis[r];
                    self.at_upper[leaving] = to_upper;
                    self.at_upper[j] = false;
                    self.pivot(r, j);
                    self.beta[r] = entering_value;
                }
            }
        }
    }

    fn value(&self, col: usize, basic_values: &[f64]) -> f64 {
        if self.is_basic[col] {
            basic_values[col]
        } else if self.at_upper[col] {
            self.ub[col]
        } else {
            0.0
        }
    }
}

impl LpSolver for DenseSimplex {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution> {
        lp.validate()?;
        let n = lp.num_vars();
        let total_rows = lp.ineq.len() + lp.eq.len();

        // Column maps for the original variables.
        let mut maps = Vec::with_capacity(n);
        let mut ub = Vec::new();
        for &(lo, hi) in &lp.bounds {
            if lo > hi + self.feas_tol {
                return Ok(LpSolution::non_optimal(LpStatus::Infeasible, n, total_rows, 0));
            }
            let col = ub.len();
            if lo.is_finite() {
                maps.push(VarMap::Shift { col, lo });
                ub.push((hi - lo).max(0.0));
            } else if hi.is_finite() {
                maps.push(VarMap::Mirror { col, hi });
                ub.push(f64::INFINITY);
            } else {
                maps.push(VarMap::Split { pos: col, neg: col + 1 });
                ub.push(f64::INFINITY);
                ub.push(f64::INFINITY);
            }
        }
        let structural = ub.len();

        // Internal rows: dense structural coefficients, rhs, kind.
        struct Row {
            coef: Vec<f64>,
            rhs: f64,
            slack: bool,
            orig: usize,
            rho: f64,
        }
        let mut rows: Vec<Row> = Vec::with_capacity(total_rows);
        let all = lp.ineq.iter().map(|r| (r, true)).chain(lp.eq.iter().map(|r| (r, false)));
        for (orig, (con, is_ineq)) in all.enumerate() {
            let mut coef = vec![0.0; structural];
            let mut rhs = con.rhs;
            for &(j, a) in &con.terms {
                match maps[j] {
                    VarMap::Shift { col, lo } => {
                        coef[col] += a;
                        rhs -= a * lo;
                    }
                    VarMap::Mirror { col, hi } => {
                        coef[col] -= a;
                        rhs -= a * hi;
                    }
                    VarMap::Split { pos, neg } => {
                        coef[pos] += a;
                        coef[neg] -= a;
                    }
                }
            }
            let scale = coef.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
            if scale == 0.0 {
                let violated = if is_ineq { rhs < -self.feas_tol } else { rhs.abs() > self.feas_tol };
                if violated {
                    return Ok(LpSolution::non_optimal(LpStatus::Infeasible, n, total_rows, 0));
                }
                continue;
            }
            let mut rho = 1.0 / scale;
            if rhs * rho < 0.0 {
                rho = -rho;
            }
            for a in &mut coef {
                *a *= rho;
            }
            rows.push(Row {
                coef,
                rhs: rhs * rho,
                slack: is_ineq,
                orig,
                rho,
            });
        }

        let m = rows.len();
        let n_slack = rows.iter().filter(|r| r.slack).count();
        let needs_art: Vec<bool> = rows.iter().map(|r| !(r.slack && r.rho > 0.0)).collect();
        let n_art = needs_art.iter().filter(|b| **b).count();
        let cols = structural + n_slack + n_art;
        let mut tab = Tableau {
            rows: m,
            cols,
            t: vec![0.0; m * cols],
            beta: vec![0.0; m],
            basis: vec![0; m],
            is_basic: vec![false; cols],
            at_upper: vec![false; cols],
            ub: {
                let mut u = ub.clone();
                u.resize(cols, f64::INFINITY);
                u
            },
            d: vec![0.0; cols],
            t0: Vec::new(),
            b0: Vec::new(),
            cost: Vec::new(),
        };
        // (unit column, its coefficient) per internal row for dual recovery
        let mut unit = vec![(0usize, 1.0f64); m];
        let mut slack_col = structural;
        let mut art_col = structural + n_slack;
        let mut art_cols = Vec::with_capacity(n_art);
        for (i, row) in rows.iter().enumerate() {
            let base = i * cols;
            tab.t[base..base + structural].copy_from_slice(&row.coef);
            tab.beta[i] = row.rhs;
            if row.slack {
                tab.t[base + slack_col] = row.rho.signum();
                unit[i] = (slack_col, row.rho.signum());
                if !needs_art[i] {
                    tab.basis[i] = slack_col;
                }
                slack_col += 1;
            }
            if needs_art[i] {
                tab.t[base + art_col] = 1.0;
                tab.basis[i] = art_col;
                if !row.slack {
                    unit[i] = (art_col, 1.0);
                }
                art_cols.push(art_col);
                art_col += 1;
            }
            tab.is_basic[tab.basis[i]] = true;
        }

        tab.t0 = tab.t.clone();
        tab.b0 = tab.beta.clone();
        let max_iter = self.max_iter.unwrap_or(50 * (m + cols).max(1));
        let mut iters = 0usize;

        // Phase 1.
        if n_art > 0 {
            let mut cost = vec![0.0; cols];
            for &a in &art_cols {
                cost[a] = 1.0;
            }
            tab.reset_costs(&cost);
            let infeasibility = |tab: &Tableau| -> f64 {
                (0..m)
                    .filter(|&i| tab.basis[i] >= structural + n_slack)
                    .map(|i| tab.beta[i].abs())
                    .sum()
            };
            let limit = self.feas_tol * (1.0 + m as f64).sqrt();
            let mut infeas = f64::INFINITY;
            // A phase that stops short of feasibility is retried on a rebuilt
            // tableau before infeasibility is reported.
            for attempt in 0..3 {
                let before = iters;
                if let Phase::Limit = tab.run(self, max_iter, &mut iters) {
                    return Ok(LpSolution::non_optimal(LpStatus::IterationLimit, n, total_rows, iters));
                }
                infeas = infeasibility(&tab);
                if infeas <= limit || (attempt > 0 && iters == before) || !tab.refactor() {
                    break;
                }
            }
            if infeas > limit {
                return Ok(LpSolution::non_optimal(LpStatus::Infeasible, n, total_rows, iters));
            }
            // Drive zero-level artificials out of the basis where possible.
            for r in 0..m {
                if tab.basis[r] < structural + n_slack {
                    continue;
                }
                let row = tab.row(r);
                let mut best: Option<(usize, f64)> = None;
                for (j, &a) in row.iter().enumerate().take(structural + n_slack) {
                    if !tab.is_basic[j] && a.abs() > 1e-9 && best.is_none_or(|(_, b)| a.abs() > b) {
                        best = Some((j, a.abs()));
                    }
                }
                if let Some((j, _)) = best {
                    let value = if tab.at_upper[j] { tab.ub[j] } else { 0.0 };
                    let leaving = tab.basis[r];
                    tab.at_upper[leaving] = false;
                    tab.at_upper[j] = false;
                    tab.pivot(r, j);
                    tab.beta[r] = value;
                }
            }
            for &a in &art_cols {
                tab.ub[a] = 0.0;
            }
            for i in 0..m {
                if tab.basis[i] >= structural + n_slack {
                    tab.beta[i] = 0.0;
                }
            }
        }

        // Phase 2.
        let mut cost = vec![0.0; cols];
        for (j, map) in maps.iter().enumerate() {
            let c = lp.objective[j];
            match *map {
                VarMap::Shift { col, .. } => cost[col] += c,
                VarMap::Mirror { col, .. } => cost[col] -= c,
                VarMap::Split { pos, neg } => {
                    cost[pos] += c;
                    cost[neg] -= c;
                }
            }
        }
        tab.reset_costs(&cost);
        let phase2_start = iters;
        let mut phase = tab.run(self, max_iter, &mut iters);
        // Long runs are polished on a rebuilt tableau.
        if matches!(phase, Phase::Done) && iters - phase2_start > m && tab.refactor() {
            phase = tab.run(self, max_iter, &mut iters);
        }
        let status = match phase {
            Phase::Done => LpStatus::Optimal,
            Phase::Unbounded => LpStatus::Unbounded,
            Phase::Limit => LpStatus::IterationLimit,
        };
        if status != LpStatus::Optimal {
            return Ok(LpSolution::non_optimal(status, n, total_rows, iters));
        }

        let mut basic_values = vec![0.0; cols];
        for i in 0..m {
            basic_values[tab.basis[i]] = tab.beta[i];
        }
        let z: Vec<f64> = maps
            .iter()
            .map(|map| match *map {
                VarMap::Shift { col, lo } => lo + tab.value(col, &basic_values),
                VarMap::Mirror { col, hi } => hi - tab.value(col, &basic_values),
                VarMap::Split { pos, neg } => tab.value(pos, &basic_values) - tab.value(neg, &basic_values),
            })
            .collect();
        let mut duals = vec![0.0; total_rows];
        for (i, row) in rows.iter().enumerate() {
            let (col, sign) = unit[i];
            let pi = -tab.d[col] / sign;
            duals[row.orig] = pi * row.rho;
        }
        let objective_value = lp.objective_at(&z);
        Ok(LpSolution {
            status,
            z,
            objective_value,
            duals,
            iterations: iters,
        })
    }
}

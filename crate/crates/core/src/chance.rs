//! Risk-allocated linear programs for the anchor and line-search problems.
//!
//! Every half-space `pᵀx <= q` of `T_1..T_N` becomes the Gaussian tail
//! condition `pᵀμ_k + σ·Φ⁻¹(1−δ) <= q` with its own risk `δ`, and Boole's
//! inequality turns `Σδ <= 1−α` into a sufficient condition for reach
//! probability `>= α`. Replacing `Φ⁻¹(1−δ)` by the secant envelope makes
//! the conditions linear and only shrinks the feasible set.
//!
//! `T_0` is a deterministic membership constraint on the initial state.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian::{build_pwa_quantile, PwaQuantile};
use crate::lpsolve::{solve_with_row_generation, DenseSimplex, LinearProgram, LpSolution, LpSolver, LpStatus};
use crate::sysmodel::{concat_matrices, ConcatenatedDynamics, StochasticLTVSystem, TargetTube};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChanceOptions {
    /// Smallest risk any row may take.
    pub delta_lb: f64,
    /// Gap allowed between the envelope and the exact quantile.
    pub pwa_tol: f64,
    /// Rows with `σ` below this are treated as deterministic.
    pub sigma_tol: f64,
    /// Scaled violation above which a lazy row is activated.
    pub row_tol: f64,
}

impl Default for ChanceOptions {
    fn default() -> Self {
        Self {
            delta_lb: 1e-6,
            pwa_tol: 1e-3,
            sigma_tol: 1e-12,
            row_tol: 1e-9,
        }
    }
}

/// One half-space of `T_k`, `k >= 1`, expressed in the decision variables:
/// `pᵀμ_k = cx·x₀ + cu·U + c0`.
#[derive(Clone, Debug)]
pub struct TubeRow {
    pub step: usize,
    pub normal: DVector<f64>,
    pub offset: f64,
    pub sigma: f64,
    pub cx: DVector<f64>,
    pub cu: DVector<f64>,
    pub c0: f64,
}

impl TubeRow {
    fn slack(&self, x0: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.offset - self.c0 - self.cx.dot(x0) - self.cu.dot(u)
    }
}

/// How the initial state enters the program.
#[derive(Clone, Debug, PartialEq)]
pub enum X0Mode {
    /// Given `x₀`; minimizes `Σδ` over `U`.
    Fixed(DVector<f64>),
    /// Free `x₀ ∈ T₀`; minimizes `Σδ`.
    Free,
    /// Free `x₀` with the largest ball inside `T₀`; maximizes the radius.
    Centered,
    /// `x₀ = anchor + θ·direction`, `θ >= 0`; maximizes `θ`.
    Line {
        anchor: DVector<f64>,
        direction: DVector<f64>,
    },
}

impl X0Mode {
    fn uses_budget(&self) -> bool {
        matches!(self, X0Mode::Centered | X0Mode::Line { .. })
    }
}

/// Column layout of an assembled program.
#[derive(Clone, Debug, PartialEq)]
pub struct VarLayout {
    pub x0: Option<Range<usize>>,
    pub theta: Option<usize>,
    pub radius: Option<usize>,
    pub u: Range<usize>,
    pub delta: Range<usize>,
}

/// Assembled program plus the bookkeeping to read its solution.
#[derive(Clone, Debug)]
pub struct RiskLp {
    pub lp: LinearProgram,
    pub layout: VarLayout,
    /// Envelope rows per stochastic tube row, activated on demand.
    pub lazy_groups: Vec<Vec<usize>>,
    pub alpha: f64,
    pub budget_row: Option<usize>,
}

/// The tube rows, dynamics and envelope shared by all problems on one
/// system/tube pair.
#[derive(Clone)]
pub struct RiskAllocatedProblem {
    pub system: StochasticLTVSystem,
    pub tube: TargetTube,
    pub cd: ConcatenatedDynamics,
    pub stochastic_rows: Vec<TubeRow>,
    pub deterministic_rows: Vec<TubeRow>,
    pub pwa: PwaQuantile,
    pub options: ChanceOptions,
    /// Initial-state coordinates pinned to given values.
    pub fixed_initial: Vec<(usize, f64)>,
    solver: Arc<dyn LpSolver>,
}

impl std::fmt::Debug for RiskAllocatedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RiskAllocatedProblem")
            .field("stochastic_rows", &self.stochastic_rows.len())
            .field("deterministic_rows", &self.deterministic_rows.len())
            .field("pieces", &self.pwa.len())
            .field("fixed_initial", &self.fixed_initial)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    Xmax,
    Cheby,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorResult {
    pub x_anchor: DVector<f64>,
    pub u: DVector<f64>,
    /// `1 − Σδ*`.
    pub lower_bound: f64,
    pub radius: Option<f64>,
    pub mode: AnchorMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyReason {
    /// `#rows·δ_lb > 1−α`: no allocation fits the budget.
    BudgetFloor,
    /// The program has no feasible point.
    Infeasible,
    /// Feasible, but the best Boole bound is below `α`.
    BelowThreshold,
}

/// Evidence that the risk-allocated underapproximation is empty. This
/// certifies only the Boole-restricted set, not the true reach set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmptyCertificate {
    pub reason: EmptyReason,
    pub best_lower_bound: Option<f64>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnchorOutcome {
    Found(AnchorResult),
    Empty(EmptyCertificate),
}

impl AnchorOutcome {
    pub fn found(&self) -> Option<&AnchorResult> {
        match self {
            AnchorOutcome::Found(a) => Some(a),
            AnchorOutcome::Empty(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineStatus {
    Optimal,
    /// The program is infeasible already at `θ = 0`.
    InfeasibleAtAnchor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearchResult {
    pub theta: f64,
    pub point: DVector<f64>,
    pub u: Option<DVector<f64>>,
    pub lower_bound: Option<f64>,
    pub status: LineStatus,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return invalid(format!("probability threshold {alpha} outside (0, 1]"));
    }
    Ok(())
}

fn push_dense(terms: &mut Vec<(usize, f64)>, offset: usize, coef: &DVector<f64>) {
    for (j, &c) in coef.iter().enumerate() {
        if c != 0.0 {
            terms.push((offset + j, c));
        }
    }
}

impl RiskAllocatedProblem {
    pub fn new(system: StochasticLTVSystem, tube: TargetTube, options: ChanceOptions) -> Result<Self> {
        tube.check_compatible(&system)?;
        let pwa = build_pwa_quantile(options.delta_lb, 0.5, options.pwa_tol)?;
        let cd = concat_matrices(&system);
        let cov = cd.state_cov();
        let noise_mean = cd.noise_mean();
        let n = system.state_dim();
        let mut stochastic_rows = Vec::new();
        let mut deterministic_rows = Vec::new();
        for k in 1..=system.horizon() {
            let r = cd.step_rows(k);
            let ck = cov.view((r.start, r.start), (n, n));
            let ak = cd.acal.rows(r.start, n);
            let hk = cd.h.rows(r.start, n);
            let gk = noise_mean.rows(r.start, n);
            let set = tube.set(k);
            for i in 0..set.num_rows() {
                let (p, q) = set.row(i);
                let var = (p.transpose() * ck * &p)[(0, 0)];
                let row = TubeRow {
                    step: k,
                    sigma: var.max(0.0).sqrt(),
                    cx: ak.transpose() * &p,
                    cu: hk.transpose() * &p,
                    c0: p.dot(&gk),
                    normal: p,
                    offset: q,
                };
                if row.sigma < options.sigma_tol {
                    deterministic_rows.push(row);
                } else {
                    stochastic_rows.push(row);
                }
            }
        }
        Ok(Self {
            system,
            tube,
            cd,
            stochastic_rows,
            deterministic_rows,
            pwa,
            options,
            fixed_initial: Vec::new(),
            solver: Arc::new(DenseSimplex::default()),
        })
    }

    /// Swaps in another LP solver.
    pub fn with_solver(mut self, solver: Arc<dyn LpSolver>) -> Self {
        self.solver = solver;
        self
    }

    /// Pins initial-state coordinates (a slice through `T₀`) for the anchor problems.
    pub fn with_fixed_initial(mut self, fixed: Vec<(usize, f64)>) -> Result<Self> {
        let n = self.system.state_dim();
        if let Some((i, _)) = fixed.iter().find(|(i, _)| *i >= n) {
            return invalid(format!("fixed coordinate {i} outside state dimension {n}"));
        }
        self.fixed_initial = fixed;
        Ok(self)
    }

    pub fn solver(&self) -> &dyn LpSolver {
        self.solver.as_ref()
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn input_len(&self) -> usize {
        self.system.input_dim() * self.system.horizon()
    }

    /// Checks `#rows·δ_lb <= 1−α`.
    pub fn budget_floor(&self, alpha: f64) -> Option<EmptyCertificate> {
        let floor = self.stochastic_rows.len() as f64 * self.options.delta_lb;
        (floor > 1.0 - alpha).then(|| EmptyCertificate {
            reason: EmptyReason::BudgetFloor,
            best_lower_bound: Some(1.0 - floor),
            message: format!(
                "{} stochastic rows at δ_lb = {:e} exceed the risk budget {}",
                self.stochastic_rows.len(),
                self.options.delta_lb,
                1.0 - alpha
            ),
        })
    }

    fn seed_piece(&self, alpha: f64) -> usize {
        let r = self.stochastic_rows.len().max(1) as f64;
        let d = ((1.0 - alpha) / r).clamp(self.pwa.delta_lb, self.pwa.delta_max);
        let k = self.pwa.knots.partition_point(|&t| t <= d);
        k.saturating_sub(1).min(self.pwa.len() - 1)
    }

    fn delta_max(&self, alpha: f64, mode: &X0Mode) -> f64 {
        if mode.uses_budget() {
            0.5f64.min(1.0 - alpha)
        } else {
            0.5
        }
    }

    /// Assembles the program for `mode`.
    ///
    /// `Free` and `Fixed` minimize `Σδ` without a budget row (the threshold
    /// is checked on the optimum); `Centered` and `Line` carry `Σδ <= 1−α`.
    pub fn build_risk_lp(&self, alpha: f64, mode: &X0Mode) -> Result<RiskLp> {
        check_alpha(alpha)?;
        let n = self.state_dim();
        let mu = self.input_len();
        let m = self.system.input_dim();
        let r = self.stochastic_rows.len();
        match mode {
            X0Mode::Fixed(x) if x.len() != n => return invalid("fixed x0 has the wrong dimension"),
            X0Mode::Line { anchor, direction } if anchor.len() != n || direction.len() != n => {
                return invalid("anchor or direction has the wrong dimension")
            }
            _ => {}
        }

        let mut next = 0;
        let mut take = |k: usize| {
            let range = next..next + k;
            next += k;
            range
        };
        let x0 = matches!(mode, X0Mode::Free | X0Mode::Centered).then(|| take(n));
        let theta = matches!(mode, X0Mode::Line { .. }).then(|| take(1).start);
        let radius = matches!(mode, X0Mode::Centered).then(|| take(1).start);
        let u = take(mu);
        let delta = take(r);
        let layout = VarLayout {
            x0,
            theta,
            radius,
            u,
            delta,
        };
        let mut lp = LinearProgram::new(next);

        // Initial-state part of each row: (terms, constant moved to the rhs).
        let x0_part = |coef: &DVector<f64>, terms: &mut Vec<(usize, f64)>| -> f64 {
            match mode {
                X0Mode::Fixed(x) => coef.dot(x),
                X0Mode::Free | X0Mode::Centered => {
                    push_dense(terms, layout.x0.as_ref().unwrap().start, coef);
                    0.0
                }
                X0Mode::Line { anchor, direction } => {
                    let c = coef.dot(direction);
                    if c != 0.0 {
                        terms.push((layout.theta.unwrap(), c));
                    }
                    coef.dot(anchor)
                }
            }
        };

        let mut lazy_groups = Vec::with_capacity(r);
        let seed = self.seed_piece(alpha);
        for (j, row) in self.stochastic_rows.iter().enumerate() {
            let mut base = Vec::new();
            let shift = x0_part(&row.cx, &mut base);
            push_dense(&mut base, layout.u.start, &row.cu);
            let mut group = Vec::with_capacity(self.pwa.len());
            for (l, &(slope, intercept)) in self.pwa.pieces.iter().enumerate() {
                let mut terms = base.clone();
                terms.push((layout.delta.start + j, row.sigma * slope));
                let idx = lp.add_ineq(terms, row.offset - row.c0 - shift - row.sigma * intercept);
                if l != seed {
                    group.push(idx);
                }
            }
            lazy_groups.push(group);
        }
        for row in &self.deterministic_rows {
            let mut terms = Vec::new();
            let shift = x0_part(&row.cx, &mut terms);
            push_dense(&mut terms, layout.u.start, &row.cu);
            lp.add_ineq(terms, row.offset - row.c0 - shift);
        }

        let budget_row = mode.uses_budget().then(|| {
            let terms = layout.delta.clone().map(|i| (i, 1.0)).collect();
            lp.add_ineq(terms, 1.0 - alpha)
        });
        let dmax = self.delta_max(alpha, mode);
        for i in layout.delta.clone() {
            lp.bounds[i] = (self.options.delta_lb, dmax);
        }

        let input_set = self.system.input_set();
        if m > 0 {
            if let Some((lo, hi)) = input_set.as_box() {
                for k in 0..self.system.horizon() {
                    for c in 0..m {
                        lp.bounds[layout.u.start + k * m + c] = (lo[c], hi[c]);
                    }
                }
            } else {
                for k in 0..self.system.horizon() {
                    for i in 0..input_set.num_rows() {
                        let (a, b) = input_set.row(i);
                        let mut terms = Vec::new();
                        push_dense(&mut terms, layout.u.start + k * m, &a);
                        lp.add_ineq(terms, b);
                    }
                }
            }
        }

        self.add_initial_rows(&mut lp, &layout, mode)?;
        Ok(RiskLp {
            lp,
            layout,
            lazy_groups,
            alpha,
            budget_row,
        })
    }

    fn add_initial_rows(&self, lp: &mut LinearProgram, layout: &VarLayout, mode: &X0Mode) -> Result<()> {
        let t0 = self.tube.set(0);
        let n = self.state_dim();
        let fixed: Vec<Option<f64>> = (0..n)
            .map(|i| self.fixed_initial.iter().find(|(j, _)| *j == i).map(|(_, v)| *v))
            .collect();
        match mode {
            X0Mode::Fixed(x) => {
                // Membership is checked by the caller; an infeasible row keeps the LP honest.
                let lhs = t0.normals() * x;
                for i in 0..t0.num_rows() {
                    if lhs[i] > t0.offsets()[i] + crate::DEFAULT_TOL {
                        lp.add_ineq(Vec::new(), -1.0);
                    }
                }
            }
            X0Mode::Free | X0Mode::Centered => {
                let start = layout.x0.as_ref().unwrap().start;
                let as_box = if layout.radius.is_none() { t0.as_box() } else { None };
                if let Some((lo, hi)) = as_box {
                    for i in 0..n {
                        lp.bounds[start + i] = (lo[i], hi[i]);
                    }
                } else {
                    for i in 0..t0.num_rows() {
                        let (a, b) = t0.row(i);
                        let mut terms = Vec::new();
                        push_dense(&mut terms, start, &a);
                        if let Some(rc) = layout.radius {
                            let norm = (0..n)
                                .filter(|&j| fixed[j].is_none())
                                .map(|j| a[j] * a[j])
                                .sum::<f64>()
                                .sqrt();
                            if norm > 0.0 {
                                terms.push((rc, norm));
                            }
                        }
                        lp.add_ineq(terms, b);
                    }
                }
                for (i, v) in fixed.iter().enumerate() {
                    if let Some(v) = v {
                        let (lo, hi) = lp.bounds[start + i];
                        if *v < lo - crate::DEFAULT_TOL || *v > hi + crate::DEFAULT_TOL {
                            return invalid(format!("fixed coordinate {i} = {v} lies outside T_0"));
                        }
                        lp.bounds[start + i] = (*v, *v);
                    }
                }
                if let Some(rc) = layout.radius {
                    lp.bounds[rc] = (0.0, f64::INFINITY);
                    lp.objective[rc] = -1.0;
                } else {
                    for i in layout.delta.clone() {
                        lp.objective[i] = 1.0;
                    }
                }
            }
            X0Mode::Line { anchor, direction } => {
                let th = layout.theta.unwrap();
                lp.bounds[th] = (0.0, f64::INFINITY);
                lp.objective[th] = -1.0;
                let ad = t0.normals() * direction;
                let aa = t0.normals() * anchor;
                for i in 0..t0.num_rows() {
                    let terms = if ad[i] != 0.0 { vec![(th, ad[i])] } else { Vec::new() };
                    lp.add_ineq(terms, t0.offsets()[i] - aa[i]);
                }
            }
        }
        if let X0Mode::Fixed(_) = mode {
            for i in layout.delta.clone() {
                lp.objective[i] = 1.0;
            }
        }
        Ok(())
    }

    /// Solves an assembled program with row generation.
    pub fn solve_risk_lp(&self, risk: &RiskLp) -> Result<LpSolution> {
        let sol = solve_with_row_generation(self.solver(), &risk.lp, &risk.lazy_groups, self.options.row_tol)?;
        if sol.status == LpStatus::IterationLimit {
            return Err(Error::ResourceExhausted("risk-allocation LP hit the iteration cap".into()));
        }
        Ok(sol)
    }

    fn risk_sum(&self, risk: &RiskLp, z: &[f64]) -> f64 {
        z[risk.layout.delta.clone()].iter().sum()
    }

    /// Optimum of the free-`x₀` program regardless of `α`; `None` when the
    /// program is infeasible.
    pub fn solve_free_anchor(&self) -> Result<Option<AnchorResult>> {
        let risk = self.build_risk_lp(0.5, &X0Mode::Free)?;
        let sol = self.solve_risk_lp(&risk)?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Ok(None),
            s => return Err(Error::Solver(format!("anchor LP ended with status {s:?}"))),
        }
        let x0 = risk.layout.x0.clone().unwrap();
        Ok(Some(AnchorResult {
            x_anchor: DVector::from_column_slice(&sol.z[x0]),
            u: DVector::from_column_slice(&sol.z[risk.layout.u.clone()]),
            lower_bound: 1.0 - self.risk_sum(&risk, &sol.z),
            radius: None,
            mode: AnchorMode::Xmax,
        }))
    }

    /// Anchor maximizing the Boole lower bound over `x₀ ∈ T₀` and `U`.
    pub fn solve_anchor_xmax(&self, alpha: f64) -> Result<AnchorOutcome> {
        check_alpha(alpha)?;
        if let Some(c) = self.budget_floor(alpha) {
            return Ok(AnchorOutcome::Empty(c));
        }
        let Some(anchor) = self.solve_free_anchor()? else {
            return Ok(AnchorOutcome::Empty(EmptyCertificate {
                reason: EmptyReason::Infeasible,
                best_lower_bound: None,
                message: "no initial state and input sequence admit a risk allocation".into(),
            }));
        };
        if anchor.lower_bound < alpha {
            return Ok(AnchorOutcome::Empty(EmptyCertificate {
                reason: EmptyReason::BelowThreshold,
                best_lower_bound: Some(anchor.lower_bound),
                message: format!("best Boole lower bound {:.6} is below α = {alpha}", anchor.lower_bound),
            }));
        }
        Ok(AnchorOutcome::Found(anchor))
    }

    /// Anchor at the center of the largest ball in `T₀` whose center still
    /// meets the risk budget.
    pub fn solve_anchor_cheby(&self, alpha: f64) -> Result<AnchorOutcome> {
        check_alpha(alpha)?;
        if let Some(c) = self.budget_floor(alpha) {
            return Ok(AnchorOutcome::Empty(c));
        }
        let risk = self.build_risk_lp(alpha, &X0Mode::Centered)?;
        let sol = self.solve_risk_lp(&risk)?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {
                return Ok(AnchorOutcome::Empty(EmptyCertificate {
                    reason: EmptyReason::Infeasible,
                    best_lower_bound: None,
                    message: format!("no initial state meets the risk budget 1−α = {}", 1.0 - alpha),
                }))
            }
            s => return Err(Error::Solver(format!("centering LP ended with status {s:?}"))),
        }
        let x0 = risk.layout.x0.clone().unwrap();
        Ok(AnchorOutcome::Found(AnchorResult {
            x_anchor: DVector::from_column_slice(&sol.z[x0]),
            u: DVector::from_column_slice(&sol.z[risk.layout.u.clone()]),
            lower_bound: 1.0 - self.risk_sum(&risk, &sol.z),
            radius: Some(sol.z[risk.layout.radius.unwrap()]),
            mode: AnchorMode::Cheby,
        }))
    }

    /// Furthest point along `anchor + θ·direction` that still meets the
    /// risk budget, with its certified input sequence.
    pub fn solve_line_search(
        &self,
        alpha: f64,
        anchor: &DVector<f64>,
        direction: &DVector<f64>,
    ) -> Result<LineSearchResult> {
        check_alpha(alpha)?;
        let infeasible = || LineSearchResult {
            theta: 0.0,
            point: anchor.clone(),
            u: None,
            lower_bound: None,
            status: LineStatus::InfeasibleAtAnchor,
        };
        if self.budget_floor(alpha).is_some() {
            return Ok(infeasible());
        }
        let mode = X0Mode::Line {
            anchor: anchor.clone(),
            direction: direction.clone(),
        };
        let risk = self.build_risk_lp(alpha, &mode)?;
        let sol = self.solve_risk_lp(&risk)?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Ok(infeasible()),
            s => return Err(Error::Solver(format!("line-search LP ended with status {s:?}"))),
        }
        let theta = sol.z[risk.layout.theta.unwrap()].max(0.0);
        Ok(LineSearchResult {
            theta,
            point: anchor + direction * theta,
            u: Some(DVector::from_column_slice(&sol.z[risk.layout.u.clone()])),
            lower_bound: Some(1.0 - self.risk_sum(&risk, &sol.z)),
            status: LineStatus::Optimal,
        })
    }

    /// Best Boole lower bound at a given `x₀` over all admissible `U`.
    pub fn best_bound_at(&self, x0: &DVector<f64>) -> Result<Option<(f64, DVector<f64>)>> {
        if !self.tube.set(0).contains(x0, crate::DEFAULT_TOL)? {
            return Ok(None);
        }
        let risk = self.build_risk_lp(0.5, &X0Mode::Fixed(x0.clone()))?;
        let sol = self.solve_risk_lp(&risk)?;
        Ok(sol.is_optimal().then(|| {
            (
                1.0 - self.risk_sum(&risk, &sol.z),
                DVector::from_column_slice(&sol.z[risk.layout.u.clone()]),
            )
        }))
    }

    /// Boole lower bound certified by the envelope for a given `(x₀, U)`:
    /// each row takes the least risk its slack allows. `None` when some row
    /// would need more than the envelope's domain or `x₀ ∉ T₀`.
    pub fn boole_lower_bound(&self, x0: &DVector<f64>, u: &DVector<f64>) -> Result<Option<f64>> {
        if x0.len() != self.state_dim() || u.len() != self.input_len() {
            return invalid("x0 or U has the wrong dimension");
        }
        let tol = crate::DEFAULT_TOL;
        if !self.tube.set(0).contains(x0, tol)? {
            return Ok(None);
        }
        if self.deterministic_rows.iter().any(|r| r.slack(x0, u) < -tol) {
            return Ok(None);
        }
        let mut total = 0.0;
        for row in &self.stochastic_rows {
            let t = row.slack(x0, u) / row.sigma;
            if self.pwa.eval(self.pwa.delta_max) > t {
                return Ok(None);
            }
            // max_ℓ(m_ℓδ + c_ℓ) <= t  ⇔  δ >= (c_ℓ − t)/(−m_ℓ) for every piece.
            let need = self
                .pwa
                .pieces
                .iter()
                .map(|(m, c)| (c - t) / -m)
                .fold(self.options.delta_lb, f64::max);
            total += need;
        }
        Ok(Some(1.0 - total))
    }
}

//! Sampling backend: the reach probability of an open-loop sequence is
//! estimated by the quasi-Monte-Carlo box integrator, and input sequences
//! are improved by compass search starting from the risk-allocation answer.
//!
//! Estimates are turned into bounds as `estimate − 3·std_error`. All calls
//! share one seed so the objective seen by the search is a deterministic
//! function of the inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{BoundaryPoint, DirectionStatus};
use crate::chance::{AnchorMode, AnchorOutcome, AnchorResult, EmptyCertificate, EmptyReason, LineStatus, RiskAllocatedProblem};
use crate::error::{invalid, Error, Result};
use crate::gaussian::{genz_mvn_probability, MvnBox};
use crate::geometry::HPolytope;
use crate::lpsolve::{solve_lp, LinearProgram};
use crate::sysmodel::check_psd;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenzOptions {
    pub samples: usize,
    pub batches: usize,
    pub seed: u64,
    /// Bisection steps on `θ` per direction.
    pub bisection_steps: usize,
    /// Initial and final compass step as fractions of the widest input range.
    pub step_init: f64,
    pub step_min: f64,
    pub max_evals: usize,
}

impl Default for GenzOptions {
    fn default() -> Self {
        Self {
            samples: 1024,
            batches: 10,
            seed: 0,
            bisection_steps: 8,
            step_init: 0.25,
            step_min: 1e-3,
            max_evals: 200,
        }
    }
}

/// `W₀(x₀, U)` for box tubes, with the tube-constrained coordinates of the
/// stacked state and their covariance fixed up front.
pub struct GenzEvaluator {
    t0: HPolytope,
    acal: DMatrix<f64>,
    h: DMatrix<f64>,
    offset: DVector<f64>,
    cov: DMatrix<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    opts: GenzOptions,
    n: usize,
    input_len: usize,
}

impl GenzEvaluator {
    pub fn new(problem: &RiskAllocatedProblem, opts: &GenzOptions) -> Result<Self> {
        let n = problem.state_dim();
        let cd = &problem.cd;
        let mut rows = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for k in 1..=cd.horizon {
            let Some((lo, hi)) = problem.tube.set(k).as_box() else {
                return Err(Error::Unsupported(format!(
                    "the sampling backend needs axis-aligned boxes; T_{k} is a general polytope"
                )));
            };
            for d in 0..n {
                if lo[d].is_finite() || hi[d].is_finite() {
                    rows.push((k - 1) * n + d);
                    lower.push(lo[d]);
                    upper.push(hi[d]);
                }
            }
        }
        let full_cov = cd.state_cov();
        let noise = cd.noise_mean();
        let cov = DMatrix::from_fn(rows.len(), rows.len(), |i, j| full_cov[(rows[i], rows[j])]);
        check_psd(&cov, 1e-9)?;
        Ok(Self {
            t0: problem.tube.set(0).clone(),
            acal: cd.acal.select_rows(&rows),
            h: cd.h.select_rows(&rows),
            offset: DVector::from_iterator(rows.len(), rows.iter().map(|&r| noise[r])),
            cov,
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
            opts: opts.clone(),
            n,
            input_len: problem.input_len(),
        })
    }

    /// `(estimate, std_error)`; exactly zero when `x₀ ∉ T₀`.
    pub fn evaluate(&self, x0: &DVector<f64>, u: &DVector<f64>) -> Result<(f64, f64)> {
        if x0.len() != self.n || u.len() != self.input_len {
            return invalid("x0 or U has the wrong dimension");
        }
        if !self.t0.contains(x0, crate::DEFAULT_TOL)? {
            return Ok((0.0, 0.0));
        }
        let b = MvnBox {
            mean: &self.acal * x0 + &self.h * u + &self.offset,
            cov: self.cov.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        };
        genz_mvn_probability(&b, self.opts.samples, self.opts.batches, self.opts.seed)
    }

    /// `estimate − 3·std_error`.
    pub fn lower_bound(&self, x0: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        let (p, se) = self.evaluate(x0, u)?;
        Ok(p - 3.0 * se)
    }
}

/// Reach probability estimate for box tubes.
pub fn genz_evaluate_w0(
    problem: &RiskAllocatedProblem,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    opts: &GenzOptions,
) -> Result<(f64, f64)> {
    GenzEvaluator::new(problem, opts)?.evaluate(x0, u)
}

/// Projection onto `U^N`: clamping for boxes, an L1-distance LP otherwise.
#[derive(Clone, Debug)]
pub enum InputProjector {
    Box { lower: DVector<f64>, upper: DVector<f64> },
    Polytope { set: HPolytope, steps: usize },
}

impl InputProjector {
    pub fn new(set: &HPolytope, steps: usize) -> Self {
        match set.as_box() {
            Some((lo, hi)) => InputProjector::Box {
                lower: DVector::from_iterator(lo.len() * steps, (0..steps).flat_map(|_| lo.iter().copied())),
                upper: DVector::from_iterator(hi.len() * steps, (0..steps).flat_map(|_| hi.iter().copied())),
            },
            None => InputProjector::Polytope {
                set: set.clone(),
                steps,
            },
        }
    }

    pub fn len(&self) -> usize {
        match self {
            InputProjector::Box { lower, .. } => lower.len(),
            InputProjector::Polytope { set, steps } => set.dim() * steps,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Widest coordinate range, used to scale compass steps.
    pub fn width(&self) -> Result<f64> {
        Ok(match self {
            InputProjector::Box { lower, upper } => (upper - lower).amax(),
            InputProjector::Polytope { set, .. } => {
                let (lo, hi) = set.bounding_box()?;
                (hi - lo).amax()
            }
        })
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> Result<bool> {
        match self {
            InputProjector::Box { lower, upper } => {
                Ok((0..u.len()).all(|i| u[i] >= lower[i] - tol && u[i] <= upper[i] + tol))
            }
            InputProjector::Polytope { set, steps } => {
                let m = set.dim();
                for k in 0..*steps {
                    if !set.contains(&u.rows(k * m, m).into_owned(), tol)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }

    pub fn project(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            InputProjector::Box { lower, upper } => Ok(u.sup(lower).inf(upper)),
            InputProjector::Polytope { set, steps } => {
                let m = set.dim();
                let mut out = u.clone();
                for k in 0..*steps {
                    let v = u.rows(k * m, m).into_owned();
                    if set.contains(&v, 0.0)? {
                        continue;
                    }
                    // min Σt  s.t.  |w − v| <= t,  w ∈ U.
                    let mut lp = LinearProgram::new(2 * m);
                    for j in 0..m {
                        lp.objective[m + j] = 1.0;
                        lp.add_ineq(vec![(j, 1.0), (m + j, -1.0)], v[j]);
                        lp.add_ineq(vec![(j, -1.0), (m + j, -1.0)], -v[j]);
                    }
                    for i in 0..set.num_rows() {
                        let (a, b) = set.row(i);
                        lp.add_ineq((0..m).filter(|&j| a[j] != 0.0).map(|j| (j, a[j])).collect(), b);
                    }
                    let sol = solve_lp(&lp)?;
                    if !sol.is_optimal() {
                        return Err(Error::Solver("input projection LP failed".into()));
                    }
                    out.rows_mut(k * m, m).copy_from_slice(&sol.z[..m]);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternSearchOptions {
    pub step_init: f64,
    pub step_min: f64,
    pub max_evals: usize,
    /// Stops as soon as the incumbent reaches this value.
    pub target: Option<f64>,
}

/// Compass search over the `±e_i` directions with step halving; the
/// incumbent never decreases. Returns `(U_best, value, evaluations)`.
pub fn pattern_search_maximize(
    objective: &mut dyn FnMut(&DVector<f64>) -> Result<f64>,
    u_init: &DVector<f64>,
    projector: &InputProjector,
    opts: &PatternSearchOptions,
) -> Result<(DVector<f64>, f64, usize)> {
    if u_init.len() != projector.len() {
        return invalid("initial input sequence has the wrong length");
    }
    if !projector.contains(u_init, 1e-9)? {
        return invalid("initial input sequence lies outside the input set");
    }
    if !(opts.step_init > 0.0 && opts.step_min > 0.0) {
        return invalid("compass steps must be positive");
    }
    let reached = |v: f64| opts.target.is_some_and(|t| v >= t);
    let mut best = u_init.clone();
    let mut value = objective(&best)?;
    let mut evals = 1;
    let mut step = opts.step_init;
    'outer: while step >= opts.step_min && evals < opts.max_evals && !reached(value) {
        for i in 0..best.len() {
            for sign in [1.0, -1.0] {
                let mut cand = best.clone();
                cand[i] += sign * step;
                let cand = projector.project(&cand)?;
                if (&cand - &best).amax() <= 1e-15 {
                    continue;
                }
                let v = objective(&cand)?;
                evals += 1;
                if v > value {
                    best = cand;
                    value = v;
                    continue 'outer;
                }
                if evals >= opts.max_evals {
                    break 'outer;
                }
            }
        }
        step *= 0.5;
    }
    Ok((best, value, evals))
}

fn search_options(g: &GenzOptions, projector: &InputProjector, target: f64) -> Result<PatternSearchOptions> {
    let w = projector.width()?.max(f64::MIN_POSITIVE);
    Ok(PatternSearchOptions {
        step_init: g.step_init * w,
        step_min: g.step_min * w,
        max_evals: g.max_evals,
        target: Some(target),
    })
}

/// Best certified bound at `x0`, improving `u` by compass search if needed.
fn improve_at(
    eval: &GenzEvaluator,
    projector: &InputProjector,
    opts: &GenzOptions,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    alpha: f64,
) -> Result<(DVector<f64>, f64)> {
    let u = projector.project(u)?;
    let v = eval.lower_bound(x0, &u)?;
    if v >= alpha || projector.is_empty() {
        return Ok((u, v));
    }
    let mut f = |uu: &DVector<f64>| eval.lower_bound(x0, uu);
    let (best, value, _) = pattern_search_maximize(&mut f, &u, projector, &search_options(opts, projector, alpha)?)?;
    Ok((best, value))
}

pub(super) fn genz_anchor(
    problem: &RiskAllocatedProblem,
    eval: &GenzEvaluator,
    alpha: f64,
    mode: AnchorMode,
) -> Result<AnchorOutcome> {
    let start = match mode {
        AnchorMode::Xmax => problem.solve_free_anchor()?,
        AnchorMode::Cheby => match problem.solve_anchor_cheby(alpha)? {
            AnchorOutcome::Found(a) => Some(a),
            AnchorOutcome::Empty(_) => problem.solve_free_anchor()?,
        },
    };
    let Some(start) = start else {
        return Ok(AnchorOutcome::Empty(EmptyCertificate {
            reason: EmptyReason::Infeasible,
            best_lower_bound: None,
            message: "no starting point for the sampling backend".into(),
        }));
    };
    let projector = InputProjector::new(problem.system.input_set(), problem.system.horizon());
    let opts = &eval.opts;
    let (u, value) = improve_at(eval, &projector, opts, &start.x_anchor, &start.u, alpha)?;
    if value < alpha {
        return Ok(AnchorOutcome::Empty(EmptyCertificate {
            reason: EmptyReason::BelowThreshold,
            best_lower_bound: Some(value),
            message: format!("sampled lower bound {value:.6} at the anchor is below α = {alpha}"),
        }));
    }
    Ok(AnchorOutcome::Found(AnchorResult {
        x_anchor: start.x_anchor,
        u,
        lower_bound: value,
        radius: start.radius,
        mode,
    }))
}

pub(super) fn genz_direction(
    problem: &RiskAllocatedProblem,
    eval: &GenzEvaluator,
    alpha: f64,
    anchor: &AnchorResult,
    index: usize,
    d: &DVector<f64>,
) -> BoundaryPoint {
    let run = || -> Result<BoundaryPoint> {
        let projector = InputProjector::new(problem.system.input_set(), problem.system.horizon());
        let opts = &eval.opts;
        let x = &anchor.x_anchor;
        let theta_max = problem.tube.set(0).ray_extent(x, d);
        let (mut lo, mut u_lo, mut v_lo) = (0.0, anchor.u.clone(), anchor.lower_bound);
        let ls = problem.solve_line_search(alpha, x, d)?;
        if ls.status == LineStatus::Optimal && ls.theta > 0.0 {
            let (u, v) = improve_at(eval, &projector, opts, &ls.point, ls.u.as_ref().unwrap(), alpha)?;
            if v >= alpha {
                (lo, u_lo, v_lo) = (ls.theta, u, v);
            }
        }
        let mut hi = theta_max;
        for _ in 0..opts.bisection_steps {
            if hi - lo <= 1e-9 * theta_max.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let (u, v) = improve_at(eval, &projector, opts, &(x + d * mid), &u_lo, alpha)?;
            if v >= alpha {
                (lo, u_lo, v_lo) = (mid, u, v);
            } else {
                hi = mid;
            }
        }
        Ok(BoundaryPoint {
            direction: index,
            anchor_mode: anchor.mode,
            point: x + d * lo,
            theta: lo,
            controls: Some(u_lo),
            lower_bound: Some(v_lo),
            status: if lo > 0.0 {
                DirectionStatus::Optimal
            } else {
                DirectionStatus::ZeroLength
            },
            message: None,
        })
    };
    run().unwrap_or_else(|e| BoundaryPoint {
        direction: index,
        anchor_mode: anchor.mode,
        point: anchor.x_anchor.clone(),
        theta: 0.0,
        controls: None,
        lower_bound: None,
        status: DirectionStatus::Failed,
        message: Some(e.to_string()),
    })
}

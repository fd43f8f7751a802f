//! Polytopic underapproximation of the stochastic reach set (anchor plus
//! line searches), level interpolation, the grid dynamic-programming
//! baseline and the sampling-based backend.
//!
//! Every boundary point carries the open-loop input sequence that certifies
//! it, so any vertex of the resulting polytope comes with a controller.

mod dp;
mod genz;
pub mod io;

pub use dp::{dp_containment, dp_level_set, dp_values, dp_values_on_grid, Containment, DpTable, LevelSet};
pub use genz::{genz_evaluate_w0, pattern_search_maximize, GenzEvaluator, GenzOptions, InputProjector, PatternSearchOptions};

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chance::{
    AnchorMode, AnchorOutcome, AnchorResult, EmptyCertificate, EmptyReason, LineStatus, RiskAllocatedProblem,
};
use crate::error::{invalid, Error, Result};
use crate::geometry::{convex_weights, extreme_point_indices, minkowski_interpolate_indexed, DirectionSet, VPolytope};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Boole risk allocation with linear programs.
    #[default]
    Chance,
    /// Quasi-Monte-Carlo reach probability with pattern search.
    Genz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorChoice {
    Xmax,
    Cheby,
    /// Runs both anchors and takes the hull of the union of their points.
    Both,
}

impl AnchorChoice {
    fn modes(self) -> Vec<AnchorMode> {
        match self {
            AnchorChoice::Xmax => vec![AnchorMode::Xmax],
            AnchorChoice::Cheby => vec![AnchorMode::Cheby],
            AnchorChoice::Both => vec![AnchorMode::Cheby, AnchorMode::Xmax],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReachOptions {
    pub alpha: f64,
    pub backend: Backend,
    /// Defaults to `Cheby` for the chance backend and `Xmax` for Genz.
    pub anchor_mode: Option<AnchorChoice>,
    /// Uses only the first `max_directions` directions.
    pub max_directions: Option<usize>,
    /// Directions not started before this much time has passed are skipped.
    pub time_budget: Option<Duration>,
    /// Worker threads for the direction searches.
    pub jobs: usize,
    pub genz: GenzOptions,
}

impl ReachOptions {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            backend: Backend::Chance,
            anchor_mode: None,
            max_directions: None,
            time_budget: None,
            jobs: 1,
            genz: GenzOptions::default(),
        }
    }

    pub fn anchor_choice(&self) -> AnchorChoice {
        self.anchor_mode.unwrap_or(match self.backend {
            Backend::Chance => AnchorChoice::Cheby,
            Backend::Genz => AnchorChoice::Xmax,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionStatus {
    Optimal,
    /// The search could not move away from the anchor; the anchor itself is kept.
    ZeroLength,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPoint {
    pub direction: usize,
    pub anchor_mode: AnchorMode,
    pub point: DVector<f64>,
    pub theta: f64,
    pub controls: Option<DVector<f64>>,
    pub lower_bound: Option<f64>,
    pub status: DirectionStatus,
    pub message: Option<String>,
}

impl BoundaryPoint {
    pub fn is_certified(&self) -> bool {
        matches!(self.status, DirectionStatus::Optimal | DirectionStatus::ZeroLength) && self.controls.is_some()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub anchor_s: f64,
    pub directions_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReachSetResult {
    pub alpha: f64,
    pub backend: Backend,
    pub anchors: Vec<AnchorResult>,
    pub boundary_points: Vec<BoundaryPoint>,
    pub polytope: Option<VPolytope>,
    /// Controls and lower bounds aligned with `polytope`'s vertices.
    pub vertex_controls: Vec<DVector<f64>>,
    pub vertex_bounds: Vec<f64>,
    /// Index into `boundary_points` behind each vertex; `None` for anchors.
    pub vertex_origins: Vec<Option<usize>>,
    pub empty: Option<EmptyCertificate>,
    pub timings: Timings,
}

impl ReachSetResult {
    pub fn is_empty(&self) -> bool {
        self.polytope.is_none()
    }

    pub fn anchor(&self) -> Option<&AnchorResult> {
        self.anchors.first()
    }

    fn empty(alpha: f64, backend: Backend, cert: EmptyCertificate, timings: Timings) -> Self {
        Self {
            alpha,
            backend,
            anchors: Vec::new(),
            boundary_points: Vec::new(),
            polytope: None,
            vertex_controls: Vec::new(),
            vertex_bounds: Vec::new(),
            vertex_origins: Vec::new(),
            empty: Some(cert),
            timings,
        }
    }

    /// Rebuilds the hull from the certified boundary points (or the anchors
    /// when none is certified).
    fn assemble(&mut self) -> Result<()> {
        let mut pts = Vec::new();
        let mut ctrl = Vec::new();
        let mut bounds = Vec::new();
        let mut origins = Vec::new();
        for (i, b) in self.boundary_points.iter().enumerate().filter(|(_, b)| b.is_certified()) {
            pts.push(b.point.clone());
            ctrl.push(b.controls.clone().unwrap());
            bounds.push(b.lower_bound.unwrap());
            origins.push(Some(i));
        }
        if pts.is_empty() {
            for a in &self.anchors {
                pts.push(a.x_anchor.clone());
                ctrl.push(a.u.clone());
                bounds.push(a.lower_bound);
                origins.push(None);
            }
        }
        if pts.is_empty() {
            self.polytope = None;
            return Ok(());
        }
        let idx = extreme_point_indices(&pts)?;
        self.polytope = Some(VPolytope::new(idx.iter().map(|&i| pts[i].clone()).collect())?);
        self.vertex_controls = idx.iter().map(|&i| ctrl[i].clone()).collect();
        self.vertex_bounds = idx.iter().map(|&i| bounds[i]).collect();
        self.vertex_origins = idx.iter().map(|&i| origins[i]).collect();
        Ok(())
    }

    /// Result restricted to the first `count` directions.
    pub fn prefix(&self, count: usize) -> Result<Self> {
        let mut r = self.clone();
        r.boundary_points.retain(|b| b.direction < count);
        if r.empty.is_none() {
            r.assemble()?;
        }
        Ok(r)
    }
}

fn compute_anchor(problem: &RiskAllocatedProblem, alpha: f64, mode: AnchorMode) -> Result<AnchorOutcome> {
    match mode {
        AnchorMode::Xmax => problem.solve_anchor_xmax(alpha),
        AnchorMode::Cheby => problem.solve_anchor_cheby(alpha),
    }
}

fn chance_direction(
    problem: &RiskAllocatedProblem,
    alpha: f64,
    anchor: &AnchorResult,
    index: usize,
    d: &DVector<f64>,
) -> BoundaryPoint {
    let mut bp = BoundaryPoint {
        direction: index,
        anchor_mode: anchor.mode,
        point: anchor.x_anchor.clone(),
        theta: 0.0,
        controls: None,
        lower_bound: None,
        status: DirectionStatus::Failed,
        message: None,
    };
    match problem.solve_line_search(alpha, &anchor.x_anchor, d) {
        Ok(r) if r.status == LineStatus::Optimal => {
            bp.theta = r.theta;
            bp.point = r.point;
            bp.controls = r.u;
            bp.lower_bound = r.lower_bound;
            bp.status = if r.theta > 0.0 {
                DirectionStatus::Optimal
            } else {
                DirectionStatus::ZeroLength
            };
        }
        Ok(_) => {
            // Numerically infeasible at the anchor: fall back to the anchor's own certificate.
            bp.controls = Some(anchor.u.clone());
            bp.lower_bound = Some(anchor.lower_bound);
            bp.status = if anchor.lower_bound >= alpha {
                DirectionStatus::ZeroLength
            } else {
                DirectionStatus::Failed
            };
            bp.message = Some("line search infeasible at the anchor".into());
        }
        Err(e) => bp.message = Some(e.to_string()),
    }
    bp
}

/// Runs the direction searches on `jobs` workers; results keep direction order.
fn run_directions<F>(jobs: usize, count: usize, f: F) -> Result<Vec<BoundaryPoint>>
where
    F: Fn(usize) -> BoundaryPoint + Send + Sync,
{
    if jobs <= 1 {
        return Ok((0..count).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Solver(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(&f).collect()))
}

fn skipped(index: usize, anchor: &AnchorResult) -> BoundaryPoint {
    BoundaryPoint {
        direction: index,
        anchor_mode: anchor.mode,
        point: anchor.x_anchor.clone(),
        theta: 0.0,
        controls: None,
        lower_bound: None,
        status: DirectionStatus::Skipped,
        message: Some("time budget exhausted".into()),
    }
}

/// Anchor, one line search per direction, hull of the boundary points.
pub fn compute_reach_set(
    problem: &RiskAllocatedProblem,
    directions: &DirectionSet,
    options: &ReachOptions,
) -> Result<ReachSetResult> {
    let alpha = options.alpha;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return invalid(format!("probability threshold {alpha} outside (0, 1]"));
    }
    let n = problem.state_dim();
    if directions.directions.iter().any(|d| d.len() != n) {
        return invalid("direction dimension differs from the state dimension");
    }
    let dirs = match options.max_directions {
        Some(c) => directions.prefix(c),
        None => directions.clone(),
    };
    let start = Instant::now();
    let mut timings = Timings::default();

    let mut anchors = Vec::new();
    let mut last_cert = None;
    let genz_eval = match options.backend {
        Backend::Genz => Some(GenzEvaluator::new(problem, &options.genz)?),
        Backend::Chance => None,
    };
    for mode in options.anchor_choice().modes() {
        let outcome = match &genz_eval {
            None => compute_anchor(problem, alpha, mode)?,
            Some(g) => genz::genz_anchor(problem, g, alpha, mode)?,
        };
        match outcome {
            AnchorOutcome::Found(a) => anchors.push(a),
            AnchorOutcome::Empty(c) => last_cert = Some(c),
        }
    }
    timings.anchor_s = start.elapsed().as_secs_f64();
    if anchors.is_empty() {
        timings.total_s = start.elapsed().as_secs_f64();
        let cert = last_cert.unwrap_or(EmptyCertificate {
            reason: EmptyReason::Infeasible,
            best_lower_bound: None,
            message: "no anchor found".into(),
        });
        return Ok(ReachSetResult::empty(alpha, options.backend, cert, timings));
    }

    let dir_start = Instant::now();
    let mut boundary_points = Vec::new();
    for anchor in &anchors {
        let search = |i: usize| {
            if options.time_budget.is_some_and(|b| start.elapsed() > b) {
                return skipped(i, anchor);
            }
            let d = dirs.get(i);
            match &genz_eval {
                None => chance_direction(problem, alpha, anchor, i, &d),
                Some(g) => genz::genz_direction(problem, g, alpha, anchor, i, &d),
            }
        };
        boundary_points.extend(run_directions(options.jobs, dirs.len(), search)?);
    }
    timings.directions_s = dir_start.elapsed().as_secs_f64();

    let mut result = ReachSetResult {
        alpha,
        backend: options.backend,
        anchors,
        boundary_points,
        polytope: None,
        vertex_controls: Vec::new(),
        vertex_bounds: Vec::new(),
        vertex_origins: Vec::new(),
        empty: None,
        timings,
    };
    result.assemble()?;
    result.timings.total_s = start.elapsed().as_secs_f64();
    Ok(result)
}

/// `γ = (log α₂ − log β)/(log α₂ − log α₁)`.
pub fn interpolation_weight(alpha1: f64, alpha2: f64, beta: f64) -> Result<f64> {
    if !(0.0 < alpha1 && alpha1 < alpha2 && alpha2 <= 1.0) {
        return invalid(format!("need 0 < α₁ < α₂ <= 1, got {alpha1} and {alpha2}"));
    }
    if !(alpha1..=alpha2).contains(&beta) {
        return invalid(format!("β = {beta} outside [{alpha1}, {alpha2}]"));
    }
    Ok((alpha2.ln() - beta.ln()) / (alpha2.ln() - alpha1.ln()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Interpolation {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub gamma: f64,
    pub polytope: VPolytope,
    /// `γU₁ᵢ + (1−γ)U₂ⱼ` for the vertex pair behind each output vertex.
    pub controls: Vec<DVector<f64>>,
    pub pairs: Vec<(usize, usize)>,
}

/// Scaled Minkowski sum of the `α₁` and `α₂` sets at level `β`.
pub fn interpolate_sets(set1: &ReachSetResult, set2: &ReachSetResult, beta: f64) -> Result<Interpolation> {
    let gamma = interpolation_weight(set1.alpha, set2.alpha, beta)?;
    let (Some(p1), Some(p2)) = (&set1.polytope, &set2.polytope) else {
        return invalid("both sets must be nonempty; recompute the empty one at a lower threshold");
    };
    let (polytope, pairs) = minkowski_interpolate_indexed(p1, p2, gamma)?;
    let controls = pairs
        .iter()
        .map(|&(i, j)| &set1.vertex_controls[i] * gamma + &set2.vertex_controls[j] * (1.0 - gamma))
        .collect();
    Ok(Interpolation {
        alpha1: set1.alpha,
        alpha2: set2.alpha,
        beta,
        gamma,
        polytope,
        controls,
        pairs,
    })
}

/// Open-loop controls for `x0` inside the polytope, blended from the vertex
/// controllers by convex weights that reproduce `x0`.
pub fn initial_guess_controller(result: &ReachSetResult, x0: &DVector<f64>) -> Result<(DVector<f64>, Vec<f64>)> {
    let Some(poly) = &result.polytope else {
        return invalid("the reach set is empty");
    };
    if x0.len() != poly.dim() {
        return invalid("initial state has the wrong dimension");
    }
    let v = poly.vertices();
    if let Some(i) = v.iter().position(|p| (p - x0).amax() <= 1e-12) {
        let mut w = vec![0.0; v.len()];
        w[i] = 1.0;
        return Ok((result.vertex_controls[i].clone(), w));
    }
    let Some(w) = convex_weights(v, x0, 0.0)? else {
        return invalid("initial state lies outside the reach-set polytope");
    };
    let mut u = DVector::zeros(result.vertex_controls[0].len());
    for (wi, ui) in w.iter().zip(&result.vertex_controls) {
        u += ui * *wi;
    }
    Ok((u, w))
}

//! Linear time-varying Gaussian systems, target tubes, concatenated
//! dynamics and the benchmark generators.
//!
//! All time-invariant systems are stored as repeated per-step matrices so the
//! rest of the crate only ever sees the time-varying form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{box_polytope, HPolytope, PolytopeJson};

/// Tolerance for the symmetric-PSD check on covariance matrices.
pub const PSD_TOL: f64 = 1e-10;

/// Checks symmetry and positive semidefiniteness (eigenvalues >= −tol·scale).
pub fn check_psd(c: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !c.is_square() {
        return invalid("covariance is not square");
    }
    if c.iter().any(|v| !v.is_finite()) {
        return invalid("covariance has non-finite entries");
    }
    let scale = c.amax().max(1.0);
    if (c - c.transpose()).amax() > tol * scale {
        return invalid("covariance is not symmetric");
    }
    if c.nrows() == 0 {
        return Ok(());
    }
    let eig = c.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -tol * scale {
        return invalid(format!("covariance has negative eigenvalue {min:e}"));
    }
    Ok(())
}

/// Symmetric square root `S` with `S Sᵀ = C` for a PSD matrix (negative
/// round-off eigenvalues are clipped to zero).
pub fn psd_sqrt(c: &DMatrix<f64>) -> DMatrix<f64> {
    if c.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = c.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Independent Gaussian disturbance `w_k ~ N(μ_k, C_k)` per step.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDisturbance {
    pub mean_per_step: Vec<DVector<f64>>,
    pub cov_per_step: Vec<DMatrix<f64>>,
}

impl GaussianDisturbance {
    pub fn new(mean_per_step: Vec<DVector<f64>>, cov_per_step: Vec<DMatrix<f64>>) -> Result<Self> {
        if mean_per_step.len() != cov_per_step.len() {
            return invalid("disturbance mean and covariance lists differ in length");
        }
        for (k, (m, c)) in mean_per_step.iter().zip(&cov_per_step).enumerate() {
            if c.nrows() != m.len() {
                return invalid(format!("disturbance step {k}: mean and covariance sizes differ"));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return invalid(format!("disturbance step {k}: non-finite mean"));
            }
            check_psd(c, PSD_TOL).map_err(|e| crate::Error::InvalidArgument(format!("disturbance step {k}: {e}")))?;
        }
        Ok(Self {
            mean_per_step,
            cov_per_step,
        })
    }

    /// Same distribution at every step.
    pub fn iid(mean: DVector<f64>, cov: DMatrix<f64>, steps: usize) -> Result<Self> {
        Self::new(vec![mean; steps], vec![cov; steps])
    }
}

/// `x_{k+1} = A_k x_k + B_k u_k + w_k`, `u_k ∈ U`, over `N` steps.
#[derive(Clone, Debug)]
pub struct StochasticLTVSystem {
    a_seq: Vec<DMatrix<f64>>,
    b_seq: Vec<DMatrix<f64>>,
    disturbance: GaussianDisturbance,
    input_set: HPolytope,
}

impl StochasticLTVSystem {
    pub fn new(
        a_seq: Vec<DMatrix<f64>>,
        b_seq: Vec<DMatrix<f64>>,
        disturbance: GaussianDisturbance,
        input_set: HPolytope,
    ) -> Result<Self> {
        let horizon = a_seq.len();
        if horizon == 0 {
            return invalid("horizon must be at least one step");
        }
        if b_seq.len() != horizon || disturbance.mean_per_step.len() != horizon {
            return invalid(format!(
                "expected {horizon} input matrices and disturbance steps, got {} and {}",
                b_seq.len(),
                disturbance.mean_per_step.len()
            ));
        }
        let n = a_seq[0].nrows();
        if n == 0 {
            return invalid("state dimension must be positive");
        }
        let m = b_seq[0].ncols();
        for k in 0..horizon {
            if a_seq[k].shape() != (n, n) {
                return invalid(format!("A_{k} is not {n}x{n}"));
            }
            if b_seq[k].shape() != (n, m) {
                return invalid(format!("B_{k} is not {n}x{m}"));
            }
            if disturbance.mean_per_step[k].len() != n {
                return invalid(format!("disturbance step {k} has the wrong dimension"));
            }
            if a_seq[k].iter().chain(b_seq[k].iter()).any(|v| !v.is_finite()) {
                return invalid(format!("system matrices at step {k} are not finite"));
            }
        }
        if input_set.dim() != m {
            return invalid(format!("input set lives in R^{} but B has {m} columns", input_set.dim()));
        }
        if m > 0 && (input_set.is_empty()? || !input_set.is_bounded()?) {
            return invalid("input set must be bounded and nonempty");
        }
        Ok(Self {
            a_seq,
            b_seq,
            disturbance,
            input_set,
        })
    }

    /// Repeats `(A, B, N(μ, C))` for `horizon` steps.
    pub fn time_invariant(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        input_set: HPolytope,
        horizon: usize,
    ) -> Result<Self> {
        let dist = GaussianDisturbance::iid(mean, cov, horizon)?;
        Self::new(vec![a; horizon], vec![b; horizon], dist, input_set)
    }

    pub fn horizon(&self) -> usize {
        self.a_seq.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a_seq[0].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_seq[0].ncols()
    }

    pub fn a(&self, k: usize) -> &DMatrix<f64> {
        &self.a_seq[k]
    }

    pub fn b(&self, k: usize) -> &DMatrix<f64> {
        &self.b_seq[k]
    }

    pub fn a_seq(&self) -> &[DMatrix<f64>] {
        &self.a_seq
    }

    pub fn b_seq(&self) -> &[DMatrix<f64>] {
        &self.b_seq
    }

    pub fn disturbance(&self) -> &GaussianDisturbance {
        &self.disturbance
    }

    pub fn input_set(&self) -> &HPolytope {
        &self.input_set
    }

    /// One step of the dynamics.
    pub fn step(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a_seq[k] * x + &self.b_seq[k] * u + w
    }

    /// States `x_1..x_N` under a stacked input `U` and stacked noise `W`.
    pub fn rollout(&self, x0: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Vec<DVector<f64>> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut x = x0.clone();
        let mut out = Vec::with_capacity(self.horizon());
        for k in 0..self.horizon() {
            x = self.step(k, &x, &u.rows(k * m, m).into_owned(), &w.rows(k * n, n).into_owned());
            out.push(x.clone());
        }
        out
    }

    /// Noiseless trajectory `x_1..x_N` under the disturbance means.
    pub fn mean_rollout(&self, x0: &DVector<f64>, u: &DVector<f64>) -> Vec<DVector<f64>> {
        let w = DVector::from_iterator(
            self.state_dim() * self.horizon(),
            self.disturbance.mean_per_step.iter().flat_map(|m| m.iter().copied()),
        );
        self.rollout(x0, u, &w)
    }
}

/// Safe sets `T_0..T_N`.
#[derive(Clone, Debug)]
pub struct TargetTube {
    sets: Vec<HPolytope>,
}

impl TargetTube {
    pub fn new(sets: Vec<HPolytope>) -> Result<Self> {
        let Some(first) = sets.first() else {
            return invalid("a target tube needs at least one set");
        };
        let n = first.dim();
        for (k, s) in sets.iter().enumerate() {
            if s.dim() != n {
                return invalid(format!("T_{k} has dimension {} instead of {n}", s.dim()));
            }
            if !s.is_bounded()? {
                return invalid(format!("T_{k} is unbounded"));
            }
        }
        Ok(Self { sets })
    }

    /// The same set at every step `0..=horizon`.
    pub fn constant(set: HPolytope, horizon: usize) -> Result<Self> {
        Self::new(vec![set; horizon + 1])
    }

    pub fn horizon(&self) -> usize {
        self.sets.len() - 1
    }

    pub fn state_dim(&self) -> usize {
        self.sets[0].dim()
    }

    pub fn sets(&self) -> &[HPolytope] {
        &self.sets
    }

    pub fn set(&self, k: usize) -> &HPolytope {
        &self.sets[k]
    }

    /// Whether the trajectory `x_0..x_N` stays inside the tube.
    pub fn contains_trajectory(&self, x0: &DVector<f64>, states: &[DVector<f64>], tol: f64) -> bool {
        std::iter::once(x0)
            .chain(states.iter())
            .zip(&self.sets)
            .all(|(x, s)| s.contains(x, tol).unwrap_or(false))
    }

    /// Checks tube and system agree on dimension and horizon.
    pub fn check_compatible(&self, sys: &StochasticLTVSystem) -> Result<()> {
        if self.state_dim() != sys.state_dim() {
            return invalid("tube and system differ in state dimension");
        }
        if self.horizon() != sys.horizon() {
            return invalid(format!(
                "tube has {} sets but the system horizon is {}",
                self.sets.len(),
                sys.horizon()
            ));
        }
        Ok(())
    }
}

/// `X = 𝒜x₀ + HU + GW` for stacked `X = [x_1; …; x_N]`.
#[derive(Clone, Debug)]
pub struct ConcatenatedDynamics {
    pub acal: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub mu_w: DVector<f64>,
    pub c_w: DMatrix<f64>,
    pub state_dim: usize,
    pub input_dim: usize,
    pub horizon: usize,
}

impl ConcatenatedDynamics {
    /// Rows of `(𝒜, H)` and the disturbance offset for step `k` (1-based).
    pub fn step_rows(&self, k: usize) -> std::ops::Range<usize> {
        (k - 1) * self.state_dim..k * self.state_dim
    }

    /// The disturbance contribution `Gμ_W`.
    pub fn noise_mean(&self) -> DVector<f64> {
        &self.g * &self.mu_w
    }

    /// `C_X = G C_W Gᵀ`.
    pub fn state_cov(&self) -> DMatrix<f64> {
        &self.g * &self.c_w * self.g.transpose()
    }
}

pub fn concat_matrices(sys: &StochasticLTVSystem) -> ConcatenatedDynamics {
    let (n, m, big_n) = (sys.state_dim(), sys.input_dim(), sys.horizon());
    let mut acal = DMatrix::zeros(n * big_n, n);
    let mut h = DMatrix::zeros(n * big_n, m * big_n);
    let mut g = DMatrix::zeros(n * big_n, n * big_n);
    // Block (k, j) of H is Φ(k, j+1) B_j with Φ(k, j+1) = A_{k-1}···A_{j+1};
    // rows are built recursively: block row k = A_{k-1}·(block row k-1) + new column.
    let mut phi = DMatrix::<f64>::identity(n, n);
    for k in 1..=big_n {
        let r = (k - 1) * n;
        let ak = &sys.a_seq[k - 1];
        phi = ak * &phi;
        acal.view_mut((r, 0), (n, n)).copy_from(&phi);
        if k > 1 {
            let prev_h = h.view(((k - 2) * n, 0), (n, m * (k - 1))).into_owned();
            h.view_mut((r, 0), (n, m * (k - 1))).copy_from(&(ak * prev_h));
            let prev_g = g.view(((k - 2) * n, 0), (n, n * (k - 1))).into_owned();
            g.view_mut((r, 0), (n, n * (k - 1))).copy_from(&(ak * prev_g));
        }
        h.view_mut((r, m * (k - 1)), (n, m)).copy_from(&sys.b_seq[k - 1]);
        g.view_mut((r, n * (k - 1)), (n, n)).fill_with_identity();
    }
    let dist = &sys.disturbance;
    let mu_w = DVector::from_iterator(n * big_n, dist.mean_per_step.iter().flat_map(|v| v.iter().copied()));
    let mut c_w = DMatrix::zeros(n * big_n, n * big_n);
    for (k, c) in dist.cov_per_step.iter().enumerate() {
        c_w.view_mut((k * n, k * n), (n, n)).copy_from(c);
    }
    ConcatenatedDynamics {
        acal,
        h,
        g,
        mu_w,
        c_w,
        state_dim: n,
        input_dim: m,
        horizon: big_n,
    }
}

/// Mean and covariance of the stacked state `X`.
pub fn state_mean_cov(
    cd: &ConcatenatedDynamics,
    x0: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x0.len() != cd.state_dim {
        return invalid(format!("x0 has length {} instead of {}", x0.len(), cd.state_dim));
    }
    if u.len() != cd.input_dim * cd.horizon {
        return invalid(format!(
            "input sequence has length {} instead of {}",
            u.len(),
            cd.input_dim * cd.horizon
        ));
    }
    let mean = &cd.acal * x0 + &cd.h * u + cd.noise_mean();
    Ok((mean, cd.state_cov()))
}

/// Marginal `(μ_k, C_k)` of step `k` (1-based) from the stacked moments.
pub fn step_marginal(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    state_dim: usize,
    k: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let r = (k - 1) * state_dim;
    (
        mean.rows(r, state_dim).into_owned(),
        cov.view((r, r), (state_dim, state_dim)).into_owned(),
    )
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Chain of `n` integrators sampled with zero-order hold.
pub fn make_integrator_chain(
    n: usize,
    ts: f64,
    horizon: usize,
    cov: f64,
    input_bound: f64,
) -> Result<StochasticLTVSystem> {
    if n == 0 || !(ts > 0.0) || !(cov >= 0.0) || !(input_bound > 0.0) {
        return invalid("integrator chain needs n >= 1, Ts > 0, cov >= 0 and a positive input bound");
    }
    let a = DMatrix::from_fn(n, n, |i, j| if j >= i { ts.powi((j - i) as i32) / factorial(j - i) } else { 0.0 });
    let b = DMatrix::from_fn(n, 1, |i, _| ts.powi((n - i) as i32) / factorial(n - i));
    let u = box_polytope(&DVector::zeros(1), &DVector::from_element(1, input_bound))?;
    StochasticLTVSystem::time_invariant(a, b, DVector::zeros(n), DMatrix::identity(n, n) * cov, u, horizon)
}

/// Physical constants for the relative orbital dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CwhParams {
    /// Gravitational parameter in km³/s².
    pub gravitational_constant: f64,
    /// Orbital radius in km.
    pub orbital_radius: f64,
    /// Overrides the rate derived from the two constants above.
    pub orbital_rate: Option<f64>,
    /// Deputy mass in kg.
    pub mass: f64,
    pub sampling_time: f64,
    pub cov_diag: [f64; 4],
    pub input_bound: f64,
}

impl Default for CwhParams {
    fn default() -> Self {
        Self {
            gravitational_constant: 398_600.0,
            orbital_radius: 6378.1 + 850.0,
            orbital_rate: None,
            mass: 300.0,
            sampling_time: 20.0,
            cov_diag: [1e-4, 1e-4, 5e-8, 5e-8],
            input_bound: 0.1,
        }
    }
}

impl CwhParams {
    pub fn rate(&self) -> f64 {
        self.orbital_rate
            .unwrap_or_else(|| (self.gravitational_constant / self.orbital_radius.powi(3)).sqrt())
    }
}

/// Exact ZOH discretization of `ż = A_c z + B_c u` over `ts`, via the
/// exponential of the augmented matrix `[[A_c, B_c], [0, 0]]·ts`.
pub fn zoh_discretize(ac: &DMatrix<f64>, bc: &DMatrix<f64>, ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (ac.nrows(), bc.ncols());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * ts));
    let e = aug.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

/// Continuous-time CWH pair for state `[x, y, ẋ, ẏ]` and force input.
pub fn cwh_continuous(omega: f64, mass: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    #[rustfmt::skip]
    let ac = DMatrix::from_row_slice(4, 4, &[
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        3.0 * omega * omega, 0.0, 0.0, 2.0 * omega,
        0.0, 0.0, -2.0 * omega, 0.0,
    ]);
    let mut bc = DMatrix::zeros(4, 2);
    bc[(2, 0)] = 1.0 / mass;
    bc[(3, 1)] = 1.0 / mass;
    (ac, bc)
}

pub fn make_cwh(params: &CwhParams, horizon: usize) -> Result<StochasticLTVSystem> {
    let omega = params.rate();
    if !(omega > 0.0) || !(params.mass > 0.0) || !(params.sampling_time > 0.0) || !(params.input_bound > 0.0) {
        return invalid("CWH needs positive orbital rate, mass, sampling time and input bound");
    }
    let (ac, bc) = cwh_continuous(omega, params.mass);
    let (a, b) = zoh_discretize(&ac, &bc, params.sampling_time);
    let u = box_polytope(&DVector::zeros(2), &DVector::from_element(2, params.input_bound))?;
    let cov = DMatrix::from_diagonal(&DVector::from_column_slice(&params.cov_diag));
    StochasticLTVSystem::time_invariant(a, b, DVector::zeros(4), cov, u, horizon)
}

/// Line-of-sight tube: `|x| <= −y <= 2`, `|ẋ|, |ẏ| <= 0.5` before the last
/// step, and the docking box at step `horizon`.
pub fn cwh_tube(horizon: usize) -> Result<TargetTube> {
    #[rustfmt::skip]
    let cone = HPolytope::from_rows(
        &[
            vec![1.0, 1.0, 0.0, 0.0],
            vec![-1.0, 1.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, -1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, -1.0],
        ],
        &[0.0, 0.0, 2.0, 0.5, 0.5, 0.5, 0.5],
    )?;
    let dock = box_polytope(
        &DVector::from_column_slice(&[0.0, -0.05, 0.0, 0.0]),
        &DVector::from_column_slice(&[0.1, 0.05, 0.01, 0.01]),
    )?;
    let mut sets = vec![cone; horizon];
    sets.push(dock);
    TargetTube::new(sets)
}

/// Unicycle with a known heading schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DubinsParams {
    pub sampling_time: f64,
    pub phi0: f64,
    /// Turning rates `ω_0..`; a single entry is repeated over the horizon.
    pub turn_rates: Vec<f64>,
    pub umax: f64,
    pub mu_eta: [f64; 2],
    pub cov_eta: [[f64; 2]; 2],
}

impl Default for DubinsParams {
    fn default() -> Self {
        Self {
            sampling_time: 0.1,
            phi0: 0.1 * std::f64::consts::PI,
            turn_rates: vec![0.2 * std::f64::consts::PI],
            umax: 10.0,
            mu_eta: [0.0, 0.0],
            cov_eta: [[1e-3, 0.0], [0.0, 1e-3]],
        }
    }
}

/// Headings `φ_k = φ₀ + Ts·Σ_{j<k} ω_j` for `k = 0..horizon`.
pub fn dubins_headings(params: &DubinsParams, horizon: usize) -> Result<Vec<f64>> {
    let rates: Vec<f64> = match params.turn_rates.len() {
        1 => vec![params.turn_rates[0]; horizon],
        l if l >= horizon => params.turn_rates[..horizon].to_vec(),
        l => return invalid(format!("{l} turn rates given for a horizon of {horizon}")),
    };
    let mut phi = params.phi0;
    let mut out = Vec::with_capacity(horizon);
    for w in rates {
        out.push(phi);
        phi += params.sampling_time * w;
    }
    Ok(out)
}

pub fn make_dubins(params: &DubinsParams, horizon: usize) -> Result<StochasticLTVSystem> {
    if !(params.sampling_time > 0.0) || !(params.umax > 0.0) {
        return invalid("Dubins needs positive sampling time and speed bound");
    }
    let ts = params.sampling_time;
    let heads = dubins_headings(params, horizon)?;
    let b_seq = heads
        .iter()
        .map(|p| DMatrix::from_column_slice(2, 1, &[ts * p.cos(), ts * p.sin()]))
        .collect();
    let cov = DMatrix::from_fn(2, 2, |i, j| params.cov_eta[i][j]);
    let dist = GaussianDisturbance::iid(DVector::from_column_slice(&params.mu_eta), cov, horizon)?;
    let u = HPolytope::from_rows(&[vec![1.0], vec![-1.0]], &[params.umax, 0.0])?;
    StochasticLTVSystem::new(vec![DMatrix::identity(2, 2); horizon], b_seq, dist, u)
}

/// Boxes around the noiseless trajectory from the origin under the constant
/// input `u_max·δ`, with half-width `base·exp(−k/N_c)`.
pub fn nominal_dubins_tube(
    sys: &StochasticLTVSystem,
    umax: f64,
    delta: f64,
    decay: f64,
    base_half_width: f64,
) -> Result<TargetTube> {
    if !(delta > 0.0 && delta <= 1.0) {
        return invalid(format!("speed fraction {delta} outside (0, 1]"));
    }
    if !(decay > 0.0) || !(base_half_width > 0.0) {
        return invalid("decay constant and base half-width must be positive");
    }
    let n = sys.state_dim();
    let u = DVector::from_element(sys.horizon() * sys.input_dim(), umax * delta);
    let x0 = DVector::zeros(n);
    let w = DVector::zeros(n * sys.horizon());
    let centers: Vec<DVector<f64>> = std::iter::once(x0.clone()).chain(sys.rollout(&x0, &u, &w)).collect();
    let sets = centers
        .iter()
        .enumerate()
        .map(|(k, c)| box_polytope(c, &DVector::from_element(n, base_half_width * (-(k as f64) / decay).exp())))
        .collect::<Result<Vec<_>>>()?;
    TargetTube::new(sets)
}

/// A set in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SetSpec {
    /// `lower <= x <= upper`; scalars are broadcast to the dimension.
    Bounds { lower: Broadcast, upper: Broadcast },
    Polytope(PolytopeJson),
}

/// A scalar repeated over every coordinate, or an explicit vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Broadcast {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Broadcast {
    pub fn expand(&self, dim: usize) -> Result<DVector<f64>> {
        match self {
            Broadcast::Scalar(v) => Ok(DVector::from_element(dim, *v)),
            Broadcast::Vector(v) if v.len() == dim => Ok(DVector::from_column_slice(v)),
            Broadcast::Vector(v) => invalid(format!("vector of length {} where {dim} was expected", v.len())),
        }
    }
}

impl SetSpec {
    pub fn build(&self, dim: usize) -> Result<HPolytope> {
        match self {
            SetSpec::Bounds { lower, upper } => {
                let (lo, hi) = (lower.expand(dim)?, upper.expand(dim)?);
                if lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h)) {
                    return invalid("box bounds need lower < upper");
                }
                box_polytope(&((&lo + &hi) * 0.5), &((&hi - &lo) * 0.5))
            }
            SetSpec::Polytope(PolytopeJson::H { normals, offsets }) => {
                let p = HPolytope::from_rows(normals, offsets)?;
                if p.dim() != dim && !normals.is_empty() {
                    return invalid(format!("polytope has dimension {} instead of {dim}", p.dim()));
                }
                Ok(p)
            }
            SetSpec::Polytope(PolytopeJson::V { .. }) => invalid("sets must be given in half-space form"),
        }
    }
}

/// System section of a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Integrator {
        dim: usize,
        #[serde(default = "default_integrator_ts")]
        sampling_time: f64,
        cov: f64,
        input_bound: f64,
    },
    Cwh(CwhParams),
    Dubins(DubinsParams),
    /// Explicit matrices: one entry is repeated, otherwise one per step.
    /// A system without inputs gives `b` as rows of length zero.
    Custom {
        a: Vec<Vec<Vec<f64>>>,
        b: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        noise_mean: Option<Vec<f64>>,
        noise_cov: Vec<Vec<f64>>,
        #[serde(default)]
        input_set: Option<SetSpec>,
    },
}

fn default_integrator_ts() -> f64 {
    0.1
}

/// Tube section of a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TubeSpec {
    /// `set` at every step, optionally replaced by `terminal` at step N.
    Constant {
        set: SetSpec,
        #[serde(default)]
        terminal: Option<SetSpec>,
    },
    Explicit { sets: Vec<SetSpec> },
    /// Boxes `|x_i − c_i| <= base·ratio^k`.
    Geometric {
        #[serde(default)]
        center: Option<Vec<f64>>,
        base: f64,
        ratio: f64,
    },
    Cwh,
    DubinsNominal {
        #[serde(default = "default_dubins_delta")]
        delta: f64,
        #[serde(default = "default_dubins_decay")]
        decay: f64,
        #[serde(default = "default_dubins_width")]
        base_half_width: f64,
    },
}

fn default_dubins_delta() -> f64 {
    0.7
}
fn default_dubins_decay() -> f64 {
    100.0
}
fn default_dubins_width() -> f64 {
    4.0
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let c = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != c) {
        return invalid(format!("{what} is ragged"));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

fn per_step(list: &[Vec<Vec<f64>>], horizon: usize, what: &str) -> Result<Vec<DMatrix<f64>>> {
    let mats = list.iter().map(|m| matrix(m, what)).collect::<Result<Vec<_>>>()?;
    match mats.len() {
        1 => Ok(vec![mats[0].clone(); horizon]),
        l if l == horizon => Ok(mats),
        l => invalid(format!("{l} {what} matrices given for horizon {horizon}")),
    }
}

impl SystemSpec {
    pub fn build(&self, horizon: usize) -> Result<StochasticLTVSystem> {
        match self {
            SystemSpec::Integrator {
                dim,
                sampling_time,
                cov,
                input_bound,
            } => make_integrator_chain(*dim, *sampling_time, horizon, *cov, *input_bound),
            SystemSpec::Cwh(p) => make_cwh(p, horizon),
            SystemSpec::Dubins(p) => make_dubins(p, horizon),
            SystemSpec::Custom {
                a,
                b,
                noise_mean,
                noise_cov,
                input_set,
            } => {
                let a_seq = per_step(a, horizon, "A")?;
                let b_seq = per_step(b, horizon, "B")?;
                let n = a_seq[0].nrows();
                let m = b_seq[0].ncols();
                let cov = matrix(noise_cov, "noise covariance")?;
                let mean = match noise_mean {
                    Some(v) => DVector::from_column_slice(v),
                    None => DVector::zeros(n),
                };
                let u = match (input_set, m) {
                    (_, 0) => HPolytope::zero_dimensional(),
                    (Some(s), m) => s.build(m)?,
                    (None, _) => return invalid("custom systems with inputs need an input_set"),
                };
                let dist = GaussianDisturbance::iid(mean, cov, horizon)?;
                StochasticLTVSystem::new(a_seq, b_seq, dist, u)
            }
        }
    }
}

impl TubeSpec {
    pub fn build(&self, sys: &StochasticLTVSystem, system_spec: &SystemSpec) -> Result<TargetTube> {
        let (n, horizon) = (sys.state_dim(), sys.horizon());
        let tube = match self {
            TubeSpec::Constant { set, terminal } => {
                let mut sets = vec![set.build(n)?; horizon + 1];
                if let Some(t) = terminal {
                    sets[horizon] = t.build(n)?;
                }
                TargetTube::new(sets)?
            }
            TubeSpec::Explicit { sets } => {
                TargetTube::new(sets.iter().map(|s| s.build(n)).collect::<Result<Vec<_>>>()?)?
            }
            TubeSpec::Geometric { center, base, ratio } => {
                if !(*base > 0.0 && *ratio > 0.0) {
                    return invalid("geometric tube needs positive base and ratio");
                }
                let c = match center {
                    Some(c) => Broadcast::Vector(c.clone()).expand(n)?,
                    None => DVector::zeros(n),
                };
                let sets = (0..=horizon)
                    .map(|k| box_polytope(&c, &DVector::from_element(n, base * ratio.powi(k as i32))))
                    .collect::<Result<Vec<_>>>()?;
                TargetTube::new(sets)?
            }
            TubeSpec::Cwh => cwh_tube(horizon)?,
            TubeSpec::DubinsNominal {
                delta,
                decay,
                base_half_width,
            } => {
                let SystemSpec::Dubins(p) = system_spec else {
                    return invalid("the dubins_nominal tube requires a dubins system");
                };
                nominal_dubins_tube(sys, p.umax, *delta, *decay, *base_half_width)?
            }
        };
        tube.check_compatible(sys)?;
        Ok(tube)
    }
}

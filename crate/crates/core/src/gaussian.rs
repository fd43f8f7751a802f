//! Standard normal CDF and quantile, the piecewise-affine upper envelope of
//! `δ ↦ Φ⁻¹(1−δ)`, and a quasi-Monte-Carlo estimator of Gaussian box
//! probabilities by sequential conditioning.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc_inv;

use crate::error::{invalid, Result};
use crate::sysmodel::{check_psd, PSD_TOL};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

pub(crate) fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Quantile for `p` strictly inside (0, 1), refined by one Halley step.
pub(crate) fn phi_inv(p: f64) -> f64 {
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // Halley's step on Φ(x) − p, using the tail that keeps precision.
    let e = if x < 0.0 { phi(x) - p } else { (1.0 - p) - phi(-x) };
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf == 0.0 {
        return x;
    }
    let u = e / pdf;
    x - u / (1.0 + 0.5 * x * u)
}

/// `Φ(z)`; `±∞` map to 1 and 0.
pub fn normal_cdf(z: f64) -> Result<f64> {
    if z.is_nan() {
        return invalid("normal_cdf of NaN");
    }
    Ok(phi(z))
}

/// `Φ⁻¹(p)` for `p ∈ (0, 1)`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("quantile level {p} outside (0, 1)"));
    }
    Ok(phi_inv(p))
}

/// `Φ⁻¹(1−δ)` evaluated through the lower tail so small `δ` keeps precision.
pub(crate) fn upper_quantile(delta: f64) -> f64 {
    -phi_inv(delta)
}

/// Upper envelope of secant lines over `Φ⁻¹(1−δ)` on `[δ_lb, δ_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PwaQuantile {
    /// `(slope, intercept)` of each secant, in knot order.
    pub pieces: Vec<(f64, f64)>,
    pub knots: Vec<f64>,
    pub delta_lb: f64,
    pub delta_max: f64,
    pub tol: f64,
}

impl PwaQuantile {
    /// `max_ℓ (m_ℓ δ + c_ℓ)`.
    pub fn eval(&self, delta: f64) -> f64 {
        self.pieces
            .iter()
            .map(|(m, c)| m * delta + c)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
}

/// Largest gap between the secant over `[a, b]` and the convex function.
/// The gap is concave in `δ`, so golden-section search finds its maximum.
fn secant_gap(a: f64, b: f64) -> f64 {
    let (fa, fb) = (upper_quantile(a), upper_quantile(b));
    let slope = (fb - fa) / (b - a);
    let gap = |d: f64| fa + slope * (d - a) - upper_quantile(d);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut g1, mut g2) = (gap(x1), gap(x2));
    for _ in 0..80 {
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + g * (hi - lo);
            g2 = gap(x2);
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - g * (hi - lo);
            g1 = gap(x1);
        }
        if hi - lo <= 1e-14 * b {
            break;
        }
    }
    g1.max(g2).max(0.0)
}

/// Greedy secant construction: each knot is pushed as far right as the gap
/// budget allows (slightly under `tol` to absorb search error).
pub fn build_pwa_quantile(delta_lb: f64, delta_max: f64, tol: f64) -> Result<PwaQuantile> {
    if delta_max > 0.5 {
        return invalid(format!("δ_max = {delta_max} exceeds 0.5 where Φ⁻¹(1−δ) stops being convex"));
    }
    if !(delta_lb > 0.0 && delta_lb < delta_max) {
        return invalid(format!("need 0 < δ_lb < δ_max, got {delta_lb} and {delta_max}"));
    }
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let budget = 0.99 * tol;
    let mut knots = vec![delta_lb];
    let mut a = delta_lb;
    while a < delta_max {
        let b = if secant_gap(a, delta_max) <= budget {
            delta_max
        } else {
            let (mut ok, mut bad) = (a, delta_max);
            // Bisect in log space: the knots are spread over six decades.
            for _ in 0..60 {
                let mid = (ok.ln() * 0.5 + bad.ln() * 0.5).exp();
                if secant_gap(a, mid) <= budget {
                    ok = mid;
                } else {
                    bad = mid;
                }
                if bad / ok - 1.0 < 1e-10 {
                    break;
                }
            }
            if ok <= a {
                return invalid("secant construction stalled");
            }
            ok
        };
        knots.push(b);
        a = b;
    }
    let pieces = knots
        .windows(2)
        .map(|w| {
            let (fa, fb) = (upper_quantile(w[0]), upper_quantile(w[1]));
            let m = (fb - fa) / (w[1] - w[0]);
            (m, fa - m * w[0])
        })
        .collect();
    Ok(PwaQuantile {
        pieces,
        knots,
        delta_lb,
        delta_max,
        tol,
    })
}

/// `P(lower <= X <= upper)` for `X ~ N(mean, cov)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MvnBox {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl MvnBox {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) || lower.len() != d || upper.len() != d {
            return invalid("box probability inputs disagree in dimension");
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
            return invalid("box needs lower <= upper");
        }
        check_psd(&cov, PSD_TOL)?;
        Ok(Self { mean, cov, lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Lower-triangular factor in a chosen variable order, plus the shifted
/// limits in that order. Rows with zero residual variance get a zero
/// diagonal and are handled as deterministic checks.
struct Conditioning {
    l: DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Absolute tolerance for the deterministic rows.
    slack: f64,
}

fn conditioning(b: &MvnBox) -> Conditioning {
    let d = b.dim();
    let lo: Vec<f64> = (0..d).map(|i| b.lower[i] - b.mean[i]).collect();
    let hi: Vec<f64> = (0..d).map(|i| b.upper[i] - b.mean[i]).collect();
    let scale = b.cov.diagonal().amax().max(f64::MIN_POSITIVE);
    let eps = 1e-12 * scale;
    // Most constraining variables first: ascending marginal mass.
    let mass = |i: usize| {
        let s = b.cov[(i, i)].sqrt();
        if s * s <= eps {
            -1.0
        } else {
            phi(hi[i] / s) - phi(lo[i] / s)
        }
    };
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| mass(i).total_cmp(&mass(j)).then(i.cmp(&j)));
    let c = DMatrix::from_fn(d, d, |i, j| b.cov[(order[i], order[j])]);
    let mut l = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut s = c[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if s <= eps {
            continue;
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..d {
            let mut v = c[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Conditioning {
        l,
        lower: order.iter().map(|&i| lo[i]).collect(),
        upper: order.iter().map(|&i| hi[i]).collect(),
        slack: 1e-9 * scale.sqrt(),
    }
}

fn conditioned_integrand(c: &Conditioning, w: &[f64], y: &mut [f64]) -> f64 {
    let d = c.lower.len();
    let mut f = 1.0;
    for i in 0..d {
        let mut t = 0.0;
        for k in 0..i {
            t += c.l[(i, k)] * y[k];
        }
        let lii = c.l[(i, i)];
        if lii == 0.0 {
            if t < c.lower[i] - c.slack || t > c.upper[i] + c.slack {
                return 0.0;
            }
            y[i] = 0.0;
            continue;
        }
        let s = phi((c.lower[i] - t) / lii);
        let e = phi((c.upper[i] - t) / lii);
        let width = e - s;
        if width <= 0.0 {
            return 0.0;
        }
        f *= width;
        let q = (s + w[i] * width).clamp(1e-300, 1.0 - 1e-16);
        y[i] = phi_inv(q);
    }
    f
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut n = 2u64;
    while primes.len() < count {
        if primes.iter().take_while(|&&p| p * p <= n).all(|&p| n % p != 0) {
            primes.push(n);
        }
        n += 1;
    }
    primes
}

/// Dimension above which lattice points are replaced by plain random points.
pub const LATTICE_MAX_DIM: usize = 100;

/// Randomized-lattice estimate of the box probability.
///
/// Each batch uses the Richtmyer lattice `frac(j·√p_i + shift)` with an
/// independent uniform shift, folded by the tent map; the estimate is the
/// mean of the batch means and the error is their standard error.
pub fn genz_mvn_probability(b: &MvnBox, samples: usize, batches: usize, seed: u64) -> Result<(f64, f64)> {
    if samples < 100 || batches < 2 {
        return invalid("need at least 100 samples and 2 batches");
    }
    let d = b.dim();
    if d == 0 {
        return Ok((1.0, 0.0));
    }
    let cond = conditioning(b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = if d <= LATTICE_MAX_DIM {
        first_primes(d).iter().map(|&p| (p as f64).sqrt().fract()).collect()
    } else {
        Vec::new()
    };
    let mut w = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut means = Vec::with_capacity(batches);
    for _ in 0..batches {
        let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let mut sum = 0.0;
        for j in 1..=samples {
            for i in 0..d {
                let x = if z.is_empty() {
                    rng.random::<f64>()
                } else {
                    (j as f64 * z[i] + shift[i]).fract()
                };
                w[i] = (2.0 * x - 1.0).abs();
            }
            sum += conditioned_integrand(&cond, &w, &mut y);
        }
        means.push(sum / samples as f64);
    }
    let k = batches as f64;
    let mean = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok((mean.clamp(0.0, 1.0), (var / k).sqrt()))
}

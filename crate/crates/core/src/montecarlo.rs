//! Trajectory simulation under open-loop inputs, vertex validation and
//! hit-or-miss volume estimates.
//!
//! Trajectories are drawn in fixed-size chunks, each with its own ChaCha
//! stream, so counts do not depend on how rayon schedules the chunks.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{HPolytope, VPolytope};
use crate::reachalgo::ReachSetResult;
use crate::sysmodel::{psd_sqrt, StochasticLTVSystem, TargetTube};

const CHUNK: usize = 4096;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Half-space membership with the library's containment tolerance, so LP
/// vertices sitting on a face of `T₀` are not lost to rounding.
fn inside(set: &HPolytope, x: &DVector<f64>) -> bool {
    let (a, b) = (set.normals(), set.offsets());
    (0..a.nrows()).all(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum::<f64>() <= b[i] + crate::DEFAULT_TOL)
}

/// Empirical reach probability `p̂` and its binomial standard deviation.
pub fn simulate_reach_prob(
    sys: &StochasticLTVSystem,
    tube: &TargetTube,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    n_traj: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_traj < 100 {
        return invalid(format!("need at least 100 trajectories, got {n_traj}"));
    }
    tube.check_compatible(sys)?;
    let (n, m, horizon) = (sys.state_dim(), sys.input_dim(), sys.horizon());
    if x0.len() != n || u.len() != m * horizon {
        return invalid("x0 or U has the wrong dimension");
    }
    if !inside(tube.set(0), x0) {
        return Ok((0.0, 0.0));
    }
    let dist = sys.disturbance();
    let roots: Vec<DMatrix<f64>> = dist.cov_per_step.iter().map(psd_sqrt).collect();
    // Deterministic part of each step, reused by every trajectory.
    let drift: Vec<DVector<f64>> = (0..horizon)
        .map(|k| sys.b(k) * u.rows(k * m, m) + &dist.mean_per_step[k])
        .collect();

    let chunks = n_traj.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let count = CHUNK.min(n_traj - c * CHUNK);
            let mut z = DVector::zeros(n);
            let mut ok = 0usize;
            for _ in 0..count {
                let mut x = x0.clone();
                let mut alive = true;
                // Draws every step even after an exit so each trajectory
                // consumes the same amount of randomness.
                for k in 0..horizon {
                    for zi in z.iter_mut() {
                        *zi = rng.sample(StandardNormal);
                    }
                    if alive {
                        x = sys.a(k) * &x + &drift[k] + &roots[k] * &z;
                        alive = inside(tube.set(k + 1), &x);
                    }
                }
                ok += alive as usize;
            }
            ok
        })
        .sum();
    let p = hits as f64 / n_traj as f64;
    Ok((p, (p * (1.0 - p) / n_traj as f64).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub index: usize,
    pub point: Vec<f64>,
    pub alpha: f64,
    pub lower_bound: f64,
    pub empirical_probability: f64,
    /// `empirical_probability − alpha`.
    pub error: f64,
    pub binomial_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: Vec<VertexRecord>,
    pub mean_error: f64,
    /// Sample standard deviation of the per-vertex errors.
    pub std_error: f64,
    /// Binomial standard deviation of `mean_error`: `√(Σσᵢ²)/count`.
    pub pooled_std: f64,
    pub samples: usize,
    pub seed: u64,
}

impl ValidationReport {
    pub fn from_records(records: Vec<VertexRecord>, samples: usize, seed: u64) -> Self {
        let c = records.len().max(1) as f64;
        let mean = records.iter().map(|r| r.error).sum::<f64>() / c;
        let var = if records.len() > 1 {
            records.iter().map(|r| (r.error - mean).powi(2)).sum::<f64>() / (c - 1.0)
        } else {
            0.0
        };
        let pooled = records.iter().map(|r| r.binomial_std.powi(2)).sum::<f64>().sqrt() / c;
        Self {
            records,
            mean_error: mean,
            std_error: var.sqrt(),
            pooled_std: pooled,
            samples,
            seed,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let n = self.records.first().map_or(0, |r| r.point.len());
        let mut cols: Vec<String> = vec!["index".into()];
        cols.extend((0..n).map(|i| format!("x{i}")));
        cols.extend(["alpha", "lower_bound", "empirical_probability", "error", "binomial_std"].map(String::from));
        writeln!(w, "{}", cols.join(","))?;
        for r in &self.records {
            let mut row = vec![r.index.to_string()];
            row.extend(r.point.iter().map(|x| format!("{x:.12e}")));
            row.extend(
                [r.alpha, r.lower_bound, r.empirical_probability, r.error, r.binomial_std].map(|x| format!("{x:.12e}")),
            );
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Simulates every polytope vertex under its stored input sequence.
pub fn validate_vertices(
    result: &ReachSetResult,
    sys: &StochasticLTVSystem,
    tube: &TargetTube,
    n_traj: usize,
    seed: u64,
) -> Result<ValidationReport> {
    let Some(poly) = &result.polytope else {
        return invalid("cannot validate an empty reach set");
    };
    let mut records = Vec::with_capacity(poly.len());
    for (i, ((v, u), &lb)) in poly
        .vertices()
        .iter()
        .zip(&result.vertex_controls)
        .zip(&result.vertex_bounds)
        .enumerate()
    {
        let vseed = seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (p, s) = simulate_reach_prob(sys, tube, v, u, n_traj, vseed)?;
        records.push(VertexRecord {
            index: i,
            point: v.iter().copied().collect(),
            alpha: result.alpha,
            lower_bound: lb,
            empirical_probability: p,
            error: p - result.alpha,
            binomial_std: s,
        });
    }
    Ok(ValidationReport::from_records(records, n_traj, seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    /// `vol(B \ A)/vol(box)`.
    pub ratio: f64,
    pub std: f64,
    /// Whether some vertex of `A` lies outside `B`.
    pub a_not_in_b: bool,
    /// Samples found in `A` but not in `B`.
    pub samples_a_outside_b: usize,
}

fn membership(p: &VPolytope) -> Result<Box<dyn Fn(&DVector<f64>) -> bool + Send + Sync + '_>> {
    if p.dim() == 2 {
        if let Some(h) = p.to_hpolytope_2d()? {
            return Ok(Box::new(move |x| inside(&h, x)));
        }
    }
    Ok(Box::new(move |x| p.contains(x, 1e-12).unwrap_or(false)))
}

/// Hit-or-miss estimate of the part of `B` not covered by `A`, relative to
/// an axis-aligned bounding box.
pub fn volume_ratio(
    a: &VPolytope,
    b: &VPolytope,
    bounding_box: &HPolytope,
    n_samples: usize,
    seed: u64,
) -> Result<VolumeEstimate> {
    if a.dim() != b.dim() || a.dim() != bounding_box.dim() {
        return invalid("volume_ratio operands differ in dimension");
    }
    let Some((lo, hi)) = bounding_box.as_box() else {
        return invalid("bounding set must be an axis-aligned box");
    };
    if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) || n_samples == 0 {
        return invalid("bounding box must be finite and n_samples positive");
    }
    let mut a_not_in_b = false;
    for v in a.vertices() {
        if !b.contains(v, 1e-9)? {
            a_not_in_b = true;
        }
    }
    let (in_a, in_b) = (membership(a)?, membership(b)?);
    let chunks = n_samples.div_ceil(CHUNK);
    let (hits, stray) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let mut x = DVector::zeros(lo.len());
            let (mut h, mut s) = (0usize, 0usize);
            for _ in 0..CHUNK.min(n_samples - c * CHUNK) {
                for i in 0..x.len() {
                    x[i] = lo[i] + (hi[i] - lo[i]) * rng.random::<f64>();
                }
                match (in_a(&x), in_b(&x)) {
                    (false, true) => h += 1,
                    (true, false) => s += 1,
                    _ => {}
                }
            }
            (h, s)
        })
        .reduce(|| (0, 0), |p, q| (p.0 + q.0, p.1 + q.1));
    let r = hits as f64 / n_samples as f64;
    Ok(VolumeEstimate {
        ratio: r,
        std: (r * (1.0 - r) / n_samples as f64).sqrt(),
        a_not_in_b: a_not_in_b || stray > 0,
        samples_a_outside_b: stray,
    })
}

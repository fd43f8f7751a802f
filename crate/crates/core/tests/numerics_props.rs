use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stochreach::gaussian::{build_pwa_quantile, genz_mvn_probability, normal_cdf, normal_quantile, MvnBox};
use stochreach::lpsolve::{solve_lp, LinearProgram, LpStatus};

#[test]
fn correlated_orthant_against_plain_monte_carlo() {
    let b = MvnBox::new(
        dvector![0.0, 0.0],
        dmatrix![1.0, 0.5; 0.5, 1.0],
        dvector![0.0, 0.0],
        dvector![f64::INFINITY, f64::INFINITY],
    )
    .unwrap();
    let (est, se) = genz_mvn_probability(&b, 4096, 10, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 10_000_000usize;
    let mut hits = 0usize;
    for _ in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        if z1 >= 0.0 && 0.5 * z1 + 0.75f64.sqrt() * z2 >= 0.0 {
            hits += 1;
        }
    }
    let p = hits as f64 / n as f64;
    let mc_se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((est - p).abs() <= 3.0 * (se * se + mc_se * mc_se).sqrt(), "{est} vs {p}");
    // Closed-form orthant probability 1/4 + asin(ρ)/(2π) = 1/3.
    assert!((est - 1.0 / 3.0).abs() <= 3.0 * se + 1e-9);
}

#[test]
fn box_enlargement_is_monotone() {
    let cov = dmatrix![1.0, 0.3, 0.1; 0.3, 2.0, -0.4; 0.1, -0.4, 0.5];
    let small = MvnBox::new(DVector::zeros(3), cov.clone(), dvector![-1.0, -1.0, -0.5], dvector![1.0, 0.5, 0.5]).unwrap();
    let big = MvnBox::new(DVector::zeros(3), cov, dvector![-1.5, -1.0, -0.8], dvector![1.2, 1.5, 0.5]).unwrap();
    let (ps, ss) = genz_mvn_probability(&small, 2048, 10, 3).unwrap();
    let (pb, sb) = genz_mvn_probability(&big, 2048, 10, 3).unwrap();
    assert!(pb + 3.0 * sb >= ps - 3.0 * ss);
}

#[test]
fn pwa_endpoint_and_slopes() {
    let f = build_pwa_quantile(1e-6, 0.5, 1e-3).unwrap();
    assert!(f.eval(0.5) >= 0.0);
    assert!(f.pieces.iter().all(|(m, c)| *m < 0.0 && m.is_finite() && c.is_finite()));
    assert!(f.knots.windows(2).all(|w| w[0] < w[1]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quantile_inverts_cdf(x in -6.0..6.0f64) {
        let p = normal_cdf(x).unwrap();
        prop_assert!((normal_quantile(p).unwrap() - x).abs() <= 1e-8);
    }

    #[test]
    fn cdf_is_monotone(a in -8.0..8.0f64, b in -8.0..8.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(normal_cdf(lo).unwrap() <= normal_cdf(hi).unwrap());
    }

    /// Replacing Φ⁻¹(1−δ) by the envelope only removes feasible points.
    #[test]
    fn pwa_substitution_shrinks_feasible_set(
        mu in -3.0..3.0f64, sigma in 0.01..2.0f64, b in -3.0..3.0f64, ld in (1e-6f64).ln()..(0.5f64).ln(),
    ) {
        let f = build_pwa_quantile(1e-6, 0.5, 1e-3).unwrap();
        let d = ld.exp();
        if mu + sigma * f.eval(d) <= b {
            prop_assert!(mu + sigma * normal_quantile(1.0 - d).unwrap() <= b + 1e-12);
        }
    }

    #[test]
    fn strong_duality_and_objective_scaling(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4;
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<Vec<f64>> = (0..6).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..2.0)).collect();
        let lp = LinearProgram::from_dense(c.clone(), &a, &b, vec![(-5.0, 5.0); n]).unwrap();
        let sol = solve_lp(&lp).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        let dual = lp.dual_objective(&sol.duals, 1e-9);
        prop_assert!(dual.is_some());
        prop_assert!((dual.unwrap() - sol.objective_value).abs() <= 1e-6);

        let scaled = LinearProgram::from_dense(c.iter().map(|v| v * 3.7).collect(), &a, &b, vec![(-5.0, 5.0); n]).unwrap();
        let s2 = solve_lp(&scaled).unwrap();
        prop_assert_eq!(s2.status, LpStatus::Optimal);
        let z: DMatrix<f64> = DMatrix::from_row_slice(1, n, &sol.z) - DMatrix::from_row_slice(1, n, &s2.z);
        prop_assert!(z.amax() <= 1e-9);
    }
}

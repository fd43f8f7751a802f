//! Reach-set computations checked against the grid DP and Monte Carlo.

use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stochreach::chance::{AnchorOutcome, ChanceOptions, EmptyReason, LineStatus, RiskAllocatedProblem, X0Mode};
use stochreach::geometry::{box_polytope, spread_directions, HPolytope, VPolytope};
use stochreach::montecarlo::{simulate_reach_prob, validate_vertices};
use stochreach::reachalgo::io::ReachSetJson;
use stochreach::reachalgo::{
    compute_reach_set, dp_values, initial_guess_controller, interpolate_sets, Backend, DirectionStatus, DpTable,
    ReachOptions,
};
use stochreach::sysmodel::{
    cwh_tube, make_cwh, make_integrator_chain, CwhParams, DubinsParams, StochasticLTVSystem, SystemSpec, TargetTube, TubeSpec,
};

fn scalar(ell: f64, var: f64) -> (StochasticLTVSystem, TargetTube) {
    let u = box_polytope(&dvector![0.0], &dvector![0.1]).unwrap();
    let sys = StochasticLTVSystem::time_invariant(
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
        dvector![0.0],
        DMatrix::from_element(1, 1, var),
        u,
        5,
    )
    .unwrap();
    let sets = (0..=5)
        .map(|k| box_polytope(&dvector![0.0], &dvector![ell.powi(k)]).unwrap())
        .collect();
    (sys, TargetTube::new(sets).unwrap())
}

fn problem(sys: &StochasticLTVSystem, tube: &TargetTube) -> RiskAllocatedProblem {
    RiskAllocatedProblem::new(sys.clone(), tube.clone(), ChanceOptions::default()).unwrap()
}

fn double_integrator() -> (StochasticLTVSystem, TargetTube) {
    let sys = make_integrator_chain(2, 0.1, 10, 0.01, 0.1).unwrap();
    let t = box_polytope(&dvector![0.0, 0.0], &dvector![1.0, 1.0]).unwrap();
    (sys, TargetTube::constant(t, 10).unwrap())
}

/// Largest DP value among the grid points within one cell of `x`.
fn dp_near(table: &DpTable, x: f64) -> f64 {
    let g = &table.grids[0];
    let h = g[1] - g[0];
    g.iter()
        .zip(&table.values[0])
        .filter(|(p, _)| (**p - x).abs() <= h * 1.000001)
        .map(|(_, v)| *v)
        .fold(0.0, f64::max)
}

#[test]
fn scalar_example_threshold_08_is_empty_and_06_matches_dp() {
    let (sys, tube) = scalar(0.6, 0.001);
    let p = problem(&sys, &tube);
    assert_eq!(p.stochastic_rows.len(), 10);
    let risk = p.build_risk_lp(0.8, &X0Mode::Centered).unwrap();
    let row = &risk.lp.ineq[risk.budget_row.unwrap()];
    assert!((row.rhs - 0.2).abs() < 1e-15);

    // Open loop cannot beat P(x₅ ∈ T₅) <= 2Φ(0.6⁵/√0.005) − 1 ≈ 0.7285.
    match p.solve_anchor_xmax(0.8).unwrap() {
        AnchorOutcome::Empty(c) => {
            assert_ne!(c.reason, EmptyReason::BudgetFloor);
        }
        AnchorOutcome::Found(a) => panic!("unexpected anchor {a:?}"),
    }
    let dirs = spread_directions(2, 1, None).unwrap();
    assert!(compute_reach_set(&p, &dirs, &ReachOptions::new(0.8)).unwrap().is_empty());

    let table = dp_values(&sys, &tube, 0.01, 0.01).unwrap();
    let xmax = p.solve_anchor_xmax(0.6).unwrap();
    let a = xmax.found().unwrap();
    assert!(tube.set(0).contains(&a.x_anchor, 1e-9).unwrap());
    assert!(dp_near(&table, a.x_anchor[0]) >= 0.6);
    let cheby = p.solve_anchor_cheby(0.6).unwrap();
    let c = cheby.found().unwrap();
    assert!(c.radius.unwrap() > 0.0);
    assert!(dp_near(&table, c.x_anchor[0]) >= 0.6);

    let ls = p.solve_line_search(0.6, &dvector![0.0], &dvector![1.0]).unwrap();
    assert_eq!(ls.status, LineStatus::Optimal);
    assert!(ls.theta > 0.0);
    assert!(ls.lower_bound.unwrap() >= 0.6 - 1e-9);
    assert!(dp_near(&table, ls.theta) >= 0.6);
    // Already on the boundary: no further progress outward.
    let again = p.solve_line_search(0.6, &ls.point, &dvector![1.0]).unwrap();
    assert!(again.theta <= 1e-7, "{}", again.theta);

    let r = compute_reach_set(&p, &dirs, &ReachOptions::new(0.6)).unwrap();
    for v in r.polytope.as_ref().unwrap().vertices() {
        assert!(dp_near(&table, v[0]) >= 0.6);
    }
}

#[test]
fn vanishing_noise_approaches_the_robust_answer() {
    let (sys, tube) = scalar(0.9, 1e-12);
    let (sys0, _) = scalar(0.9, 0.0);
    let noisy = problem(&sys, &tube).solve_line_search(0.6, &dvector![0.0], &dvector![1.0]).unwrap();
    let robust = problem(&sys0, &tube).solve_line_search(0.6, &dvector![0.0], &dvector![1.0]).unwrap();
    assert!(robust.theta > 0.0);
    assert!((noisy.theta - robust.theta).abs() <= 5e-5, "{} vs {}", noisy.theta, robust.theta);
}

#[test]
fn cheby_matches_triangle_incenter() {
    let u = box_polytope(&dvector![0.0, 0.0], &dvector![0.1, 0.1]).unwrap();
    let sys = StochasticLTVSystem::time_invariant(
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DVector::zeros(2),
        DMatrix::identity(2, 2) * 1e-4,
        u,
        2,
    )
    .unwrap();
    let tri = HPolytope::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]], &[0.0, 0.0, 1.0]).unwrap();
    let far = box_polytope(&dvector![0.0, 0.0], &dvector![100.0, 100.0]).unwrap();
    let tube = TargetTube::new(vec![tri, far.clone(), far]).unwrap();
    let c = problem(&sys, &tube).solve_anchor_cheby(0.9).unwrap();
    let a = c.found().unwrap();
    let r = (2.0 - 2f64.sqrt()) / 2.0;
    assert!((a.radius.unwrap() - r).abs() < 1e-9);
    assert!((&a.x_anchor - dvector![r, r]).amax() < 1e-9);
}

#[test]
fn double_integrator_sets_are_nested_and_certified() {
    let (sys, tube) = double_integrator();
    let p = problem(&sys, &tube);
    let dirs = spread_directions(32, 2, None).unwrap();
    let r6 = compute_reach_set(&p, &dirs, &ReachOptions::new(0.6)).unwrap();
    let r9 = compute_reach_set(&p, &dirs, &ReachOptions::new(0.9)).unwrap();
    let (p6, p9) = (r6.polytope.as_ref().unwrap(), r9.polytope.as_ref().unwrap());
    for v in p9.vertices() {
        assert!(p6.contains(v, 1e-6).unwrap());
    }
    for (a, b) in r9.boundary_points.iter().zip(&r6.boundary_points) {
        assert!(a.theta <= b.theta + 1e-9);
    }
    // Every certified boundary point survives simulation.
    for (i, b) in r9.boundary_points.iter().enumerate() {
        let (ph, s) = simulate_reach_prob(&sys, &tube, &b.point, b.controls.as_ref().unwrap(), 100_000, i as u64).unwrap();
        assert!(ph >= 0.9 - 3.0 * s, "direction {i}: {ph}");
    }

    // Interpolated vertices under their blended controls clear β.
    let it = interpolate_sets(&r6, &r9, 0.85).unwrap();
    for (i, (v, u)) in it.polytope.vertices().iter().zip(&it.controls).enumerate() {
        let (ph, s) = simulate_reach_prob(&sys, &tube, v, u, 20_000, 100 + i as u64).unwrap();
        assert!(ph >= 0.85 - 3.0 * s, "vertex {i}: {ph}");
    }

    // Blended controllers at random interior points stay admissible.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let w: Vec<f64> = (0..p6.len()).map(|_| rng.random::<f64>()).collect();
        let total: f64 = w.iter().sum();
        let x = p6.vertices().iter().zip(&w).fold(DVector::zeros(2), |acc, (v, wi)| acc + v * (*wi / total));
        let (u, weights) = initial_guess_controller(&r6, &x).unwrap();
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(u.amax() <= 0.1 + 1e-9);
    }

    let back = ReachSetJson::from_result(&r6).into_result().unwrap();
    assert_eq!(back.polytope, r6.polytope);
    assert_eq!(back.vertex_controls, r6.vertex_controls);
}

#[test]
fn zero_time_budget_keeps_the_anchor() {
    let (sys, tube) = double_integrator();
    let p = problem(&sys, &tube);
    let dirs = spread_directions(8, 2, None).unwrap();
    let opts = ReachOptions {
        time_budget: Some(std::time::Duration::ZERO),
        ..ReachOptions::new(0.7)
    };
    let r = compute_reach_set(&p, &dirs, &opts).unwrap();
    assert!(r.boundary_points.iter().all(|b| b.status == DirectionStatus::Skipped));
    let poly = r.polytope.as_ref().unwrap();
    assert_eq!(poly.len(), 1);
    assert!(r.vertex_bounds[0] >= 0.7 - 1e-9);
}

#[test]
fn dp_value_is_unimodal_and_matches_greedy_rollouts() {
    let (sys, tube) = scalar(0.6, 0.001);
    let t = dp_values(&sys, &tube, 0.01, 0.01).unwrap();
    let v0 = &t.values[0];
    let peak = (0..v0.len()).max_by(|&a, &b| v0[a].total_cmp(&v0[b])).unwrap();
    assert!(v0[..=peak].windows(2).all(|w| w[1] >= w[0] - 1e-12));
    assert!(v0[peak..].windows(2).all(|w| w[1] <= w[0] + 1e-12));

    // Greedy policy from the table, evaluated at the nearest grid point.
    let g = &t.grids[0];
    let (h, lo) = (g[1] - g[0], g[0]);
    let sd = 0.001f64.sqrt();
    let cdf = |z: f64| 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    let nearest = |x: f64| (((x - lo) / h).round().max(0.0) as usize).min(g.len() - 1);
    let policy: Vec<Vec<f64>> = (0..5)
        .map(|k| {
            g.iter()
                .map(|&x| {
                    let q = |u: f64| -> f64 {
                        g.iter()
                            .zip(&t.values[k + 1])
                            .map(|(&y, &v)| v * (cdf((y + h / 2.0 - x - u) / sd) - cdf((y - h / 2.0 - x - u) / sd)))
                            .sum()
                    };
                    t.input_grid
                        .iter()
                        .map(|u| u[0])
                        .max_by(|a, b| q(*a).total_cmp(&q(*b)))
                        .unwrap()
                })
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for probe in [-0.4, -0.2, 0.0, 0.2, 0.4] {
        let n = 100_000;
        let mut ok = 0;
        for _ in 0..n {
            let mut x: f64 = probe;
            let mut alive = true;
            for k in 0..5 {
                let z: f64 = rng.sample(StandardNormal);
                x += policy[k][nearest(x)] + sd * z;
                alive &= x.abs() <= 0.6f64.powi(k as i32 + 1);
            }
            ok += alive as usize;
        }
        let mc = ok as f64 / n as f64;
        let v = v0[nearest(probe)];
        assert!((mc - v).abs() <= 0.02, "x0={probe}: DP {v} vs MC {mc}");
    }
}

#[test]
fn sampling_backend_on_scalar_example() {
    let (sys, tube) = scalar(0.6, 0.001);
    let p = problem(&sys, &tube);
    let dirs = spread_directions(2, 1, None).unwrap();
    let opts = ReachOptions {
        backend: Backend::Genz,
        ..ReachOptions::new(0.6)
    };
    let r = compute_reach_set(&p, &dirs, &opts).unwrap();
    let poly = r.polytope.as_ref().unwrap();
    assert!(r.vertex_bounds.iter().all(|b| *b >= 0.6));
    let chance = compute_reach_set(&p, &dirs, &ReachOptions::new(0.6)).unwrap();
    let width = |v: &VPolytope| {
        let xs: Vec<f64> = v.vertices().iter().map(|x| x[0]).collect();
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    // Starts from the chance boundary and can only extend it.
    assert!(width(poly) >= width(chance.polytope.as_ref().unwrap()) - 1e-9);
    let rep = validate_vertices(&r, &sys, &tube, 100_000, 3).unwrap();
    for rec in &rep.records {
        assert!(rec.error >= -3.0 * rec.binomial_std, "{rec:?}");
    }
}

#[test]
fn sampling_backend_rejects_polytopic_tubes() {
    let sys = make_cwh(&CwhParams::default(), 5).unwrap();
    let p = problem(&sys, &cwh_tube(5).unwrap());
    let dirs = spread_directions(4, 4, Some((0, 1))).unwrap();
    let opts = ReachOptions {
        backend: Backend::Genz,
        ..ReachOptions::new(0.8)
    };
    assert!(matches!(compute_reach_set(&p, &dirs, &opts), Err(stochreach::Error::Unsupported(_))));
}

#[test]
fn rendezvous_vertices_are_underapproximative() {
    let sys = make_cwh(&CwhParams::default(), 5).unwrap();
    let tube = cwh_tube(5).unwrap();
    let p = problem(&sys, &tube).with_fixed_initial(vec![(2, 0.0), (3, 0.0)]).unwrap();
    let dirs = spread_directions(32, 4, Some((0, 1))).unwrap();
    let r = compute_reach_set(&p, &dirs, &ReachOptions::new(0.8)).unwrap();
    assert!(r.polytope.is_some());
    let rep = validate_vertices(&r, &sys, &tube, 100_000, 21).unwrap();
    assert!(rep.mean_error > 0.0, "{}", rep.mean_error);
    for rec in &rep.records {
        assert!(rec.error >= -3.0 * rec.binomial_std);
    }
}

/// Long-horizon vehicle: the diagonal search from the anchor reaches the
/// corner of the initial box, half-width 4, at distance 4√2. Its program
/// needs thousands of pivots and used to stall in phase one.
#[test]
fn vehicle_diagonal_search_reaches_the_box_corner() {
    let spec = SystemSpec::Dubins(DubinsParams::default());
    let sys = spec.build(50).unwrap();
    let tube = TubeSpec::DubinsNominal {
        delta: 0.7,
        decay: 100.0,
        base_half_width: 4.0,
    }
    .build(&sys, &spec)
    .unwrap();
    let p = problem(&sys, &tube);
    let anchor = p.solve_anchor_cheby(0.8).unwrap().found().unwrap().clone();
    assert!(anchor.x_anchor.amax() < 1e-9);
    let dirs = spread_directions(16, 2, None).unwrap();
    let r = p.solve_line_search(0.8, &anchor.x_anchor, &dirs.get(2)).unwrap();
    assert_eq!(r.status, LineStatus::Optimal);
    assert!((r.theta - 4.0 * 2f64.sqrt()).abs() < 1e-6, "{}", r.theta);
    assert!(r.lower_bound.unwrap() >= 0.8 - 1e-9);
}

use lfc_core::controllers::{CentralizedController, ZeroController};
use lfc_core::grid::TimeGrid;
use lfc_core::grid_model::{assemble_global, six_area_benchmark, LqgModel};
use lfc_core::lqg::{solve_control_riccati, solve_filter_riccati, KalmanBucy};
use lfc_core::sim::{evaluate_cost, run_ensemble, simulate_closed_loop, NoiseModel};
use lfc_core::topology::PhysGraph;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn benchmark() -> LqgModel {
    assemble_global(&six_area_benchmark(), &PhysGraph::ring(6, 2.0), None)
        .unwrap()
        .model
}

#[test]
fn first_euler_step_of_decoupled_area() {
    let mut m = assemble_global(&six_area_benchmark(), &PhysGraph::none(6), None)
        .unwrap()
        .model;
    m.rx = DMatrix::zeros(24, 24);
    m.rw = DMatrix::zeros(24, 24);
    m.rv = DMatrix::zeros(6, 6);
    let grid = TimeGrid::new(0.01, 0.005).unwrap();
    let noise = NoiseModel::from_model(&m, 0, 1);
    let t = simulate_closed_loop(&m, &mut ZeroController::new(6), &noise, 0, &grid).unwrap();
    // A(1,1) = -G/J = -0.12; the other entries of row 1 act on zero states
    assert!((t.x[1][0] - 0.09994).abs() < 1e-14, "{}", t.x[1][0]);
}

fn centralized_parts(
    m: &LqgModel,
    grid: &TimeGrid,
) -> (KalmanBucy, lfc_core::grid::GridFn<DMatrix<f64>>) {
    let c = solve_control_riccati(m, grid).unwrap();
    let f = solve_filter_riccati(m, grid).unwrap();
    (KalmanBucy::new(m, &f, &c.k).unwrap(), c.k)
}

#[test]
fn ensemble_is_deterministic_across_thread_counts() {
    let m = benchmark();
    let grid = TimeGrid::new(1.0, 0.005).unwrap();
    let (kb, k) = centralized_parts(&m, &grid);
    let noise = NoiseModel::from_model(&m, 42, 24);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                run_ensemble(
                    &m,
                    &grid,
                    &noise,
                    |_| Ok(CentralizedController::new(&kb, &k, m.x0_mean.clone())),
                    false,
                )
                .unwrap()
            })
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.costs, b.costs);
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.seeds, (42..66).collect::<Vec<u64>>());
}

#[test]
fn single_trial_ensemble_matches_direct_run() {
    let m = benchmark();
    let grid = TimeGrid::new(1.0, 0.01).unwrap();
    let noise = NoiseModel::from_model(&m, 7, 1);
    let ens = run_ensemble(&m, &grid, &noise, |_| Ok(ZeroController::new(6)), true).unwrap();
    let t = simulate_closed_loop(&m, &mut ZeroController::new(6), &noise, 7, &grid).unwrap();
    assert_eq!(ens.trajectories[0], t);
    assert_eq!(ens.costs[0], evaluate_cost(&t, &m.q, &m.r, &m.s, &grid));
    assert_eq!(ens.summary.std_error, 0.0);
}

#[test]
fn standard_error_scales_with_trials() {
    let m = benchmark();
    let grid = TimeGrid::new(6.0, 0.005).unwrap();
    let (kb, k) = centralized_parts(&m, &grid);
    let se = |trials: usize, seed: u64| {
        let noise = NoiseModel::from_model(&m, seed, trials);
        run_ensemble(
            &m,
            &grid,
            &noise,
            |_| Ok(CentralizedController::new(&kb, &k, m.x0_mean.clone())),
            false,
        )
        .unwrap()
        .summary
        .std_error
    };
    let ratio = se(100, 1_000) / se(400, 2_000);
    assert!((ratio - 2.0).abs() < 0.6, "{ratio}");
}

#[test]
fn initial_frequency_moment() {
    let m = benchmark();
    let grid = TimeGrid::new(0.01, 0.005).unwrap();
    let noise = NoiseModel::from_model(&m, 5, 500);
    let ens = run_ensemble(&m, &grid, &noise, |_| Ok(ZeroController::new(6)), false).unwrap();
    // E[df^2] = 0.1^2 + 0.01; z^2 has variance 2s^4 + 4 mu^2 s^2 = 6e-4
    let tol = 4.0 * (6e-4f64 / 500.0).sqrt();
    for curve in &ens.metrics.freq {
        assert!((curve[0] - 0.02).abs() < tol, "{}", curve[0]);
    }
}

#[test]
fn zero_noise_zero_start_curves_vanish() {
    let mut m = benchmark();
    m.rx = DMatrix::zeros(24, 24);
    m.rw = DMatrix::zeros(24, 24);
    m.rv = DMatrix::zeros(6, 6);
    m.x0_mean = DVector::zeros(24);
    let grid = TimeGrid::new(1.0, 0.01).unwrap();
    let noise = NoiseModel::from_model(&m, 0, 3);
    let ens = run_ensemble(&m, &grid, &noise, |_| Ok(ZeroController::new(6)), false).unwrap();
    assert!(ens
        .metrics
        .freq
        .iter()
        .chain(&ens.metrics.ace)
        .flatten()
        .all(|&v| v == 0.0));
    assert!(ens.costs.iter().all(|&j| j == 0.0));
}

fn scalar_lqg() -> LqgModel {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    LqgModel::new(
        m(0.5),
        m(1.0),
        m(1.0),
        m(1.0),
        m(1.0),
        m(0.5),
        m(0.2),
        m(0.1),
        m(0.05),
        DVector::from_element(1, 1.0),
    )
    .unwrap()
}

/// The Monte Carlo cost agrees with a 10x finer, 10x larger reference run.
#[test]
fn scalar_cost_matches_refined_reference() {
    let m = scalar_lqg();
    let mean_cost = |dt: f64, trials: usize, seed: u64| {
        let grid = TimeGrid::new(3.0, dt).unwrap();
        let (kb, k) = centralized_parts(&m, &grid);
        let noise = NoiseModel::from_model(&m, seed, trials);
        run_ensemble(
            &m,
            &grid,
            &noise,
            |_| Ok(CentralizedController::new(&kb, &k, m.x0_mean.clone())),
            false,
        )
        .unwrap()
        .summary
    };
    let coarse = mean_cost(0.01, 400, 10);
    let fine = mean_cost(0.001, 4000, 20_000);
    let se = (coarse.std_error.powi(2) + fine.std_error.powi(2)).sqrt();
    assert!(
        (coarse.mean_cost - fine.mean_cost).abs() < 3.0 * se,
        "{:?} vs {:?}",
        coarse,
        fine
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cost_is_nonnegative(seed in any::<u64>(), q in 0.0..2.0f64, s in 0.0..2.0f64) {
        let mut m = scalar_lqg();
        m.q = DMatrix::from_element(1, 1, q);
        m.s = DMatrix::from_element(1, 1, s);
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let noise = NoiseModel::from_model(&m, seed, 1);
        let t = simulate_closed_loop(&m, &mut ZeroController::new(1), &noise, seed, &grid).unwrap();
        prop_assert!(evaluate_cost(&t, &m.q, &m.r, &m.s, &grid) >= 0.0);
    }
}

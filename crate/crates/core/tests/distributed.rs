use lfc_core::consensus::{
    distributed_state_estimate, local_transition, solve_distributed, AccessRecorder,
    ConsensusConfig, LocalScaledData, NeighborhoodGuard,
};
use lfc_core::grid::{GridFn, TimeGrid};
use lfc_core::grid_model::{
    assemble_global, six_area_benchmark, AreaParams, CostWeight, GlobalSystem,
};
use lfc_core::linalg::frob_diff;
use lfc_core::lqg::{kalman_bucy_run, solve_control_riccati, solve_filter_riccati};
use lfc_core::topology::{CommGraph, PhysGraph};
use nalgebra::{DMatrix, DVector, Matrix4};
use proptest::prelude::*;

fn single_area() -> GlobalSystem {
    assemble_global(&six_area_benchmark()[..1], &PhysGraph::none(1), None).unwrap()
}

fn sup_rel(a: &GridFn<DMatrix<f64>>, b: &GridFn<DMatrix<f64>>) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| frob_diff(x, y) / y.norm().max(1.0))
        .fold(0.0, f64::max)
}

#[test]
fn one_area_reduces_to_centralized() {
    let sys = single_area();
    let grid = TimeGrid::new(6.0, 0.005).unwrap();
    let g = CommGraph::edgeless(1);
    let cfg = ConsensusConfig {
        sigma_tol: 1e-10,
        ..ConsensusConfig::default()
    };
    let guard = NeighborhoodGuard::new(&g);
    let sol = solve_distributed(&sys, &g, &cfg, &grid, &guard).unwrap();
    assert!(sol.control.report.converged && sol.filter.report.converged);
    let p = solve_control_riccati(&sys.model, &grid).unwrap();
    let f = solve_filter_riccati(&sys.model, &grid).unwrap();
    assert!(
        sup_rel(&sol.control.p[0], &p.p) < 1e-6,
        "{}",
        sup_rel(&sol.control.p[0], &p.p)
    );
    assert!(
        sup_rel(&sol.filter.sigma[0], &f.sigma) < 1e-6,
        "{}",
        sup_rel(&sol.filter.sigma[0], &f.sigma)
    );

    // the estimator then matches the Kalman-Bucy filter on any measurement record
    let y = GridFn::from_fn(grid, |k| {
        DVector::from_element(1, (0.3 * grid.time(k)).sin())
    });
    let (est, stats) = distributed_state_estimate(&sol, &guard, &y).unwrap();
    assert_eq!(stats.capped_steps, 0);
    let kb = kalman_bucy_run(&sys.model, &f, &p.k, &y, &sys.model.x0_mean).unwrap();
    for k in 0..grid.len() {
        let d = (est[0].at(k) - kb.at(k)).norm();
        assert!(d < 1e-6 * kb.at(k).norm().max(1.0), "step {k}: {d}");
    }
}

/// Consensus error after a capped inner loop shrinks roughly like 1/cap.
#[test]
fn accuracy_improves_with_inner_cap() {
    let sys = assemble_global(&six_area_benchmark()[..3], &PhysGraph::ring(3, 2.0), None).unwrap();
    let grid = TimeGrid::new(1.0, 0.01).unwrap();
    let g = CommGraph::ring(3);
    let guard = NeighborhoodGuard::new(&g);
    let p = solve_control_riccati(&sys.model, &grid).unwrap();
    let err = |cap: usize| {
        let cfg = ConsensusConfig {
            max_inner: cap,
            sigma_tol: 1e-12,
            ..ConsensusConfig::default()
        };
        let sol = solve_distributed(&sys, &g, &cfg, &grid, &guard).unwrap();
        (0..3)
            .map(|i| sup_rel(&sol.control.p[i], &p.p))
            .fold(0.0, f64::max)
    };
    let coarse = err(100);
    let fine = err(1000);
    assert!(
        fine < coarse / 4.0,
        "cap 100: {coarse:e}, cap 1000: {fine:e}"
    );
}

#[test]
fn pipeline_reads_stay_in_neighbourhood() {
    let sys = assemble_global(&six_area_benchmark()[..4], &PhysGraph::ring(4, 2.0), None).unwrap();
    let grid = TimeGrid::new(0.5, 0.01).unwrap();
    let g = CommGraph::path(4);
    let rec = AccessRecorder::new(&g);
    let sol = solve_distributed(&sys, &g, &ConsensusConfig::default(), &grid, &rec).unwrap();
    let y = GridFn::from_fn(grid, |_| DVector::zeros(4));
    distributed_state_estimate(&sol, &rec, &y).unwrap();
    assert!(!rec.events().is_empty());
    assert!(rec.violations().is_empty(), "{:?}", rec.violations());
}

#[test]
fn transition_of_constant_rate() {
    let grid = TimeGrid::new(2.0, 0.01).unwrap();
    let x = GridFn::from_fn(grid, |_| DMatrix::from_element(1, 1, -0.5));
    let h = GridFn::from_fn(grid, |_| DMatrix::from_element(1, 1, 0.5));
    let t = local_transition(&x, &h).unwrap();
    assert!((t.at(100)[(0, 0)] - (-1.0f64).exp()).abs() < 1e-9);
    assert!((t.between(200, 100)[(0, 0)] - (-1.0f64).exp()).abs() < 1e-9);
    let (lit, cond) = t.literal(200, 100).unwrap();
    assert!(cond == 1.0 && (lit[(0, 0)] - (-1.0f64).exp()).abs() < 1e-9);
}

#[test]
fn transition_semigroup_and_identity() {
    let grid = TimeGrid::new(1.0, 0.01).unwrap();
    let x = GridFn::from_fn(grid, |k| {
        let t = grid.time(k);
        DMatrix::from_row_slice(2, 2, &[-1.0, t, -t, -0.3])
    });
    let h = GridFn::from_fn(grid, |_| {
        DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, 0.4])
    });
    let t = local_transition(&x, &h).unwrap();
    let direct = t.between(90, 10);
    let composed = t.between(90, 50) * t.between(50, 10);
    assert!(frob_diff(&direct, &composed) < 1e-12);
    assert!(frob_diff(&t.between(40, 40), &DMatrix::identity(2, 2)) == 0.0);

    let zero = GridFn::from_fn(grid, |_| DMatrix::zeros(3, 3));
    let t = local_transition(&zero, &zero).unwrap();
    assert_eq!(t.at(100), &DMatrix::identity(3, 3));
}

fn area_strategy() -> impl Strategy<Value = AreaParams> {
    (
        8.0..14.0f64,
        0.8..1.4f64,
        0.25..0.4f64,
        0.06..0.1f64,
        2.0..2.8f64,
        0.3..2.0f64,
        0.5..2.0f64,
        0.001..0.1f64,
        0.001..0.1f64,
        -0.2..0.2f64,
    )
        .prop_map(|(j, g, tt, tg, w, q, r, rw, rv, x0)| {
            let mut a = AreaParams::with_defaults(j, g, tt, tg, w);
            a.q_weight = CostWeight::Scalar(q);
            a.r_weight = r;
            a.rw = Matrix4::identity() * rw;
            a.rv = rv;
            a.x0_mean[0] = x0;
            a
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Plain averages of the areas' scaled data recover the global problem.
    #[test]
    fn scaled_data_averages_to_global(areas in prop::collection::vec(area_strategy(), 1..=8), tie in 0.5..3.0f64) {
        let n = areas.len();
        let sys = assemble_global(&areas, &PhysGraph::ring(n, tie), None).unwrap();
        let data = LocalScaledData::from_system(&sys);
        let m = &sys.model;
        let avg = |f: &dyn Fn(&LocalScaledData) -> DMatrix<f64>| data.iter().map(f).sum::<DMatrix<f64>>() / n as f64;
        let rinv = m.r.clone().try_inverse().unwrap();
        let rvinv = m.rv.clone().try_inverse().unwrap();
        let tol = 1e-9;
        prop_assert!(frob_diff(&avg(&|d| d.a.clone()), &m.a) < tol * m.a.norm());
        prop_assert!(frob_diff(&avg(&|d| d.s.clone()), &(&m.b * &rinv * m.b.transpose())) < tol);
        prop_assert!(frob_diff(&avg(&|d| d.v.clone()), &(m.c.transpose() * &rvinv * &m.c)) < tol * 1e4);
        prop_assert!(frob_diff(&avg(&|d| d.q.clone()), &m.q) < tol);
        prop_assert!(frob_diff(&avg(&|d| d.rw.clone()), &m.rw) < tol);
        prop_assert!(frob_diff(&avg(&|d| d.rx.clone()), &m.rx) < tol);
        let x0 = data.iter().map(|d| d.x0.clone()).sum::<DVector<f64>>() / n as f64;
        prop_assert!((x0 - &m.x0_mean).norm() < tol);
        for (i, d) in data.iter().enumerate() {
            prop_assert_eq!(&d.b, &m.b.column(i).into_owned());
            prop_assert_eq!(&d.c, &m.c.row(i).transpose());
        }
    }
}

//! Closed-loop stochastic simulation and Monte Carlo summaries.
//!
//! The plant is integrated by Euler-Maruyama. Measurements are grid samples
//! of a continuous-time white-noise channel, so each sample carries
//! covariance `R_v / dt`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::grid::TimeGrid;
use crate::grid_model::LqgModel;
use crate::linalg::psd_factor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("state became non-finite at step {step}")]
    Divergence { step: usize },
    #[error("controller asked for measurement {requested} with only {available} available")]
    Causality { requested: usize, available: usize },
    #[error("controller failed: {0}")]
    Controller(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{} of the trials failed (first: seed {}: {})", failures.len(), failures[0].0, failures[0].1)]
pub struct EnsembleError {
    pub failures: Vec<(u64, SimError)>,
}

/// Noise statistics with precomputed covariance factors.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub w_mean: DVector<f64>,
    pub v_mean: DVector<f64>,
    pub x0_mean: DVector<f64>,
    pub base_seed: u64,
    pub trial_count: usize,
    lw: DMatrix<f64>,
    lv: DMatrix<f64>,
    lx: DMatrix<f64>,
}

impl NoiseModel {
    pub fn from_model(model: &LqgModel, base_seed: u64, trial_count: usize) -> Self {
        Self {
            w_mean: model.w_mean.clone(),
            v_mean: model.v_mean.clone(),
            x0_mean: model.x0_mean.clone(),
            base_seed,
            trial_count,
            lw: psd_factor(&model.rw),
            lv: psd_factor(&model.rv),
            lx: psd_factor(&model.rx),
        }
    }

    pub fn seed(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(trial as u64)
    }

    fn normal(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
    }

    pub fn initial_state(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        &self.x0_mean + &self.lx * Self::normal(rng, self.lx.ncols())
    }

    /// `dt w_mean + sqrt(dt) L_w xi`.
    pub fn process_increment(&self, rng: &mut ChaCha8Rng, dt: f64) -> DVector<f64> {
        &self.w_mean * dt + &self.lw * Self::normal(rng, self.lw.ncols()) * dt.sqrt()
    }

    /// `v_mean + L_v eta / sqrt(dt)`.
    pub fn measurement_noise(&self, rng: &mut ChaCha8Rng, dt: f64) -> DVector<f64> {
        &self.v_mean + &self.lv * Self::normal(rng, self.lv.ncols()) / dt.sqrt()
    }
}

/// Measurements `y(t_0) .. y(t_k)` visible to the controller at step `k`.
pub struct MeasurementView<'a> {
    samples: &'a [DVector<f64>],
}

impl<'a> MeasurementView<'a> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn at(&self, j: usize) -> Result<&'a DVector<f64>, SimError> {
        self.samples.get(j).ok_or(SimError::Causality {
            requested: j,
            available: self.samples.len(),
        })
    }

    pub fn latest(&self) -> &'a DVector<f64> {
        &self.samples[self.samples.len() - 1]
    }
}

pub trait Controller {
    /// Command at grid step `k`; `meas` holds samples `0..=k`.
    fn command(&mut self, k: usize, meas: &MeasurementView<'_>) -> Result<DVector<f64>, SimError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

/// One closed-loop realization. Random draws per trial: the initial state,
/// then at every step the measurement noise followed by the process noise.
pub fn simulate_closed_loop<C: Controller + ?Sized>(
    model: &LqgModel,
    controller: &mut C,
    noise: &NoiseModel,
    seed: u64,
    grid: &TimeGrid,
) -> Result<Trajectory, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = grid.dt();
    let len = grid.len();
    let mut x = noise.initial_state(&mut rng);
    let mut xs = Vec::with_capacity(len);
    let mut ys = Vec::with_capacity(len);
    let mut us = Vec::with_capacity(len);
    for k in 0..len {
        let y = &model.c * &x + noise.measurement_noise(&mut rng, dt);
        ys.push(y);
        let u = controller.command(k, &MeasurementView { samples: &ys })?;
        if u.len() != model.input_dim() {
            return Err(SimError::Dimension(format!(
                "controller returned {} inputs, expected {}",
                u.len(),
                model.input_dim()
            )));
        }
        if k + 1 < len {
            let mut next = &x + (&model.a * &x + &model.b * &u) * dt;
            next += noise.process_increment(&mut rng, dt);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(SimError::Divergence { step: k + 1 });
            }
            xs.push(std::mem::replace(&mut x, next));
        } else {
            xs.push(x.clone());
        }
        us.push(u);
    }
    Ok(Trajectory {
        seed,
        x: xs,
        y: ys,
        u: us,
    })
}

/// Trapezoidal `int x'Qx + u'Ru dt` plus `x(T)'Sx(T)`.
pub fn evaluate_cost(
    traj: &Trajectory,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
    grid: &TimeGrid,
) -> f64 {
    let stage = |k: usize| traj.x[k].dot(&(q * &traj.x[k])) + traj.u[k].dot(&(r * &traj.u[k]));
    let last = traj.x.len() - 1;
    let mut integral = 0.5 * (stage(0) + stage(last));
    for k in 1..last {
        integral += stage(k);
    }
    integral * grid.dt() + traj.x[last].dot(&(s * &traj.x[last]))
}

/// Per-area squared frequency deviation and squared area control error
/// (`C x` without measurement noise) along one trajectory.
pub fn area_metrics(model: &LqgModel, traj: &Trajectory) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let areas = model.output_dim();
    let mut freq = vec![Vec::with_capacity(traj.x.len()); areas];
    let mut ace = vec![Vec::with_capacity(traj.x.len()); areas];
    for x in &traj.x {
        let e = &model.c * x;
        for i in 0..areas {
            let df = x[model.block * i];
            freq[i].push(df * df);
            ace[i].push(e[i] * e[i]);
        }
    }
    (freq, ace)
}

/// Ensemble averages `E ||df_i(t)||^2` and `E ||ACE_i(t)||^2`, `[area][k]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricCurves {
    pub freq: Vec<Vec<f64>>,
    pub ace: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub trials: usize,
    pub mean_cost: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub seeds: Vec<u64>,
    pub costs: Vec<f64>,
    pub summary: EnsembleSummary,
    pub metrics: MetricCurves,
    /// Kept only when requested.
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryEnsemble {
    pub fn metric_curves(&self) -> &MetricCurves {
        &self.metrics
    }
}

pub fn mean_and_std_error(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `noise.trial_count` independent trials (trial `k` uses seed
/// `base_seed + k`) and maps each finished trajectory and controller
/// through `reduce`. Results come back in trial order.
pub fn run_trials<C, F, G, R>(
    model: &LqgModel,
    grid: &TimeGrid,
    noise: &NoiseModel,
    make: F,
    reduce: G,
) -> Result<Vec<R>, EnsembleError>
where
    C: Controller,
    F: Fn(usize) -> Result<C, SimError> + Sync,
    G: Fn(Trajectory, C) -> R + Sync,
    R: Send,
{
    let results: Vec<Result<R, (u64, SimError)>> = (0..noise.trial_count)
        .into_par_iter()
        .map(|k| {
            let seed = noise.seed(k);
            let mut c = make(k).map_err(|e| (seed, e))?;
            let traj =
                simulate_closed_loop(model, &mut c, noise, seed, grid).map_err(|e| (seed, e))?;
            Ok(reduce(traj, c))
        })
        .collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(f) => failures.push(f),
        }
    }
    if failures.is_empty() {
        Ok(ok)
    } else {
        Err(EnsembleError { failures })
    }
}

/// Monte Carlo cost and metric curves.
pub fn run_ensemble<C, F>(
    model: &LqgModel,
    grid: &TimeGrid,
    noise: &NoiseModel,
    make: F,
    keep_trajectories: bool,
) -> Result<TrajectoryEnsemble, EnsembleError>
where
    C: Controller,
    F: Fn(usize) -> Result<C, SimError> + Sync,
{
    let per_trial = run_trials(model, grid, noise, make, |traj, _| {
        let cost = evaluate_cost(&traj, &model.q, &model.r, &model.s, grid);
        let metrics = area_metrics(model, &traj);
        (traj.seed, cost, metrics, keep_trajectories.then_some(traj))
    })?;
    let areas = model.output_dim();
    let len = grid.len();
    let mut freq = vec![vec![0.0; len]; areas];
    let mut ace = vec![vec![0.0; len]; areas];
    let mut seeds = Vec::with_capacity(per_trial.len());
    let mut costs = Vec::with_capacity(per_trial.len());
    let mut trajectories = Vec::new();
    for (seed, cost, (f, a), traj) in per_trial {
        seeds.push(seed);
        costs.push(cost);
        for i in 0..areas {
            for k in 0..len {
                freq[i][k] += f[i][k];
                ace[i][k] += a[i][k];
            }
        }
        trajectories.extend(traj);
    }
    let n = costs.len() as f64;
    for curve in freq.iter_mut().chain(ace.iter_mut()) {
        for v in curve.iter_mut() {
            *v /= n;
        }
    }
    let (mean_cost, std_error) = mean_and_std_error(&costs);
    Ok(TrajectoryEnsemble {
        seeds,
        summary: EnsembleSummary {
            trials: costs.len(),
            mean_cost,
            std_error,
        },
        costs,
        metrics: MetricCurves { freq, ace },
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::ZeroController;

    fn scalar_model(a: f64) -> LqgModel {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        LqgModel::new(
            m(a),
            m(1.0),
            m(1.0),
            m(1.0),
            m(1.0),
            m(0.0),
            m(0.0),
            m(0.0),
            m(0.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn euler_matches_exponential() {
        let model = scalar_model(-1.0);
        let grid = TimeGrid::new(6.0, 0.005).unwrap();
        let noise = NoiseModel::from_model(&model, 0, 1);
        let t =
            simulate_closed_loop(&model, &mut ZeroController::new(1), &noise, 0, &grid).unwrap();
        for (k, x) in t.x.iter().enumerate() {
            assert!((x[0] - 0.995f64.powi(k as i32)).abs() < 1e-12);
        }
        let rel = |k: usize| {
            let exact = (-grid.time(k)).exp();
            (t.x[k][0] - exact).abs() / exact
        };
        assert!(rel(200) < 3e-3);
        // global Euler error on x' = -x is about t dt / 2
        assert!(rel(1200) < 6.0 * 0.005 / 2.0 * 1.01, "{}", rel(1200));
    }

    #[test]
    fn zero_noise_equilibrium() {
        let mut model = scalar_model(-1.0);
        model.x0_mean = DVector::zeros(1);
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let noise = NoiseModel::from_model(&model, 3, 1);
        let t =
            simulate_closed_loop(&model, &mut ZeroController::new(1), &noise, 3, &grid).unwrap();
        assert!(t.x.iter().chain(&t.y).all(|v| v[0] == 0.0));
        assert_eq!(evaluate_cost(&t, &model.q, &model.r, &model.s, &grid), 0.0);
    }

    #[test]
    fn constant_state_cost() {
        let grid = TimeGrid::new(6.0, 0.5).unwrap();
        let traj = Trajectory {
            seed: 0,
            x: vec![DVector::from_vec(vec![0.6, 0.8]); grid.len()],
            y: vec![],
            u: vec![DVector::zeros(1); grid.len()],
        };
        let j = evaluate_cost(
            &traj,
            &DMatrix::identity(2, 2),
            &DMatrix::identity(1, 1),
            &DMatrix::zeros(2, 2),
            &grid,
        );
        assert!((j - 6.0).abs() < 1e-12);
    }

    struct Peeker;
    impl Controller for Peeker {
        fn command(
            &mut self,
            k: usize,
            meas: &MeasurementView<'_>,
        ) -> Result<DVector<f64>, SimError> {
            assert_eq!(meas.len(), k + 1);
            meas.at(k)?;
            meas.at(k + 1)?;
            Ok(DVector::zeros(1))
        }
    }

    #[test]
    fn future_measurements_unavailable() {
        let model = scalar_model(-1.0);
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        let noise = NoiseModel::from_model(&model, 0, 1);
        let err = simulate_closed_loop(&model, &mut Peeker, &noise, 0, &grid).unwrap_err();
        assert_eq!(
            err,
            SimError::Causality {
                requested: 1,
                available: 1
            }
        );
    }

    #[test]
    fn divergence_names_step() {
        let model = scalar_model(1e200);
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        let noise = NoiseModel::from_model(&model, 0, 2);
        let err =
            run_ensemble(&model, &grid, &noise, |_| Ok(ZeroController::new(1)), false).unwrap_err();
        assert_eq!(err.failures.len(), 2);
        assert_eq!(err.failures[1].0, 1);
        assert!(matches!(
            err.failures[0].1,
            SimError::Divergence { step: 2 }
        ));
    }

    #[test]
    fn increment_moments() {
        let rw = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3]);
        let w_mean = DVector::from_vec(vec![1.0, -2.0]);
        let noise = NoiseModel {
            w_mean: w_mean.clone(),
            v_mean: DVector::zeros(1),
            x0_mean: DVector::zeros(2),
            base_seed: 0,
            trial_count: 1,
            lw: psd_factor(&rw),
            lv: DMatrix::zeros(1, 1),
            lx: DMatrix::zeros(2, 2),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dt = 0.01;
        let n = 100_000;
        let draws: Vec<DVector<f64>> = (0..n)
            .map(|_| noise.process_increment(&mut rng, dt))
            .collect();
        let mean = draws.iter().sum::<DVector<f64>>() / n as f64;
        let mut cov = DMatrix::zeros(2, 2);
        for d in &draws {
            let c = d - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        assert!((&mean - &w_mean * dt).amax() < 5.0 * (0.5f64 * dt / n as f64).sqrt());
        assert!((&cov - &rw * dt).amax() < 0.02 * 0.5 * dt);
    }
}

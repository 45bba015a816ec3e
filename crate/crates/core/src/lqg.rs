//! Centralized finite-horizon LQG: control and filter Riccati equations,
//! their gains, and the Kalman-Bucy estimator.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::grid::{rk4_step, GridFn, Stage, StagedFn, TimeGrid};
use crate::grid_model::LqgModel;
use crate::linalg::symmetrize;

/// Frobenius norm beyond which a Riccati solve is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqgError {
    #[error(
        "{which} Riccati solution diverged at grid step {step} (norm {norm:e}); try a smaller dt"
    )]
    Stiffness {
        which: &'static str,
        step: usize,
        norm: f64,
    },
    #[error("{0} is not invertible")]
    Singular(&'static str),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: GridFn<DMatrix<f64>>,
    /// `K(t) = R^-1 B' P(t)`.
    pub k: GridFn<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct FilterSolution {
    pub sigma: GridFn<DMatrix<f64>>,
    /// `L(t) = Sigma(t) C' Rv^-1`.
    pub l: GridFn<DMatrix<f64>>,
}

fn inverse(m: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>, LqgError> {
    m.clone().try_inverse().ok_or(LqgError::Singular(name))
}

/// Integrates `X' = F X + X F' + G - X M X` from `x0` across the grid with
/// constant coefficients, forward (`backward = false`) or backward in time.
/// Samples are returned in time order.
pub(crate) fn riccati_flow(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    m: &DMatrix<f64>,
    x0: &DMatrix<f64>,
    grid: &TimeGrid,
    backward: bool,
    which: &'static str,
) -> Result<Vec<DMatrix<f64>>, LqgError> {
    let rhs = |_: Stage, x: &DMatrix<f64>| {
        let fx = f * x;
        let mut out = &fx + fx.transpose() + g;
        out -= x * m * x;
        out
    };
    let steps = grid.steps();
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    symmetrize(&mut x);
    out.push(x.clone());
    for step in 1..=steps {
        // Dummy stages: the coefficients are time-invariant.
        x = rk4_step(
            &x,
            grid.dt(),
            Stage::Node(0),
            Stage::Node(0),
            Stage::Node(0),
            rhs,
        );
        symmetrize(&mut x);
        let norm = x.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(LqgError::Stiffness { which, step, norm });
        }
        out.push(x.clone());
    }
    if backward {
        out.reverse();
    }
    Ok(out)
}

/// Backward control Riccati `-P' = A'P + PA + Q - P B R^-1 B' P`, `P(T) = S`.
pub fn solve_control_riccati(
    model: &LqgModel,
    grid: &TimeGrid,
) -> Result<RiccatiSolution, LqgError> {
    let r_inv = inverse(&model.r, "R")?;
    let bt = model.b.transpose();
    let m = &model.b * &r_inv * &bt;
    // In reversed time s = T - t: dP/ds = A'P + PA + Q - PMP.
    let at = model.a.transpose();
    let p = riccati_flow(&at, &model.q, &m, &model.s, grid, true, "control")?;
    let gain = &r_inv * &bt;
    let k = p.iter().map(|p| &gain * p).collect();
    Ok(RiccatiSolution {
        p: GridFn::new(*grid, p).expect("sample count"),
        k: GridFn::new(*grid, k).expect("sample count"),
    })
}

/// Forward filter Riccati `Sigma' = A Sigma + Sigma A' + Rw - Sigma C' Rv^-1 C Sigma`,
/// `Sigma(0) = Rx`.
pub fn solve_filter_riccati(model: &LqgModel, grid: &TimeGrid) -> Result<FilterSolution, LqgError> {
    let rv_inv = inverse(&model.rv, "R_v")?;
    let ct = model.c.transpose();
    let v = &ct * &rv_inv * &model.c;
    let sigma = riccati_flow(&model.a, &model.rw, &v, &model.rx, grid, false, "filter")?;
    let gain = &ct * &rv_inv;
    let l = sigma.iter().map(|s| s * &gain).collect();
    Ok(FilterSolution {
        sigma: GridFn::new(*grid, sigma).expect("sample count"),
        l: GridFn::new(*grid, l).expect("sample count"),
    })
}

/// Kalman-Bucy estimator in closed loop with `u = -K x_hat`:
/// `x_hat' = (A - BK - LC) x_hat + L (y - v_mean) + w_mean`, RK4 with `y`
/// held over each step.
#[derive(Debug, Clone)]
pub struct KalmanBucy {
    closed: StagedFn<DMatrix<f64>>,
    gain: StagedFn<DMatrix<f64>>,
    w_mean: DVector<f64>,
    v_mean: DVector<f64>,
    grid: TimeGrid,
}

impl KalmanBucy {
    pub fn new(
        model: &LqgModel,
        filter: &FilterSolution,
        control_gain: &GridFn<DMatrix<f64>>,
    ) -> Result<Self, LqgError> {
        if !filter.l.same_grid(control_gain) {
            return Err(LqgError::GridMismatch(
                "filter and control gains are on different grids".into(),
            ));
        }
        let closed: Vec<DMatrix<f64>> = (0..filter.l.len())
            .map(|k| &model.a - &model.b * control_gain.at(k) - filter.l.at(k) * &model.c)
            .collect();
        Ok(Self {
            closed: StagedFn::from_samples(closed),
            gain: StagedFn::from_grid(&filter.l),
            w_mean: model.w_mean.clone(),
            v_mean: model.v_mean.clone(),
            grid: *filter.l.grid(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Advances the estimate from grid point `k` to `k + 1` given `y(t_k)`.
    pub fn step(&self, k: usize, xhat: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let innov = y - &self.v_mean;
        let rhs = |s: Stage, x: &DVector<f64>| {
            let mut d = self.closed.at(s) * x + self.gain.at(s) * &innov;
            d += &self.w_mean;
            d
        };
        rk4_step(
            xhat,
            self.grid.dt(),
            Stage::Node(k),
            Stage::Mid(k),
            Stage::Node(k + 1),
            rhs,
        )
    }
}

/// Runs the estimator over a whole measurement record.
pub fn kalman_bucy_run(
    model: &LqgModel,
    filter: &FilterSolution,
    control_gain: &GridFn<DMatrix<f64>>,
    y: &GridFn<DVector<f64>>,
    x0_mean: &DVector<f64>,
) -> Result<GridFn<DVector<f64>>, LqgError> {
    if !y.same_grid(&filter.l) {
        return Err(LqgError::GridMismatch(
            "measurements and filter gains are on different grids".into(),
        ));
    }
    let kb = KalmanBucy::new(model, filter, control_gain)?;
    let mut out = Vec::with_capacity(y.len());
    let mut x = x0_mean.clone();
    for k in 0..y.len() {
        out.push(x.clone());
        if k + 1 < y.len() {
            x = kb.step(k, &x, y.at(k));
        }
    }
    Ok(GridFn::new(*y.grid(), out).expect("sample count"))
}

/// `u(t_k) = -K(t_k) x_hat(t_k)`.
pub fn centralized_command(
    riccati: &RiccatiSolution,
    xhat: &GridFn<DVector<f64>>,
) -> Result<GridFn<DVector<f64>>, LqgError> {
    if !riccati.k.same_grid(xhat) {
        return Err(LqgError::GridMismatch(
            "gain and estimate are on different grids".into(),
        ));
    }
    Ok(GridFn::from_fn(*xhat.grid(), |k| {
        -(riccati.k.at(k) * xhat.at(k))
    }))
}

//! Uniform time grids and grid-sampled functions.
//!
//! Every time-dependent quantity in the crate (Riccati solutions, gains,
//! transition matrices, state estimates) lives on a [`TimeGrid`] over
//! `[0, T]`. Fixed-step RK4 integrators need coefficient values at interval
//! midpoints; [`StagedFn`] provides those by cubic interpolation of the grid
//! samples.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("time step {dt} does not divide horizon {horizon}")]
    NotIntegral { horizon: f64, dt: f64 },
    #[error("expected {expected} samples on the grid, got {got}")]
    SampleCount { expected: usize, got: usize },
}

/// Uniform grid `t_k = k * dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self, GridError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(GridError::BadHorizon(horizon));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(GridError::BadStep(dt));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
            return Err(GridError::NotIntegral { horizon, dt });
        }
        Ok(Self {
            horizon,
            dt,
            steps: steps as usize,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of integration intervals.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of sample points (`steps + 1`).
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|k| self.time(k))
    }

    /// Grid index of `t` if `t` sits on the grid (to within 1e-9 steps).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let r = t / self.dt;
        let k = r.round();
        if k < 0.0 || k > self.steps as f64 || (r - k).abs() > 1e-9 {
            return None;
        }
        Some(k as usize)
    }
}

/// A function of time sampled at every point of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn<T> {
    grid: TimeGrid,
    values: Vec<T>,
}

impl<T> GridFn<T> {
    pub fn new(grid: TimeGrid, values: Vec<T>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::SampleCount {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl FnMut(usize) -> T) -> Self {
        Self {
            grid,
            values: (0..grid.len()).map(f).collect(),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn at(&self, k: usize) -> &T {
        &self.values[k]
    }

    pub fn first(&self) -> &T {
        &self.values[0]
    }

    pub fn last(&self) -> &T {
        &self.values[self.values.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> GridFn<U> {
        GridFn {
            grid: self.grid,
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn same_grid<U>(&self, other: &GridFn<U>) -> bool {
        self.grid == other.grid
    }
}

impl<T> std::ops::Index<usize> for GridFn<T> {
    type Output = T;
    fn index(&self, k: usize) -> &T {
        &self.values[k]
    }
}

/// Which RK4 stage a coefficient is evaluated at, relative to interval `k`
/// (the interval between grid points `k` and `k + 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Node(usize),
    Mid(usize),
}

/// Grid samples plus interval midpoints, for evaluating ODE coefficients at
/// RK4 stages.
#[derive(Debug, Clone)]
pub struct StagedFn<T> {
    nodes: Vec<T>,
    mids: Vec<T>,
}

impl<T: Interpolate> StagedFn<T> {
    pub fn from_grid(f: &GridFn<T>) -> Self {
        Self::from_samples(f.values().to_vec())
    }

    pub fn from_samples(nodes: Vec<T>) -> Self {
        let mids = (0..nodes.len().saturating_sub(1))
            .map(|k| cubic_midpoint(&nodes, k))
            .collect();
        Self { nodes, mids }
    }
}

impl<T> StagedFn<T> {
    pub fn at(&self, stage: Stage) -> &T {
        match stage {
            Stage::Node(k) => &self.nodes[k],
            Stage::Mid(k) => &self.mids[k],
        }
    }

    pub fn node(&self, k: usize) -> &T {
        &self.nodes[k]
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }
}

/// Linear combinations, enough for polynomial interpolation.
pub trait Interpolate: Clone {
    fn combine(terms: &[(f64, &Self)]) -> Self;
}

impl Interpolate for DMatrix<f64> {
    fn combine(terms: &[(f64, &Self)]) -> Self {
        let (w0, m0) = terms[0];
        let mut out = m0 * w0;
        for &(w, m) in &terms[1..] {
            for (o, v) in out.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *o += w * v;
            }
        }
        out
    }
}

impl Interpolate for DVector<f64> {
    fn combine(terms: &[(f64, &Self)]) -> Self {
        let (w0, v0) = terms[0];
        let mut out = v0 * w0;
        for &(w, v) in &terms[1..] {
            out.axpy(w, v, 1.0);
        }
        out
    }
}

impl Interpolate for f64 {
    fn combine(terms: &[(f64, &Self)]) -> Self {
        terms.iter().map(|&(w, v)| w * v).sum()
    }
}

/// Value at the midpoint of interval `k` from a cubic through four
/// neighbouring samples (one-sided at the ends). Falls back to lower order
/// when fewer than four samples exist.
pub fn cubic_midpoint<T: Interpolate>(f: &[T], k: usize) -> T {
    cubic_at(f, k, 0.5)
}

/// Value at `t_k + theta * dt`, `theta` in `[0, 1]`, from the same stencil
/// as [`cubic_midpoint`].
pub fn cubic_at<T: Interpolate>(f: &[T], k: usize, theta: f64) -> T {
    let n = f.len();
    debug_assert!(k + 1 < n);
    let (first, count) = match n {
        2 => (0, 2),
        3 => (0, 3),
        _ if k == 0 => (0, 4),
        _ if k == n - 2 => (n - 4, 4),
        _ => (k - 1, 4),
    };
    let x = (k - first) as f64 + theta;
    let terms: Vec<(f64, &T)> = (0..count)
        .map(|j| {
            let mut w = 1.0;
            for m in 0..count {
                if m != j {
                    w *= (x - m as f64) / (j as f64 - m as f64);
                }
            }
            (w, &f[first + j])
        })
        .collect();
    T::combine(&terms)
}

/// One classical RK4 step of `y' = f(stage, y)` with step `h` (negative for
/// backward integration). `start`/`mid`/`end` name the stages at which the
/// coefficients are evaluated.
pub fn rk4_step<T, F>(y: &T, h: f64, start: Stage, mid: Stage, end: Stage, mut f: F) -> T
where
    T: Interpolate,
    F: FnMut(Stage, &T) -> T,
{
    let k1 = f(start, y);
    let k2 = f(mid, &T::combine(&[(1.0, y), (0.5 * h, &k1)]));
    let k3 = f(mid, &T::combine(&[(1.0, y), (0.5 * h, &k2)]));
    let k4 = f(end, &T::combine(&[(1.0, y), (h, &k3)]));
    T::combine(&[
        (1.0, y),
        (h / 6.0, &k1),
        (h / 3.0, &k2),
        (h / 3.0, &k3),
        (h / 6.0, &k4),
    ])
}

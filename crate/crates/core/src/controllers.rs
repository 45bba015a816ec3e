//! Controllers that plug into [`crate::sim::simulate_closed_loop`].

use nalgebra::{DMatrix, DVector};

use crate::consensus::{AccessMonitor, ConsensusError, DistributedEstimator, DistributedSolution};
use crate::grid::GridFn;
use crate::lqg::KalmanBucy;
use crate::sim::{Controller, MeasurementView, SimError};

/// Open loop: `u = 0`.
pub struct ZeroController {
    inputs: usize,
}

impl ZeroController {
    pub fn new(inputs: usize) -> Self {
        Self { inputs }
    }
}

impl Controller for ZeroController {
    fn command(
        &mut self,
        _k: usize,
        _meas: &MeasurementView<'_>,
    ) -> Result<DVector<f64>, SimError> {
        Ok(DVector::zeros(self.inputs))
    }
}

/// Kalman-Bucy estimate with `u = -K x_hat`. The estimate at `t_k` uses
/// measurements up to `t_{k-1}`.
pub struct CentralizedController<'a> {
    filter: &'a KalmanBucy,
    gain: &'a GridFn<DMatrix<f64>>,
    xhat: DVector<f64>,
    pub estimates: Option<Vec<DVector<f64>>>,
}

impl<'a> CentralizedController<'a> {
    pub fn new(
        filter: &'a KalmanBucy,
        gain: &'a GridFn<DMatrix<f64>>,
        x0_mean: DVector<f64>,
    ) -> Self {
        Self {
            filter,
            gain,
            xhat: x0_mean,
            estimates: None,
        }
    }

    pub fn recording(mut self) -> Self {
        self.estimates = Some(Vec::with_capacity(self.gain.len()));
        self
    }
}

impl Controller for CentralizedController<'_> {
    fn command(&mut self, k: usize, meas: &MeasurementView<'_>) -> Result<DVector<f64>, SimError> {
        if k > 0 {
            self.xhat = self.filter.step(k - 1, &self.xhat, meas.at(k - 1)?);
        }
        if let Some(rec) = &mut self.estimates {
            rec.push(self.xhat.clone());
        }
        Ok(-(self.gain.at(k) * &self.xhat))
    }
}

/// Distributed estimator with each area applying its own command
/// `u_i = -R_i^-1 b_i' P_i xbar_i`.
pub struct DistributedController<'a> {
    est: DistributedEstimator<'a>,
    /// Per step, every area's estimate.
    pub estimates: Option<Vec<Vec<DVector<f64>>>>,
}

impl<'a> DistributedController<'a> {
    pub fn new(
        sol: &'a DistributedSolution,
        monitor: &'a dyn AccessMonitor,
    ) -> Result<Self, ConsensusError> {
        Ok(Self {
            est: DistributedEstimator::new(sol, monitor)?,
            estimates: None,
        })
    }

    pub fn recording(mut self) -> Self {
        self.estimates = Some(Vec::new());
        self
    }

    pub fn estimator(&self) -> &DistributedEstimator<'a> {
        &self.est
    }
}

impl Controller for DistributedController<'_> {
    fn command(&mut self, k: usize, meas: &MeasurementView<'_>) -> Result<DVector<f64>, SimError> {
        if k > 0 {
            self.est.advance(k - 1, meas.at(k - 1)?);
        }
        let xbar = self.est.estimate();
        let u = self.est.commands(k, &xbar);
        if let Some(rec) = &mut self.estimates {
            rec.push(xbar);
        }
        Ok(u)
    }
}

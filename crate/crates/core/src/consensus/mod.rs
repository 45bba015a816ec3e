//! Consensus averaging and the distributed Riccati/estimation algorithms
//! built on it.
//!
//! Every area runs the same synchronous update
//!
//! ```text
//! v_i <- v_i + alpha_r (target_i - v_i) + (1/delta) sum_{j in N_i} a_ij (v_j - v_i)
//! ```
//!
//! which, for a mixing-valid `delta` and a harmonic step schedule, drives all
//! `v_i` to the average of the targets. Areas only ever read their own
//! private data and the iterates of their communication neighbours; see
//! [`privacy`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::CommGraph;

pub mod distributed;
pub mod engine;
pub mod privacy;
pub mod scaled;

pub use distributed::{
    distributed_command, distributed_control_riccati, distributed_filter_riccati, distributed_h,
    distributed_state_estimate, local_transition, solve_distributed,
    solve_distributed_with_control, ControlStage, ConvergenceReport, DistributedEstimator,
    DistributedSolution, EstimateStats, FilterStage, HStage, OuterRecord, Transition,
};
pub use engine::{FieldResult, InnerStats, Network};
pub use privacy::{
    AccessEvent, AccessKind, AccessMonitor, AccessRecorder, AreaView, NeighborhoodGuard,
    PrivacyError, PrivateStore,
};
pub use scaled::LocalScaledData;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid consensus configuration: {0}")]
    Config(String),
    #[error("mixing condition fails: spectral radius {spectral_radius} (connected: {connected})")]
    Mixing {
        spectral_radius: f64,
        connected: bool,
    },
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Lqg(#[from] crate::lqg::LqgError),
    #[error("{stage} did not converge: {detail}")]
    NotConverged { stage: &'static str, detail: String },
}

/// `alpha_r = scale / (r + offset)`, `r = 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            scale: 1.0,
            offset: 0.0,
        }
    }
}

impl StepSchedule {
    pub fn alpha(&self, r: usize) -> f64 {
        self.scale / (r as f64 + self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub step_sizes: StepSchedule,
    #[serde(default = "default_sigma")]
    pub sigma_tol: f64,
    /// Cap on inner consensus rounds.
    #[serde(default = "default_inner")]
    pub max_inner: usize,
    /// Cap on outer Riccati iterations.
    #[serde(default = "default_outer")]
    pub max_outer: usize,
}

fn default_delta() -> f64 {
    10.0
}
fn default_sigma() -> f64 {
    1e-3
}
fn default_inner() -> usize {
    800
}
fn default_outer() -> usize {
    30
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            step_sizes: StepSchedule::default(),
            sigma_tol: default_sigma(),
            max_inner: default_inner(),
            max_outer: default_outer(),
        }
    }
}

impl ConsensusConfig {
    /// Parameter checks plus the mixing condition on `graph`.
    pub fn validate(&self, graph: &CommGraph) -> Result<(), ConsensusError> {
        self.validate_params()?;
        let diag = graph.check_mixing(self.delta);
        if !diag.ok {
            return Err(ConsensusError::Mixing {
                spectral_radius: diag.spectral_radius,
                connected: diag.connected,
            });
        }
        Ok(())
    }

    pub fn validate_params(&self) -> Result<(), ConsensusError> {
        let bad = |m: String| Err(ConsensusError::Config(m));
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.sigma_tol.is_finite() && self.sigma_tol > 0.0) {
            return bad(format!(
                "sigma_tol must be positive, got {}",
                self.sigma_tol
            ));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return bad("iteration caps must be at least 1".into());
        }
        let s = self.step_sizes;
        if !(s.scale.is_finite() && s.scale > 0.0 && s.offset.is_finite() && s.offset >= 0.0) {
            return bad(format!(
                "step schedule needs scale > 0 and offset >= 0, got {} and {}",
                s.scale, s.offset
            ));
        }
        if s.alpha(1) > 1.0 {
            return bad(format!("first step size {} exceeds 1", s.alpha(1)));
        }
        Ok(())
    }
}

/// One synchronous consensus round: every node reads the previous round's
/// values of its neighbours.
pub fn consensus_round(
    values: &[DMatrix<f64>],
    targets: &[DMatrix<f64>],
    alpha: f64,
    graph: &CommGraph,
    delta: f64,
) -> Result<Vec<DMatrix<f64>>, ConsensusError> {
    let n = graph.n();
    if values.len() != n || targets.len() != n {
        return Err(ConsensusError::Shape(format!(
            "{} values and {} targets for {n} nodes",
            values.len(),
            targets.len()
        )));
    }
    let shape = values[0].shape();
    if values.iter().chain(targets).any(|m| m.shape() != shape) {
        return Err(ConsensusError::Shape(
            "all values and targets must share one shape".into(),
        ));
    }
    Ok((0..n)
        .map(|i| {
            let mut next = &values[i] + (&targets[i] - &values[i]) * alpha;
            for &j in graph.neighbors(i) {
                next += (&values[j] - &values[i]) * (graph.weight(i, j) / delta);
            }
            next
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(v: &[f64]) -> Vec<DMatrix<f64>> {
        v.iter().map(|&x| DMatrix::from_element(1, 1, x)).collect()
    }

    /// Rounds until every node is within `tol` of the target mean.
    fn run(graph: &CommGraph, targets: &[DMatrix<f64>], tol: f64) -> Vec<DMatrix<f64>> {
        let sched = StepSchedule::default();
        let mean = targets.iter().sum::<DMatrix<f64>>() / targets.len() as f64;
        let mut v = targets.to_vec();
        for r in 1..10_000_000 {
            v = consensus_round(&v, targets, sched.alpha(r), graph, 10.0).unwrap();
            if v.iter().all(|x| (x - &mean).amax() < tol) {
                break;
            }
        }
        v
    }

    #[test]
    fn complete_graph_reaches_mean() {
        let v = run(&CommGraph::complete(3), &scalars(&[1.0, 2.0, 3.0]), 1e-6);
        for x in v {
            assert!((x[(0, 0)] - 2.0).abs() < 1e-6, "{}", x[(0, 0)]);
        }
    }

    #[test]
    fn consensual_fixed_point() {
        let g = CommGraph::ring(4);
        let v = scalars(&[0.7; 4]);
        let next = consensus_round(&v, &v, 0.3, &g, 10.0).unwrap();
        assert_eq!(next, v);
    }

    #[test]
    fn single_node_tracks_target() {
        let g = CommGraph::edgeless(1);
        let t = scalars(&[5.0]);
        let mut v = scalars(&[0.0]);
        for r in 1..100 {
            v = consensus_round(&v, &t, 1.0 / r as f64, &g, 10.0).unwrap();
        }
        assert_eq!(v[0][(0, 0)], 5.0);
    }

    #[test]
    fn shape_mismatch() {
        let g = CommGraph::ring(3);
        let mut v = scalars(&[1.0, 2.0, 3.0]);
        v[1] = DMatrix::zeros(2, 1);
        let t = scalars(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            consensus_round(&v, &t, 0.5, &g, 10.0),
            Err(ConsensusError::Shape(_))
        ));
        assert!(consensus_round(&t[..2], &t, 0.5, &g, 10.0).is_err());
    }

    #[test]
    fn config_validation() {
        let ring = CommGraph::ring(6);
        assert!(ConsensusConfig::default().validate(&ring).is_ok());
        let mut c = ConsensusConfig {
            delta: 1.0,
            ..ConsensusConfig::default()
        };
        assert!(matches!(
            c.validate(&ring),
            Err(ConsensusError::Mixing { .. })
        ));
        c = ConsensusConfig::default();
        c.sigma_tol = 0.0;
        assert!(c.validate(&ring).is_err());
        c = ConsensusConfig::default();
        c.step_sizes.scale = 2.0;
        assert!(c.validate(&ring).is_err());
        c.step_sizes.offset = 1.0;
        assert!(c.validate(&ring).is_ok());
        assert!(ConsensusConfig::default()
            .validate(&CommGraph::edgeless(3))
            .is_err());
    }
}

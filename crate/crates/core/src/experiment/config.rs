//! TOML experiment configuration.
//!
//! ```toml
//! horizon = 6.0            # seconds
//! dt = 0.005
//! output_dir = "results"
//! comm_edges = [[1, 2, 1.0], [2, 3, 1.0]]   # 1-based area ids, weight
//! phys_edges = [[1, 2, 2.0]]                # tie-line synchronizing coefficients
//!
//! [consensus]
//! delta = 10.0
//! sigma_tol = 1e-3
//! max_inner = 800
//! max_outer = 30
//! step_sizes = { scale = 1.0, offset = 0.0 }
//!
//! [noise]
//! base_seed = 0
//! trial_count = 500
//!
//! [[areas]]
//! inertia = 10.0
//! damping = 1.2
//! turbine_tc = 0.31
//! governor_tc = 0.08
//! governor_coeff = 2.4
//! q_weight = 1.4           # scalar or 4x4 array
//! rw = 0.01                # scalar (times I) or 4x4 array; same for rx
//!
//! [[scenarios]]
//! name = "distributed"
//! controller = "distributed"   # or "centralized", "none"
//! trials = 500
//! rw = 0.1                 # optional noise levels applied to every area
//! rv = 0.1
//! ```
//!
//! Omitted edge lists default to rings (communication weight 1, tie-line
//! coefficient 2). Omitted scenarios default to one distributed run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{ConsensusConfig, ConsensusError};
use crate::grid::TimeGrid;
use crate::grid_model::{
    assemble_global, default_beta, AreaParams, CostWeight, GlobalSystem, ModelError,
};
use crate::topology::{CommGraph, PhysGraph};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Either `s * I` or a full 4x4 matrix (row-major).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Scalar(f64),
    Full([[f64; 4]; 4]),
}

impl Weight {
    pub fn matrix(&self) -> Matrix4<f64> {
        match self {
            Weight::Scalar(s) => Matrix4::identity() * *s,
            Weight::Full(rows) => Matrix4::from_fn(|r, c| rows[r][c]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaConfig {
    pub inertia: f64,
    pub damping: f64,
    pub turbine_tc: f64,
    pub governor_tc: f64,
    pub governor_coeff: f64,
    /// Defaults to `1/W + G`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "unit_weight")]
    pub q_weight: Weight,
    #[serde(default = "one")]
    pub r_weight: f64,
    #[serde(default = "small_cov")]
    pub rx: Weight,
    #[serde(default = "small_cov")]
    pub rw: Weight,
    #[serde(default = "small")]
    pub rv: f64,
    #[serde(default)]
    pub w_mean: [f64; 4],
    #[serde(default)]
    pub v_mean: f64,
    #[serde(default = "initial_deviation")]
    pub x0_mean: [f64; 4],
}

fn unit_weight() -> Weight {
    Weight::Scalar(1.0)
}
fn one() -> f64 {
    1.0
}
fn small() -> f64 {
    0.01
}
fn small_cov() -> Weight {
    Weight::Scalar(0.01)
}
fn initial_deviation() -> [f64; 4] {
    [0.1, 0.0, 0.0, 0.0]
}

impl AreaConfig {
    pub fn from_params(p: &AreaParams) -> Self {
        let full = |m: &Matrix4<f64>| {
            if *m == Matrix4::identity() * m[(0, 0)] {
                Weight::Scalar(m[(0, 0)])
            } else {
                Weight::Full(std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])))
            }
        };
        Self {
            inertia: p.inertia,
            damping: p.damping,
            turbine_tc: p.turbine_tc,
            governor_tc: p.governor_tc,
            governor_coeff: p.governor_coeff,
            beta: Some(p.beta),
            q_weight: match &p.q_weight {
                CostWeight::Scalar(s) => Weight::Scalar(*s),
                CostWeight::Block(m) => full(m),
            },
            r_weight: p.r_weight,
            rx: full(&p.rx),
            rw: full(&p.rw),
            rv: p.rv,
            w_mean: p.w_mean.into(),
            v_mean: p.v_mean,
            x0_mean: p.x0_mean.into(),
        }
    }

    pub fn params(&self) -> AreaParams {
        AreaParams {
            inertia: self.inertia,
            damping: self.damping,
            turbine_tc: self.turbine_tc,
            governor_tc: self.governor_tc,
            governor_coeff: self.governor_coeff,
            beta: self
                .beta
                .unwrap_or_else(|| default_beta(self.governor_coeff, self.damping)),
            q_weight: match self.q_weight {
                Weight::Scalar(s) => CostWeight::Scalar(s),
                w @ Weight::Full(_) => CostWeight::Block(w.matrix()),
            },
            r_weight: self.r_weight,
            rx: self.rx.matrix(),
            rw: self.rw.matrix(),
            rv: self.rv,
            w_mean: Vector4::from(self.w_mean),
            v_mean: self.v_mean,
            x0_mean: Vector4::from(self.x0_mean),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Centralized,
    Distributed,
    None,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Centralized => "centralized",
            ControllerKind::Distributed => "distributed",
            ControllerKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub controller: ControllerKind,
    /// Defaults to `noise.trial_count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// Uniform process noise level: `R_wi = rw * I` for every area.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rw: Option<f64>,
    /// Uniform measurement noise level: `R_vi = rv` for every area.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rv: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_trials")]
    pub trial_count: usize,
}

fn default_trials() -> usize {
    500
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            base_seed: 0,
            trial_count: default_trials(),
        }
    }
}

/// `(from, to, weight)` with 1-based area ids.
pub type Edge = (usize, usize, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm_edges: Option<Vec<Edge>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phys_edges: Option<Vec<Edge>>,
    #[serde(default)]
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub areas: Vec<AreaConfig>,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
}

fn default_horizon() -> f64 {
    6.0
}
fn default_dt() -> f64 {
    0.005
}
fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn ring_edges(n: usize, weight: f64) -> Vec<Edge> {
    match n {
        0 | 1 => vec![],
        2 => vec![(1, 2, weight)],
        _ => (1..=n).map(|i| (i, i % n + 1, weight)).collect(),
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_toml(&text)
}

impl ExperimentConfig {
    /// Parses, fills defaults and validates.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The six-area benchmark with default edges and one scenario per
    /// controller.
    pub fn benchmark() -> Self {
        let mut cfg = Self {
            horizon: default_horizon(),
            dt: default_dt(),
            output_dir: default_out(),
            comm_edges: None,
            phys_edges: None,
            consensus: ConsensusConfig::default(),
            noise: NoiseConfig::default(),
            areas: crate::grid_model::six_area_benchmark()
                .iter()
                .map(AreaConfig::from_params)
                .collect(),
            scenarios: [
                ControllerKind::Centralized,
                ControllerKind::Distributed,
                ControllerKind::None,
            ]
            .into_iter()
            .map(|c| Scenario {
                name: c.as_str().into(),
                controller: c,
                trials: None,
                rw: None,
                rv: None,
            })
            .collect(),
        };
        cfg.resolve().expect("benchmark config is valid");
        cfg
    }

    /// Command-line overrides: `seed` replaces `noise.base_seed`, `trials`
    /// applies to every scenario, `dt` replaces the step. Revalidates.
    pub fn with_overrides(
        mut self,
        seed: Option<u64>,
        trials: Option<usize>,
        dt: Option<f64>,
    ) -> Result<Self, ConfigError> {
        if let Some(seed) = seed {
            self.noise.base_seed = seed;
        }
        if let Some(trials) = trials {
            self.noise.trial_count = trials;
            for s in &mut self.scenarios {
                s.trials = Some(trials);
            }
        }
        if let Some(dt) = dt {
            self.dt = dt;
        }
        self.resolve()?;
        Ok(self)
    }

    pub fn n_areas(&self) -> usize {
        self.areas.len()
    }

    /// Fills defaults and checks every invariant. Idempotent.
    pub fn resolve(&mut self) -> Result<(), ConfigError> {
        let n = self.areas.len();
        if n == 0 {
            return Err(invalid("areas", "at least one area is required"));
        }
        for (i, a) in self.areas.iter_mut().enumerate() {
            a.beta
                .get_or_insert_with(|| default_beta(a.governor_coeff, a.damping));
            a.params().validate(i).map_err(|e| match e {
                ModelError::InvalidParameter { field, reason, .. } => {
                    invalid(format!("areas[{i}].{field}"), reason)
                }
                other => invalid(format!("areas[{i}]"), other.to_string()),
            })?;
        }
        TimeGrid::new(self.horizon, self.dt).map_err(|e| invalid("dt", e.to_string()))?;
        self.comm_edges.get_or_insert_with(|| ring_edges(n, 1.0));
        self.phys_edges.get_or_insert_with(|| ring_edges(n, 2.0));
        let comm = self.comm_graph()?;
        self.phys_graph()?;
        self.consensus.validate(&comm).map_err(|e| match e {
            ConsensusError::Mixing {
                spectral_radius,
                connected,
            } => invalid(
                "consensus.delta",
                if connected {
                    format!(
                        "delta = {} fails the mixing condition: spectral radius of I - L/delta - 11'/N is {spectral_radius:.6}, needs < 1",
                        self.consensus.delta
                    )
                } else {
                    format!("communication graph is disconnected (spectral radius {spectral_radius:.6})")
                },
            ),
            other => invalid("consensus", other.to_string()),
        })?;
        if self.noise.trial_count == 0 {
            return Err(invalid("noise.trial_count", "must be at least 1"));
        }
        if self.scenarios.is_empty() {
            self.scenarios.push(Scenario {
                name: "distributed".into(),
                controller: ControllerKind::Distributed,
                trials: None,
                rw: None,
                rv: None,
            });
        }
        let mut names = BTreeSet::new();
        for (k, s) in self.scenarios.iter().enumerate() {
            let path = |f: &str| format!("scenarios[{k}].{f}");
            if s.name.is_empty() {
                return Err(invalid(path("name"), "must not be empty"));
            }
            if !names.insert(s.name.as_str()) {
                return Err(invalid(
                    path("name"),
                    format!("duplicate scenario name {:?}", s.name),
                ));
            }
            if s.trials == Some(0) {
                return Err(invalid(path("trials"), "must be at least 1"));
            }
            if let Some(rw) = s.rw {
                if !(rw.is_finite() && rw >= 0.0) {
                    return Err(invalid(
                        path("rw"),
                        format!("must be non-negative, got {rw}"),
                    ));
                }
            }
            if let Some(rv) = s.rv {
                if !(rv.is_finite() && rv > 0.0) {
                    return Err(invalid(path("rv"), format!("must be positive, got {rv}")));
                }
            }
        }
        Ok(())
    }

    fn check_edges(&self, key: &str, edges: &[Edge]) -> Result<(), ConfigError> {
        let n = self.n_areas();
        let mut seen = BTreeSet::new();
        for (k, &(a, b, w)) in edges.iter().enumerate() {
            let path = format!("{key}[{k}]");
            if a == 0 || b == 0 || a > n || b > n {
                return Err(invalid(
                    path,
                    format!("area ids must be in 1..={n}, got ({a}, {b})"),
                ));
            }
            if a == b {
                return Err(invalid(path, format!("self-loop on area {a}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(invalid(path, format!("weight must be positive, got {w}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(invalid(path, format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(())
    }

    fn zero_based(edges: &[Edge]) -> Vec<(usize, usize, f64)> {
        edges.iter().map(|&(a, b, w)| (a - 1, b - 1, w)).collect()
    }

    pub fn comm_graph(&self) -> Result<CommGraph, ConfigError> {
        let n = self.n_areas();
        let edges = self
            .comm_edges
            .clone()
            .unwrap_or_else(|| ring_edges(n, 1.0));
        self.check_edges("comm_edges", &edges)?;
        CommGraph::from_edges(n, &Self::zero_based(&edges))
            .map_err(|e| invalid("comm_edges", e.to_string()))
    }

    pub fn phys_graph(&self) -> Result<PhysGraph, ConfigError> {
        let n = self.n_areas();
        let edges = self
            .phys_edges
            .clone()
            .unwrap_or_else(|| ring_edges(n, 2.0));
        self.check_edges("phys_edges", &edges)?;
        PhysGraph::from_edges(n, &Self::zero_based(&edges))
            .map_err(|e| invalid("phys_edges", e.to_string()))
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.horizon, self.dt).expect("validated grid")
    }

    pub fn scenario(&self, name: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.name == name)
    }

    /// Area parameters with a scenario's noise-level overrides applied.
    pub fn area_params(&self, rw: Option<f64>, rv: Option<f64>) -> Vec<AreaParams> {
        self.areas
            .iter()
            .map(|a| {
                let mut p = a.params();
                if let Some(rw) = rw {
                    p.rw = Matrix4::identity() * rw;
                }
                if let Some(rv) = rv {
                    p.rv = rv;
                }
                p
            })
            .collect()
    }

    pub fn system(&self, rw: Option<f64>, rv: Option<f64>) -> Result<GlobalSystem, ConfigError> {
        assemble_global(&self.area_params(rw, rv), &self.phys_graph()?, None)
            .map_err(|e| invalid("areas", e.to_string()))
    }

    pub fn trials_for(&self, s: &Scenario) -> usize {
        s.trials.unwrap_or(self.noise.trial_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[areas]]
inertia = 10.0
damping = 1.2
turbine_tc = 0.31
governor_tc = 0.08
governor_coeff = 2.4

[[areas]]
inertia = 11.0
damping = 1.1
turbine_tc = 0.30
governor_tc = 0.085
governor_coeff = 2.45
"#;

    #[test]
    fn defaults_filled() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.horizon, 6.0);
        assert_eq!(cfg.dt, 0.005);
        assert_eq!(cfg.consensus, ConsensusConfig::default());
        assert_eq!(cfg.comm_edges, Some(vec![(1, 2, 1.0)]));
        assert_eq!(cfg.phys_edges, Some(vec![(1, 2, 2.0)]));
        assert_eq!(cfg.scenarios.len(), 1);
        let p = cfg.areas[0].params();
        assert_eq!(p.rx, Matrix4::identity() * 0.01);
        assert_eq!(p.rv, 0.01);
        assert_eq!(p.x0_mean, Vector4::new(0.1, 0.0, 0.0, 0.0));
        assert!((p.beta - (1.0 / 2.4 + 1.2)).abs() < 1e-15);
    }

    #[test]
    fn round_trip() {
        for cfg in [
            ExperimentConfig::from_toml(MINIMAL).unwrap(),
            ExperimentConfig::benchmark(),
        ] {
            let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(again, cfg);
        }
    }

    #[test]
    fn missing_areas_named() {
        let err = ExperimentConfig::from_toml("horizon = 6.0\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("areas"), "{err}");
    }

    #[test]
    fn bad_fields_have_paths() {
        let text = MINIMAL.replacen("inertia = 11.0", "inertia = -1.0", 1);
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.starts_with("areas[1].inertia"), "{err}");

        let text = format!("comm_edges = [[1, 3, 1.0]]\n{MINIMAL}");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.starts_with("comm_edges[0]"), "{err}");

        let text = format!("dt = 0.007\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml(&text)
            .unwrap_err()
            .to_string()
            .starts_with("dt"));

        let text = format!("typo = 1\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml(&text)
            .unwrap_err()
            .to_string()
            .contains("typo"));
    }

    #[test]
    fn mixing_failure_reports_radius() {
        let mut cfg = ExperimentConfig::benchmark();
        cfg.consensus.delta = 1.0;
        let err = cfg.resolve().unwrap_err().to_string();
        assert!(err.starts_with("consensus.delta"), "{err}");
        assert!(err.contains("spectral radius"), "{err}");
    }

    #[test]
    fn scenario_checks() {
        let text = format!(
            "{MINIMAL}\n[[scenarios]]\nname = \"a\"\ncontroller = \"none\"\n[[scenarios]]\nname = \"a\"\ncontroller = \"centralized\"\n"
        );
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.starts_with("scenarios[1].name"), "{err}");
        let text = format!("{MINIMAL}\n[[scenarios]]\nname = \"a\"\ncontroller = \"pid\"\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn overrides_apply_uniformly() {
        let cfg = ExperimentConfig::benchmark();
        let p = cfg.area_params(Some(0.4), Some(0.5));
        assert!(p
            .iter()
            .all(|a| a.rw == Matrix4::identity() * 0.4 && a.rv == 0.5));
        assert_eq!(cfg.areas[0].params().rw, Matrix4::identity() * 0.01);
    }
}

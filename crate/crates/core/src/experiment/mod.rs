//! Config-driven scenario runs and noise-level comparison sweeps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{
    solve_distributed, solve_distributed_with_control, ConsensusError, ConvergenceReport,
    DistributedSolution, EstimateStats, InnerStats, NeighborhoodGuard,
};

use crate::controllers::{CentralizedController, DistributedController, ZeroController};
use crate::grid::TimeGrid;
use crate::grid_model::{GlobalSystem, LqgModel};
use crate::linalg::frob_diff;
use crate::lqg::{
    solve_control_riccati, solve_filter_riccati, FilterSolution, KalmanBucy, LqgError,
    RiccatiSolution,
};
use crate::sim::{
    area_metrics, evaluate_cost, mean_and_std_error, simulate_closed_loop, NoiseModel, SimError,
    Trajectory,
};
use crate::topology::CommGraph;

pub mod artifacts;
pub mod config;

pub use artifacts::Table;
pub use config::{
    load_config, AreaConfig, ConfigError, ControllerKind, ExperimentConfig, NoiseConfig, Scenario,
    Weight,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Lqg(#[from] LqgError),
    #[error("trial with seed {seed} failed: {source}")]
    Trial { seed: u64, source: SimError },
    #[error("{path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
}

impl ExperimentError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        }
    }
}

/// Trials are dispatched in fixed-size batches and reduced in trial order,
/// which keeps memory bounded and results independent of the thread count.
const BATCH: usize = 64;

fn for_each_trial<R, F, S>(
    trials: usize,
    base_seed: u64,
    run: F,
    mut sink: S,
) -> Result<(), ExperimentError>
where
    R: Send,
    F: Fn(u64) -> Result<R, SimError> + Sync,
    S: FnMut(R),
{
    for start in (0..trials).step_by(BATCH) {
        let end = (start + BATCH).min(trials);
        let results: Vec<(u64, Result<R, SimError>)> = (start..end)
            .into_par_iter()
            .map(|k| {
                let seed = base_seed.wrapping_add(k as u64);
                (seed, run(seed))
            })
            .collect();
        for (seed, r) in results {
            sink(r.map_err(|source| ExperimentError::Trial { seed, source })?);
        }
    }
    Ok(())
}

/// Running sums of per-trial curves, `[column][k]`.
#[derive(Debug, Clone)]
struct CurveSums {
    names: Vec<String>,
    sums: Vec<Vec<f64>>,
}

impl CurveSums {
    fn new(names: Vec<String>, len: usize) -> Self {
        let sums = vec![vec![0.0; len]; names.len()];
        Self { names, sums }
    }

    fn add(&mut self, curves: &[Vec<f64>]) {
        for (s, c) in self.sums.iter_mut().zip(curves) {
            for (a, b) in s.iter_mut().zip(c) {
                *a += b;
            }
        }
    }

    fn into_table(self, trials: usize, table: &mut Table) {
        for (name, mut s) in self.names.into_iter().zip(self.sums) {
            s.iter_mut().for_each(|v| *v /= trials as f64);
            table.push(name, s);
        }
    }
}

fn time_column(grid: &TimeGrid) -> Vec<f64> {
    grid.times().collect()
}

fn area_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_area{i}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub mean: f64,
    pub std_error: f64,
}

impl CostSummary {
    fn of(samples: &[f64]) -> Self {
        let (mean, std_error) = mean_and_std_error(samples);
        Self { mean, std_error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub outer_iterations: usize,
    pub converged: bool,
    pub inner_capped: bool,
    pub nonmonotone: bool,
    /// Last outer deviation per area.
    pub final_deviation: Vec<f64>,
    /// Largest inner round count used in any outer iteration.
    pub max_inner_rounds: usize,
}

impl StageSummary {
    fn of(r: &ConvergenceReport) -> Self {
        Self {
            outer_iterations: r.outer.len(),
            converged: r.converged,
            inner_capped: r.inner_capped,
            nonmonotone: r.nonmonotone,
            final_deviation: r
                .outer
                .last()
                .map(|o| o.deviation.clone())
                .unwrap_or_default(),
            max_inner_rounds: r
                .outer
                .iter()
                .flat_map(|o| o.inner.iter().map(|s| s.rounds))
                .max()
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub within_tolerance: bool,
    pub control: StageSummary,
    pub filter: StageSummary,
    pub filter_init: InnerStats,
    pub h: InnerStats,
    /// Per-time-step estimate consensus, first trial.
    pub estimator: EstimateStats,
}

impl ConvergenceSummary {
    fn of(sol: &DistributedSolution, estimator: EstimateStats) -> Self {
        Self {
            within_tolerance: sol.within_tolerance() && estimator.capped_steps == 0,
            control: StageSummary::of(&sol.control.report),
            filter: StageSummary::of(&sol.filter.report),
            filter_init: sol.filter.init,
            h: sol.h.stats,
            estimator,
        }
    }
}

/// Distributed-versus-centralized measures computed inside a distributed run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InRunComparison {
    /// `sup_t ||P_i - P||_F / max(1, ||P||_F)` per area.
    pub riccati_rel: Vec<f64>,
    pub sigma_rel: Vec<f64>,
    /// Sup relative deviation of `||P_i||_F^2` from `||P||_F^2` per area.
    pub riccati_sq_norm_rel: Vec<f64>,
    /// Time-averaged `E||xbar_i - x_hat||^2 / E||x_hat||^2` per area.
    pub estimate_gap: Vec<f64>,
    /// Time-averaged `E||u_dist - u_cent||^2 / max(1, E||u_cent||^2)`.
    pub command_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub controller: ControllerKind,
    pub trials: usize,
    pub base_seed: u64,
    pub cost: Option<CostSummary>,
    /// Centralized controller on the same noise realizations.
    pub paired_centralized_cost: Option<CostSummary>,
    pub convergence: Option<ConvergenceSummary>,
    pub comparison: Option<InRunComparison>,
    pub files: Vec<String>,
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

impl RunReport {
    /// Finished without error and every convergence check is within tolerance.
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.convergence.as_ref().is_none_or(|c| c.within_tolerance)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Sorted by scenario name.
    pub scenarios: Vec<RunReport>,
}

impl ExperimentReport {
    pub fn ok(&self) -> bool {
        self.scenarios.iter().all(RunReport::ok)
    }
}

struct Centralized {
    control: RiccatiSolution,
    filter: FilterSolution,
    kb: KalmanBucy,
}

fn solve_centralized(model: &LqgModel, grid: &TimeGrid) -> Result<Centralized, LqgError> {
    let control = solve_control_riccati(model, grid)?;
    let filter = solve_filter_riccati(model, grid)?;
    let kb = KalmanBucy::new(model, &filter, &control.k)?;
    Ok(Centralized {
        control,
        filter,
        kb,
    })
}

fn sq(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x * x).collect()
}

fn centralized_trial(
    model: &LqgModel,
    c: &Centralized,
    noise: &NoiseModel,
    seed: u64,
    grid: &TimeGrid,
) -> Result<(Trajectory, Vec<DVector<f64>>), SimError> {
    let mut ctl =
        CentralizedController::new(&c.kb, &c.control.k, model.x0_mean.clone()).recording();
    let traj = simulate_closed_loop(model, &mut ctl, noise, seed, grid)?;
    Ok((traj, ctl.estimates.take().unwrap_or_default()))
}

fn input_curves(traj: &Trajectory, m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| sq(&traj.u.iter().map(|u| u[i]).collect::<Vec<_>>()))
        .collect()
}

/// Runs one scenario and writes its artifacts into `dir`.
pub fn run_scenario(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    dir: &Path,
) -> Result<RunReport, ExperimentError> {
    let start = Instant::now();
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    let sys = cfg.system(scenario.rw, scenario.rv)?;
    let model = &sys.model;
    let grid = cfg.grid();
    let n = sys.n_areas;
    let len = grid.len();
    let trials = cfg.trials_for(scenario);
    let base_seed = cfg.noise.base_seed;
    let noise = NoiseModel::from_model(model, base_seed, trials);
    let mut report = RunReport {
        scenario: scenario.name.clone(),
        controller: scenario.controller,
        trials,
        base_seed,
        cost: None,
        paired_centralized_cost: None,
        convergence: None,
        comparison: None,
        files: Vec::new(),
        error: None,
        wall_clock_s: 0.0,
    };
    let emit = |name: &str, table: &Table, report: &mut RunReport| -> Result<(), ExperimentError> {
        table.write(&dir.join(name))?;
        report.files.push(name.to_string());
        Ok(())
    };
    let t = time_column(&grid);
    let mut freq = CurveSums::new([area_names("df2", n), area_names("ace2", n)].concat(), len);
    let mut commands;
    let estimates;
    let mut costs = Vec::with_capacity(trials);

    match scenario.controller {
        ControllerKind::None => {
            commands = CurveSums::new(area_names("u2", n), len);
            for_each_trial(
                trials,
                base_seed,
                |seed| {
                    let traj = simulate_closed_loop(
                        model,
                        &mut ZeroController::new(n),
                        &noise,
                        seed,
                        &grid,
                    )?;
                    let (df, ace) = area_metrics(model, &traj);
                    Ok((
                        evaluate_cost(&traj, &model.q, &model.r, &model.s, &grid),
                        [df, ace].concat(),
                        input_curves(&traj, n),
                    ))
                },
                |(j, f, u)| {
                    costs.push(j);
                    freq.add(&f);
                    commands.add(&u);
                },
            )?;
            estimates = None;
        }
        ControllerKind::Centralized => {
            let c = solve_centralized(model, &grid)?;
            let mut ric = Table::new();
            ric.push("t", t.clone());
            ric.push(
                "P_central",
                c.control
                    .p
                    .values()
                    .iter()
                    .map(|p| p.norm_squared())
                    .collect(),
            );
            emit("riccati_norms.csv", &ric, &mut report)?;
            let mut sig = Table::new();
            sig.push("t", t.clone());
            sig.push(
                "Sigma_central",
                c.filter
                    .sigma
                    .values()
                    .iter()
                    .map(|s| s.norm_squared())
                    .collect(),
            );
            emit("sigma_norms.csv", &sig, &mut report)?;
            commands = CurveSums::new(area_names("u2_central", n), len);
            let mut est = CurveSums::new(vec!["xhat2_central".into()], len);
            for_each_trial(
                trials,
                base_seed,
                |seed| {
                    let (traj, xhat) = centralized_trial(model, &c, &noise, seed, &grid)?;
                    let (df, ace) = area_metrics(model, &traj);
                    let e = vec![xhat.iter().map(|x| x.norm_squared()).collect::<Vec<_>>()];
                    Ok((
                        evaluate_cost(&traj, &model.q, &model.r, &model.s, &grid),
                        [df, ace].concat(),
                        input_curves(&traj, n),
                        e,
                    ))
                },
                |(j, f, u, e)| {
                    costs.push(j);
                    freq.add(&f);
                    commands.add(&u);
                    est.add(&e);
                },
            )?;
            estimates = Some(est);
        }
        ControllerKind::Distributed => {
            let c = solve_centralized(model, &grid)?;
            let comm = cfg.comm_graph()?;
            let guard = NeighborhoodGuard::new(&comm);
            let sol = solve_distributed(&sys, &comm, &cfg.consensus, &grid, &guard)?;
            write_distributed_offline(&sol, &c, &grid, dir, &mut report)?;
            let mut cmp = InRunComparison {
                riccati_rel: vec![0.0; n],
                sigma_rel: vec![0.0; n],
                riccati_sq_norm_rel: vec![0.0; n],
                estimate_gap: vec![0.0; n],
                command_gap: 0.0,
            };
            for i in 0..n {
                for k in 0..len {
                    let p = c.control.p.at(k);
                    let s = c.filter.sigma.at(k);
                    cmp.riccati_rel[i] = cmp.riccati_rel[i]
                        .max(frob_diff(sol.control.p[i].at(k), p) / p.norm().max(1.0));
                    cmp.sigma_rel[i] = cmp.sigma_rel[i]
                        .max(frob_diff(sol.filter.sigma[i].at(k), s) / s.norm().max(1.0));
                }
                let central: Vec<f64> = c
                    .control
                    .p
                    .values()
                    .iter()
                    .map(|p| p.norm_squared())
                    .collect();
                let scale = central.iter().cloned().fold(0.0, f64::max).max(1e-300);
                cmp.riccati_sq_norm_rel[i] = sol.control.p[i]
                    .values()
                    .iter()
                    .zip(&central)
                    .map(|(p, c)| (p.norm_squared() - c).abs() / scale)
                    .fold(0.0, f64::max);
            }
            commands = CurveSums::new(
                [area_names("u2_central", n), area_names("u2_distributed", n)].concat(),
                len,
            );
            let mut est = CurveSums::new(
                [
                    vec!["xhat2_central".to_string()],
                    area_names("xbar2_distributed", n),
                ]
                .concat(),
                len,
            );
            let mut central_costs = Vec::with_capacity(trials);
            let mut gap = (vec![0.0; n], 0.0, 0.0, 0.0);
            let mut first_stats = None;
            for_each_trial(
                trials,
                base_seed,
                |seed| {
                    let (ct, xhat) = centralized_trial(model, &c, &noise, seed, &grid)?;
                    let mut ctl = DistributedController::new(&sol, &guard)
                        .map_err(|e| SimError::Controller(e.to_string()))?
                        .recording();
                    let dt_ = simulate_closed_loop(model, &mut ctl, &noise, seed, &grid)?;
                    let stats = ctl.estimator().stats;
                    let xbar = ctl.estimates.take().unwrap_or_default();
                    let (df, ace) = area_metrics(model, &dt_);
                    let mut e = vec![xhat.iter().map(|x| x.norm_squared()).collect::<Vec<_>>()];
                    let mut est_gap = vec![0.0; n];
                    for i in 0..n {
                        e.push(xbar.iter().map(|xs| xs[i].norm_squared()).collect());
                        est_gap[i] = xbar
                            .iter()
                            .zip(&xhat)
                            .map(|(xs, x)| (&xs[i] - x).norm_squared())
                            .sum::<f64>();
                    }
                    let xhat_sq: f64 = xhat.iter().map(|x| x.norm_squared()).sum();
                    let u_gap: f64 = dt_
                        .u
                        .iter()
                        .zip(&ct.u)
                        .map(|(a, b)| (a - b).norm_squared())
                        .sum();
                    let u_sq: f64 = ct.u.iter().map(|u| u.norm_squared()).sum();
                    Ok((
                        evaluate_cost(&dt_, &model.q, &model.r, &model.s, &grid),
                        evaluate_cost(&ct, &model.q, &model.r, &model.s, &grid),
                        [df, ace].concat(),
                        [input_curves(&ct, n), input_curves(&dt_, n)].concat(),
                        e,
                        (est_gap, xhat_sq, u_gap, u_sq),
                        stats,
                    ))
                },
                |(jd, jc, f, u, e, g, stats)| {
                    costs.push(jd);
                    central_costs.push(jc);
                    freq.add(&f);
                    commands.add(&u);
                    est.add(&e);
                    for i in 0..n {
                        gap.0[i] += g.0[i];
                    }
                    gap.1 += g.1;
                    gap.2 += g.2;
                    gap.3 += g.3;
                    first_stats.get_or_insert(stats);
                },
            )?;
            let samples = (trials * len) as f64;
            cmp.estimate_gap = gap.0.iter().map(|g| g / gap.1).collect();
            cmp.command_gap = (gap.2 / samples) / (gap.3 / samples).max(1.0);
            report.paired_centralized_cost = Some(CostSummary::of(&central_costs));
            report.convergence = Some(ConvergenceSummary::of(
                &sol,
                first_stats.unwrap_or_default(),
            ));
            report.comparison = Some(cmp);
            estimates = Some(est);
        }
    }

    if let Some(est) = estimates {
        let mut table = Table::new();
        table.push("t", t.clone());
        est.into_table(trials, &mut table);
        emit("estimate_norms.csv", &table, &mut report)?;
    }
    let mut table = Table::new();
    table.push("t", t.clone());
    commands.into_table(trials, &mut table);
    emit("command_norms.csv", &table, &mut report)?;
    let mut table = Table::new();
    table.push("t", t);
    freq.into_table(trials, &mut table);
    emit("freq_metrics.csv", &table, &mut report)?;

    report.cost = Some(CostSummary::of(&costs));
    report.wall_clock_s = start.elapsed().as_secs_f64();
    artifacts::write_json(&dir.join("report.json"), &report)?;
    report.files.push("report.json".into());
    info!(
        "scenario {} done in {:.1} s",
        scenario.name, report.wall_clock_s
    );
    Ok(report)
}

fn write_distributed_offline(
    sol: &DistributedSolution,
    c: &Centralized,
    grid: &TimeGrid,
    dir: &Path,
    report: &mut RunReport,
) -> Result<(), ExperimentError> {
    let n = sol.n_areas();
    let t = time_column(grid);
    for (file, central, local, label) in [
        ("riccati_norms.csv", &c.control.p, &sol.control.p, "P"),
        (
            "sigma_norms.csv",
            &c.filter.sigma,
            &sol.filter.sigma,
            "Sigma",
        ),
    ] {
        let mut table = Table::new();
        table.push("t", t.clone());
        table.push(
            format!("{label}_central"),
            central.values().iter().map(|m| m.norm_squared()).collect(),
        );
        for (i, f) in local.iter().enumerate() {
            table.push(
                format!("{label}_area{}", i + 1),
                f.values().iter().map(|m| m.norm_squared()).collect(),
            );
        }
        table.write(&dir.join(file))?;
        report.files.push(file.into());
    }
    let mut table = Table::new();
    let mut stage_col = Vec::new();
    let mut iter_col = Vec::new();
    let mut max_col = Vec::new();
    let mut rounds_col = Vec::new();
    let mut capped_col = Vec::new();
    let mut area_cols = vec![Vec::new(); n];
    for (code, rep) in [(1.0, &sol.control.report), (2.0, &sol.filter.report)] {
        for o in &rep.outer {
            stage_col.push(code);
            iter_col.push(o.iteration as f64);
            max_col.push(o.max_deviation);
            rounds_col.push(o.inner.iter().map(|s| s.rounds).max().unwrap_or(0) as f64);
            capped_col.push(if o.inner.iter().any(|s| s.capped) {
                1.0
            } else {
                0.0
            });
            for (col, d) in area_cols.iter_mut().zip(&o.deviation) {
                col.push(*d);
            }
        }
    }
    table.push("stage", stage_col);
    table.push("iteration", iter_col);
    table.push("max_deviation", max_col);
    for (i, col) in area_cols.into_iter().enumerate() {
        table.push(format!("deviation_area{}", i + 1), col);
    }
    table.push("max_inner_rounds", rounds_col);
    table.push("inner_capped", capped_col);
    table.write(&dir.join("convergence.csv"))?;
    report.files.push("convergence.csv".into());
    Ok(())
}

/// Runs the selected scenarios (all when `only` is `None`), each in its own
/// subdirectory of `out`, and writes the merged `report.json` and a separate
/// `timing.json`. A failing scenario is recorded in its report and the
/// others still run.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    only: Option<&str>,
    out: &Path,
) -> Result<ExperimentReport, ExperimentError> {
    let selected: Vec<&Scenario> = match only {
        Some(name) => vec![cfg
            .scenario(name)
            .ok_or_else(|| ExperimentError::UnknownScenario(name.into()))?],
        None => cfg.scenarios.iter().collect(),
    };
    std::fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    let mut reports = Vec::new();
    for s in selected {
        let start = Instant::now();
        let report = run_scenario(cfg, s, &out.join(&s.name)).unwrap_or_else(|e| RunReport {
            scenario: s.name.clone(),
            controller: s.controller,
            trials: cfg.trials_for(s),
            base_seed: cfg.noise.base_seed,
            cost: None,
            paired_centralized_cost: None,
            convergence: None,
            comparison: None,
            files: Vec::new(),
            error: Some(e.to_string()),
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
        reports.push(report);
    }
    reports.sort_by(|a, b| a.scenario.cmp(&b.scenario));
    let rep = ExperimentReport {
        config: cfg.clone(),
        scenarios: reports,
    };
    artifacts::write_json(&out.join("report.json"), &rep)?;
    let timing: std::collections::BTreeMap<&str, f64> = rep
        .scenarios
        .iter()
        .map(|r| (r.scenario.as_str(), r.wall_clock_s))
        .collect();
    artifacts::write_json(&out.join("timing.json"), &timing)?;
    Ok(rep)
}

/// One `(R_w, R_v)` noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    #[serde(default)]
    pub name: Option<String>,
    pub rw: f64,
    pub rv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseList {
    /// Defaults to the config's `noise.trial_count`.
    #[serde(default)]
    pub trials: Option<usize>,
    pub cases: Vec<Case>,
}

impl CaseList {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let list: CaseList =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if list.cases.is_empty() {
            return Err(ConfigError::Invalid {
                path: "cases".into(),
                reason: "at least one case is required".into(),
            });
        }
        for (k, c) in list.cases.iter().enumerate() {
            if !(c.rw.is_finite() && c.rw >= 0.0 && c.rv.is_finite() && c.rv > 0.0) {
                return Err(ConfigError::Invalid {
                    path: format!("cases[{k}]"),
                    reason: format!("need rw >= 0 and rv > 0, got ({}, {})", c.rw, c.rv),
                });
            }
        }
        if list.trials == Some(0) {
            return Err(ConfigError::Invalid {
                path: "trials".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(list)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub rw: f64,
    pub rv: f64,
    pub trials: usize,
    pub distributed: CostSummary,
    pub centralized: CostSummary,
    /// `(J_dist - J_cent) / J_cent`.
    pub relative_gap: f64,
    /// Standard error of the paired difference, relative to `J_cent`.
    pub gap_std_error: f64,
    pub within_tolerance: bool,
}

/// Paired-seed comparison of the distributed and centralized controllers at
/// each noise level. The distributed control stage does not depend on the
/// noise and is solved once.
pub fn run_comparison(
    cfg: &ExperimentConfig,
    cases: &CaseList,
    out: &Path,
) -> Result<Vec<ComparisonRow>, ExperimentError> {
    std::fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    let trials = cases.trials.unwrap_or(cfg.noise.trial_count);
    let grid = cfg.grid();
    let comm = cfg.comm_graph()?;
    let guard = NeighborhoodGuard::new(&comm);
    let mut control = None;
    let mut rows = Vec::new();
    for (k, case) in cases.cases.iter().enumerate() {
        let sys = cfg.system(Some(case.rw), Some(case.rv))?;
        let sol = match control.take() {
            Some(ctl) => {
                solve_distributed_with_control(&sys, &comm, &cfg.consensus, &grid, &guard, ctl)?
            }
            None => solve_distributed(&sys, &comm, &cfg.consensus, &grid, &guard)?,
        };
        let row = compare_case(cfg, &sys, &sol, &comm, &guard, case, k, trials)?;
        info!(
            "case {}: J_dist {:.6} J_cent {:.6}",
            row.name, row.distributed.mean, row.centralized.mean
        );
        rows.push(row);
        control = Some(sol.control);
    }
    let mut table = Table::new();
    table.push("case", (1..=rows.len()).map(|k| k as f64).collect());
    table.push("rw", rows.iter().map(|r| r.rw).collect());
    table.push("rv", rows.iter().map(|r| r.rv).collect());
    table.push("trials", rows.iter().map(|r| r.trials as f64).collect());
    table.push(
        "J_distributed",
        rows.iter().map(|r| r.distributed.mean).collect(),
    );
    table.push(
        "se_distributed",
        rows.iter().map(|r| r.distributed.std_error).collect(),
    );
    table.push(
        "J_centralized",
        rows.iter().map(|r| r.centralized.mean).collect(),
    );
    table.push(
        "se_centralized",
        rows.iter().map(|r| r.centralized.std_error).collect(),
    );
    table.push(
        "relative_gap",
        rows.iter().map(|r| r.relative_gap).collect(),
    );
    table.push(
        "gap_std_error",
        rows.iter().map(|r| r.gap_std_error).collect(),
    );
    table.push(
        "within_tolerance",
        rows.iter()
            .map(|r| if r.within_tolerance { 1.0 } else { 0.0 })
            .collect(),
    );
    table.write(&out.join("comparison.csv"))?;
    artifacts::write_json(&out.join("comparison.json"), &rows)?;
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn compare_case(
    cfg: &ExperimentConfig,
    sys: &GlobalSystem,
    sol: &DistributedSolution,
    _comm: &CommGraph,
    guard: &NeighborhoodGuard,
    case: &Case,
    index: usize,
    trials: usize,
) -> Result<ComparisonRow, ExperimentError> {
    let model = &sys.model;
    let grid = cfg.grid();
    let c = solve_centralized(model, &grid)?;
    let noise = NoiseModel::from_model(model, cfg.noise.base_seed, trials);
    let mut jd = Vec::with_capacity(trials);
    let mut jc = Vec::with_capacity(trials);
    let mut capped = 0;
    for_each_trial(
        trials,
        cfg.noise.base_seed,
        |seed| {
            let (ct, _) = centralized_trial(model, &c, &noise, seed, &grid)?;
            let mut ctl = DistributedController::new(sol, guard)
                .map_err(|e| SimError::Controller(e.to_string()))?;
            let dt_ = simulate_closed_loop(model, &mut ctl, &noise, seed, &grid)?;
            Ok((
                evaluate_cost(&dt_, &model.q, &model.r, &model.s, &grid),
                evaluate_cost(&ct, &model.q, &model.r, &model.s, &grid),
                ctl.estimator().stats.capped_steps,
            ))
        },
        |(d, c, k)| {
            jd.push(d);
            jc.push(c);
            capped += k;
        },
    )?;
    let distributed = CostSummary::of(&jd);
    let centralized = CostSummary::of(&jc);
    let diff: Vec<f64> = jd.iter().zip(&jc).map(|(a, b)| a - b).collect();
    let (_, diff_se) = mean_and_std_error(&diff);
    Ok(ComparisonRow {
        name: case
            .name
            .clone()
            .unwrap_or_else(|| format!("case{}", index + 1)),
        rw: case.rw,
        rv: case.rv,
        trials,
        relative_gap: (distributed.mean - centralized.mean) / centralized.mean,
        gap_std_error: diff_se / centralized.mean,
        distributed,
        centralized,
        within_tolerance: sol.within_tolerance() && capped == 0,
    })
}

/// Writes `A.csv`, `B.csv`, `C.csv`, `Q.csv`, `R.csv` (headerless) for the
/// assembled global system.
pub fn dump_matrices(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    let sys = cfg.system(None, None)?;
    let m = &sys.model;
    let mut files = Vec::new();
    for (name, mat) in [
        ("A", &m.a),
        ("B", &m.b),
        ("C", &m.c),
        ("Q", &m.q),
        ("R", &m.r),
    ] {
        let path = out.join(format!("{name}.csv"));
        artifacts::write_matrix(&path, mat)?;
        files.push(path);
    }
    Ok(files)
}

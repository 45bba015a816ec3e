//! Distributed approximation of the centralized LQG solution.
//!
//! Step 1 iterates local Lyapunov-type equations whose coefficients are
//! consensus averages of per-area data (a Newton-Kleinman iteration on the
//! control Riccati equation); step 2 does the same for the filter Riccati
//! equation, forward in time; step 3 forms the local estimator coefficients
//! and runs a per-time-step consensus on local filter states.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::engine::{run_field, run_matrix_field, InnerStats, Network, Packing};
use super::privacy::{AccessMonitor, AreaView, PrivateStore};
use super::scaled::LocalScaledData;
use super::{ConsensusConfig, ConsensusError};
use crate::grid::{cubic_at, rk4_step, GridFn, Stage, StagedFn, TimeGrid};
use crate::grid_model::GlobalSystem;
use crate::linalg::{frob_diff, symmetrize};
use crate::lqg::{LqgError, DIVERGENCE_NORM};
use crate::topology::CommGraph;

/// One outer iteration of a distributed Riccati solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterRecord {
    pub iteration: usize,
    /// Per area, `max_k ||P_i^m(t_k) - P_i^{m-1}(t_k)||_F`.
    pub deviation: Vec<f64>,
    pub max_deviation: f64,
    pub inner: Vec<InnerStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub stage: String,
    pub outer: Vec<OuterRecord>,
    /// Outer deviation fell below tolerance.
    pub converged: bool,
    /// Some inner consensus hit its round cap.
    pub inner_capped: bool,
    /// The outer deviation grew at some iteration after the third.
    pub nonmonotone: bool,
}

impl ConvergenceReport {
    pub fn within_tolerance(&self) -> bool {
        self.converged && !self.inner_capped
    }

    pub fn require_converged(&self) -> Result<(), ConsensusError> {
        if self.within_tolerance() {
            return Ok(());
        }
        let last = self.outer.last();
        Err(ConsensusError::NotConverged {
            stage: if self.stage == "control" {
                "control Riccati"
            } else {
                "filter Riccati"
            },
            detail: format!(
                "{} outer iterations, last deviation {:e}, inner cap reached: {}",
                self.outer.len(),
                last.map_or(f64::NAN, |r| r.max_deviation),
                self.inner_capped
            ),
        })
    }

    fn finish_record(&mut self, rec: OuterRecord, tol: f64) -> bool {
        if rec.inner.iter().any(|s| s.capped) {
            self.inner_capped = true;
        }
        if let Some(prev) = self.outer.last() {
            if rec.iteration > 3 && rec.max_deviation > prev.max_deviation {
                warn!(
                    "{} outer iteration {}: deviation rose from {:e} to {:e}",
                    self.stage, rec.iteration, prev.max_deviation, rec.max_deviation
                );
                self.nonmonotone = true;
            }
        }
        debug!(
            "{} outer iteration {}: deviation {:e}, inner rounds {:?}",
            self.stage,
            rec.iteration,
            rec.max_deviation,
            rec.inner.iter().map(|s| s.rounds).collect::<Vec<_>>()
        );
        let done = rec.max_deviation < tol;
        self.outer.push(rec);
        if done {
            self.converged = true;
        }
        done
    }
}

#[derive(Debug, Clone)]
pub struct ControlStage {
    pub p: Vec<GridFn<DMatrix<f64>>>,
    /// Consensus estimate of `A - B R^-1 B' P`.
    pub x: Vec<GridFn<DMatrix<f64>>>,
    pub report: ConvergenceReport,
}

#[derive(Debug, Clone)]
pub struct FilterStage {
    pub sigma: Vec<GridFn<DMatrix<f64>>>,
    /// Consensus estimate of `A - Sigma C' Rv^-1 C`.
    pub w: Vec<GridFn<DMatrix<f64>>>,
    pub init: InnerStats,
    pub report: ConvergenceReport,
}

#[derive(Debug, Clone)]
pub struct HStage {
    /// Consensus estimate of `Sigma C' Rv^-1 C`.
    pub h: Vec<GridFn<DMatrix<f64>>>,
    pub stats: InnerStats,
}

fn zero_fields(n_areas: usize, points: usize, dim: usize) -> Vec<Vec<DMatrix<f64>>> {
    vec![vec![DMatrix::zeros(dim, dim); points]; n_areas]
}

fn check_inputs(
    views: &[AreaView<'_, LocalScaledData>],
    net: &Network,
) -> Result<usize, ConsensusError> {
    if views.is_empty() || views.len() != net.n() {
        return Err(ConsensusError::Shape(format!(
            "{} areas against a {}-node network",
            views.len(),
            net.n()
        )));
    }
    Ok(views[0].own().state_dim())
}

/// Real-axis reach of classical RK4, with margin.
const RK4_REACH: f64 = 2.0;

/// `S' = F S + S F' + G` forward from `s0`, coefficients sampled on the grid.
///
/// Intermediate outer iterates can make `F` far stiffer than the converged
/// one, so an interval whose coefficient norm exceeds the RK4 stability
/// reach is split into equal sub-steps, with coefficients interpolated by
/// the same cubic as the midpoints. Non-stiff intervals take one plain step.
fn lyapunov_forward(
    f: &[DMatrix<f64>],
    g: &[DMatrix<f64>],
    s0: &DMatrix<f64>,
    dt: f64,
    which: &'static str,
) -> Result<Vec<DMatrix<f64>>, LqgError> {
    let nodes = f.len();
    let fs = StagedFn::from_samples(f.to_vec());
    let gs = StagedFn::from_samples(g.to_vec());
    let rhs = |fm: &DMatrix<f64>, gm: &DMatrix<f64>, s: &DMatrix<f64>| {
        let fsm = fm * s;
        &fsm + fsm.transpose() + gm
    };
    let mut out = Vec::with_capacity(nodes);
    let mut s = s0.clone();
    symmetrize(&mut s);
    out.push(s.clone());
    for k in 0..nodes - 1 {
        // Eigenvalues of S -> FS + SF' are sums of two eigenvalues of F.
        let reach = 2.0 * spectral_bound(&f[k]).max(spectral_bound(&f[k + 1]));
        let subs = ((reach * dt / RK4_REACH).ceil() as usize).max(1);
        if subs == 1 {
            s = rk4_step(
                &s,
                dt,
                Stage::Node(k),
                Stage::Mid(k),
                Stage::Node(k + 1),
                |st, s| rhs(fs.at(st), gs.at(st), s),
            );
        } else {
            let h = dt / subs as f64;
            let at = |theta: f64| (cubic_at(f, k, theta), cubic_at(g, k, theta));
            let mut lo = (fs.node(k).clone(), gs.node(k).clone());
            for j in 0..subs {
                let mid = at((j as f64 + 0.5) / subs as f64);
                let hi = if j + 1 == subs {
                    (fs.node(k + 1).clone(), gs.node(k + 1).clone())
                } else {
                    at((j + 1) as f64 / subs as f64)
                };
                let k1 = rhs(&lo.0, &lo.1, &s);
                let k2 = rhs(&mid.0, &mid.1, &(&s + &k1 * (0.5 * h)));
                let k3 = rhs(&mid.0, &mid.1, &(&s + &k2 * (0.5 * h)));
                let k4 = rhs(&hi.0, &hi.1, &(&s + &k3 * h));
                s += (k1 + k4) * (h / 6.0) + (k2 + k3) * (h / 3.0);
                lo = hi;
            }
        }
        symmetrize(&mut s);
        let norm = s.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(LqgError::Stiffness {
                which,
                step: k + 1,
                norm,
            });
        }
        out.push(s.clone());
    }
    Ok(out)
}

/// `min(||M||_1, ||M||_inf)`, an upper bound on the spectral radius.
fn spectral_bound(m: &DMatrix<f64>) -> f64 {
    let rows = m
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let cols = m
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    rows.min(cols)
}

/// `P' = -X'P - PX - Y` backward from `P(T) = 0`: the forward equation in
/// reversed time with `F = X'`.
fn backward_lyapunov(
    x: &[DMatrix<f64>],
    y: &[DMatrix<f64>],
    dt: f64,
) -> Result<Vec<DMatrix<f64>>, LqgError> {
    let f: Vec<DMatrix<f64>> = x.iter().rev().map(|m| m.transpose()).collect();
    let g: Vec<DMatrix<f64>> = y.iter().rev().cloned().collect();
    let dim = x[0].nrows();
    let mut p = lyapunov_forward(&f, &g, &DMatrix::zeros(dim, dim), dt, "distributed control")?;
    p.reverse();
    Ok(p)
}

fn sup_deviation(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| frob_diff(x, y))
        .fold(0.0, f64::max)
}

fn to_gridfns(grid: &TimeGrid, fields: Vec<Vec<DMatrix<f64>>>) -> Vec<GridFn<DMatrix<f64>>> {
    fields
        .into_iter()
        .map(|v| GridFn::new(*grid, v).expect("sample count"))
        .collect()
}

/// Step 1: every area's approximation of the control Riccati solution.
pub fn distributed_control_riccati(
    views: &[AreaView<'_, LocalScaledData>],
    net: &Network,
    cfg: &ConsensusConfig,
    grid: &TimeGrid,
) -> Result<ControlStage, ConsensusError> {
    cfg.validate_params()?;
    let dim = check_inputs(views, net)?;
    let n = views.len();
    let points = grid.len();
    let mut prev = zero_fields(n, points, dim);
    let mut x_last = Vec::new();
    let mut report = ConvergenceReport {
        stage: "control".into(),
        outer: Vec::new(),
        converged: false,
        inner_capped: false,
        nonmonotone: false,
    };
    for m in 1..=cfg.max_outer {
        let prev_ref = &prev;
        let (x, sx) = run_matrix_field(
            net,
            cfg,
            points,
            Packing::Full {
                rows: dim,
                cols: dim,
            },
            |p, i| {
                let d = views[i].own();
                &d.a - &d.s * &prev_ref[i][p]
            },
        );
        let (y, sy) = run_matrix_field(net, cfg, points, Packing::Symmetric(dim), |p, i| {
            let d = views[i].own();
            let pi = &prev_ref[i][p];
            &d.q + pi * &d.s * pi
        });
        let next = x
            .par_iter()
            .zip(y.par_iter())
            .map(|(xi, yi)| backward_lyapunov(xi, yi, grid.dt()))
            .collect::<Result<Vec<_>, _>>()?;
        drop(y);
        let deviation: Vec<f64> = (0..n).map(|i| sup_deviation(&next[i], &prev[i])).collect();
        let rec = OuterRecord {
            iteration: m,
            max_deviation: deviation.iter().copied().fold(0.0, f64::max),
            deviation,
            inner: vec![sx, sy],
        };
        prev = next;
        x_last = x;
        if report.finish_record(rec, cfg.sigma_tol) {
            break;
        }
    }
    Ok(ControlStage {
        p: to_gridfns(grid, prev),
        x: to_gridfns(grid, x_last),
        report,
    })
}

/// Step 2: every area's approximation of the filter Riccati solution. The
/// initial covariance is itself obtained by consensus on the areas' private
/// initial-state covariances.
pub fn distributed_filter_riccati(
    views: &[AreaView<'_, LocalScaledData>],
    net: &Network,
    cfg: &ConsensusConfig,
    grid: &TimeGrid,
) -> Result<FilterStage, ConsensusError> {
    cfg.validate_params()?;
    let dim = check_inputs(views, net)?;
    let n = views.len();
    let points = grid.len();

    let (init, init_stats) = run_matrix_field(net, cfg, 1, Packing::Symmetric(dim), |_, i| {
        views[i].own().rx.clone()
    });
    let init: Vec<DMatrix<f64>> = init.into_iter().map(|mut v| v.remove(0)).collect();

    let mut prev = zero_fields(n, points, dim);
    let mut w_last = Vec::new();
    let mut report = ConvergenceReport {
        stage: "filter".into(),
        outer: Vec::new(),
        converged: false,
        inner_capped: false,
        nonmonotone: false,
    };
    for m in 1..=cfg.max_outer {
        let prev_ref = &prev;
        let (w, sw) = run_matrix_field(
            net,
            cfg,
            points,
            Packing::Full {
                rows: dim,
                cols: dim,
            },
            |p, i| {
                let d = views[i].own();
                &d.a - &prev_ref[i][p] * &d.v
            },
        );
        let (g, sg) = run_matrix_field(net, cfg, points, Packing::Symmetric(dim), |p, i| {
            let d = views[i].own();
            let si = &prev_ref[i][p];
            &d.rw + si * &d.v * si
        });
        let next = (0..n)
            .into_par_iter()
            .map(|i| lyapunov_forward(&w[i], &g[i], &init[i], grid.dt(), "distributed filter"))
            .collect::<Result<Vec<_>, _>>()?;
        drop(g);
        let deviation: Vec<f64> = (0..n).map(|i| sup_deviation(&next[i], &prev[i])).collect();
        let rec = OuterRecord {
            iteration: m,
            max_deviation: deviation.iter().copied().fold(0.0, f64::max),
            deviation,
            inner: vec![sw, sg],
        };
        prev = next;
        w_last = w;
        if report.finish_record(rec, cfg.sigma_tol) {
            break;
        }
    }
    if init_stats.capped {
        report.inner_capped = true;
    }
    Ok(FilterStage {
        sigma: to_gridfns(grid, prev),
        w: to_gridfns(grid, w_last),
        init: init_stats,
        report,
    })
}

/// Step 3a: consensus estimate of `Sigma C' Rv^-1 C` from each area's own
/// filter solution and output channel.
pub fn distributed_h(
    views: &[AreaView<'_, LocalScaledData>],
    net: &Network,
    sigma: &[GridFn<DMatrix<f64>>],
    cfg: &ConsensusConfig,
) -> Result<HStage, ConsensusError> {
    let dim = check_inputs(views, net)?;
    if sigma.len() != views.len() {
        return Err(ConsensusError::Shape(
            "one filter solution per area required".into(),
        ));
    }
    let grid = *sigma[0].grid();
    let (h, stats) = run_matrix_field(
        net,
        cfg,
        grid.len(),
        Packing::Full {
            rows: dim,
            cols: dim,
        },
        |p, i| sigma[i].at(p) * &views[i].own().v,
    );
    Ok(HStage {
        h: to_gridfns(&grid, h),
        stats,
    })
}

/// Local state-transition matrix of `X - H`.
#[derive(Debug, Clone)]
pub struct Transition {
    closed: StagedFn<DMatrix<f64>>,
    /// `Omega(t_k, 0)`.
    from_zero: Vec<DMatrix<f64>>,
    grid: TimeGrid,
}

/// Condition number beyond which the explicit-inverse form is unreliable.
pub const TRANSITION_COND_WARN: f64 = 1e10;

impl Transition {
    pub fn at(&self, k: usize) -> &DMatrix<f64> {
        &self.from_zero[k]
    }

    pub fn closed_loop(&self) -> &StagedFn<DMatrix<f64>> {
        &self.closed
    }

    /// `Omega(t_k, t_nu)` integrated from the identity at `t_nu`.
    pub fn between(&self, k: usize, nu: usize) -> DMatrix<f64> {
        assert!(nu <= k && k < self.grid.len(), "need nu <= k on the grid");
        let dim = self.closed.node(0).nrows();
        let mut m = DMatrix::identity(dim, dim);
        for j in nu..k {
            m = self.step(j, &m);
        }
        m
    }

    fn step(&self, j: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
        rk4_step(
            m,
            self.grid.dt(),
            Stage::Node(j),
            Stage::Mid(j),
            Stage::Node(j + 1),
            |s, m| self.closed.at(s) * m,
        )
    }

    /// `Omega(t_k, 0) Omega(t_nu, 0)^-1` and the condition number of the
    /// inverted factor. For cross-checking [`Transition::between`].
    pub fn literal(&self, k: usize, nu: usize) -> Option<(DMatrix<f64>, f64)> {
        let base = &self.from_zero[nu];
        let sv = base.singular_values();
        let cond = sv.max() / sv.min();
        if cond.is_nan() || cond > TRANSITION_COND_WARN {
            warn!("transition factor at grid point {nu} is ill-conditioned (cond {cond:e})");
        }
        let inv = base.clone().try_inverse()?;
        Some((&self.from_zero[k] * inv, cond))
    }
}

pub fn local_transition(
    x: &GridFn<DMatrix<f64>>,
    h: &GridFn<DMatrix<f64>>,
) -> Result<Transition, ConsensusError> {
    if !x.same_grid(h) {
        return Err(ConsensusError::Shape(
            "X and H are on different grids".into(),
        ));
    }
    let grid = *x.grid();
    let closed: Vec<DMatrix<f64>> = x
        .values()
        .iter()
        .zip(h.values())
        .map(|(x, h)| x - h)
        .collect();
    let dim = closed[0].nrows();
    let mut t = Transition {
        closed: StagedFn::from_samples(closed),
        from_zero: Vec::with_capacity(grid.len()),
        grid,
    };
    let mut m = DMatrix::identity(dim, dim);
    t.from_zero.push(m.clone());
    for j in 0..grid.steps() {
        m = t.step(j, &m);
        t.from_zero.push(m.clone());
    }
    Ok(t)
}

/// Everything the areas computed offline, before any measurement arrives.
#[derive(Debug, Clone)]
pub struct DistributedSolution {
    pub data: PrivateStore<LocalScaledData>,
    pub graph: CommGraph,
    pub config: ConsensusConfig,
    pub grid: TimeGrid,
    pub control: ControlStage,
    pub filter: FilterStage,
    pub h: HStage,
    pub transitions: Vec<Transition>,
}

impl DistributedSolution {
    pub fn within_tolerance(&self) -> bool {
        self.control.report.within_tolerance()
            && self.filter.report.within_tolerance()
            && !self.h.stats.capped
    }

    pub fn n_areas(&self) -> usize {
        self.data.n()
    }
}

/// Steps 1-3 (offline part) for a whole grid.
pub fn solve_distributed(
    sys: &GlobalSystem,
    graph: &CommGraph,
    cfg: &ConsensusConfig,
    grid: &TimeGrid,
    monitor: &dyn AccessMonitor,
) -> Result<DistributedSolution, ConsensusError> {
    solve_distributed_inner(sys, graph, cfg, grid, monitor, None)
}

/// Like [`solve_distributed`] but reuses a step-1 result. Only valid when
/// the plant and cost (A, B, Q, R, S) match the system `control` was
/// computed for; noise statistics may differ.
pub fn solve_distributed_with_control(
    sys: &GlobalSystem,
    graph: &CommGraph,
    cfg: &ConsensusConfig,
    grid: &TimeGrid,
    monitor: &dyn AccessMonitor,
    control: ControlStage,
) -> Result<DistributedSolution, ConsensusError> {
    solve_distributed_inner(sys, graph, cfg, grid, monitor, Some(control))
}

fn solve_distributed_inner(
    sys: &GlobalSystem,
    graph: &CommGraph,
    cfg: &ConsensusConfig,
    grid: &TimeGrid,
    monitor: &dyn AccessMonitor,
    control: Option<ControlStage>,
) -> Result<DistributedSolution, ConsensusError> {
    if graph.n() != sys.n_areas {
        return Err(ConsensusError::Shape(format!(
            "communication graph has {} nodes for {} areas",
            graph.n(),
            sys.n_areas
        )));
    }
    let data = PrivateStore::partition(LocalScaledData::from_system(sys));
    let views = data.views(monitor);
    let net = Network::connect(&views, graph)?;
    let control = match control {
        Some(c) if c.p.len() == sys.n_areas && c.p[0].grid() == grid => c,
        Some(_) => {
            return Err(ConsensusError::Shape(
                "reused control stage does not match the system or grid".into(),
            ))
        }
        None => distributed_control_riccati(&views, &net, cfg, grid)?,
    };
    let filter = distributed_filter_riccati(&views, &net, cfg, grid)?;
    let h = distributed_h(&views, &net, &filter.sigma, cfg)?;
    let transitions = control
        .x
        .iter()
        .zip(&h.h)
        .map(|(x, h)| local_transition(x, h))
        .collect::<Result<Vec<_>, _>>()?;
    drop(views);
    Ok(DistributedSolution {
        data,
        graph: graph.clone(),
        config: *cfg,
        grid: *grid,
        control,
        filter,
        h,
        transitions,
    })
}

/// Summary of the per-time-step estimate consensus.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EstimateStats {
    pub steps: usize,
    pub total_rounds: usize,
    pub max_rounds: usize,
    pub capped_steps: usize,
}

/// Online distributed estimator: each area propagates a local filter state
/// driven only by its own measurement, and at every grid time the areas run
/// consensus on those states.
pub struct DistributedEstimator<'a> {
    sol: &'a DistributedSolution,
    monitor: &'a dyn AccessMonitor,
    net: Network,
    /// `Sigma_i(t) N C_i' R_vi^-1` per area.
    input: Vec<StagedFn<DVector<f64>>>,
    zeta: Vec<DVector<f64>>,
    pub stats: EstimateStats,
}

impl<'a> DistributedEstimator<'a> {
    pub fn new(
        sol: &'a DistributedSolution,
        monitor: &'a dyn AccessMonitor,
    ) -> Result<Self, ConsensusError> {
        let views = sol.data.views(monitor);
        let net = Network::connect(&views, &sol.graph)?;
        let input = views
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let g = v.own().measurement_gain();
                StagedFn::from_samples(
                    sol.filter.sigma[i]
                        .values()
                        .iter()
                        .map(|s| s * &g)
                        .collect(),
                )
            })
            .collect();
        let zeta = views.iter().map(|v| v.own().x0.clone()).collect();
        Ok(Self {
            sol,
            monitor,
            net,
            input,
            zeta,
            stats: EstimateStats::default(),
        })
    }

    /// Local filter states at the current grid time.
    pub fn local_states(&self) -> &[DVector<f64>] {
        &self.zeta
    }

    /// Consensus on the local filter states: each area's estimate of the
    /// global state at the current time.
    pub fn estimate(&mut self) -> Vec<DVector<f64>> {
        let n = self.zeta.len();
        let dim = self.zeta[0].len();
        let mut targets = Vec::with_capacity(n * dim);
        for z in &self.zeta {
            targets.extend_from_slice(z.as_slice());
        }
        let res = run_field(&self.net, &targets, None, 1, dim, &self.sol.config);
        self.stats.steps += 1;
        self.stats.total_rounds += res.stats.rounds;
        self.stats.max_rounds = self.stats.max_rounds.max(res.stats.rounds);
        if res.stats.capped {
            self.stats.capped_steps += 1;
        }
        (0..n)
            .map(|i| DVector::from_column_slice(res.slot(0, i)))
            .collect()
    }

    /// Each area's command from its own estimate.
    pub fn commands(&self, k: usize, estimates: &[DVector<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            estimates.len(),
            estimates.iter().enumerate().map(|(i, x)| {
                let d = self.sol.data.view(i, self.monitor).own();
                d.command(self.sol.control.p[i].at(k), x)
            }),
        )
    }

    /// Propagates every local state from `t_k` to `t_{k+1}`; `y` holds the
    /// areas' measurements at `t_k` (area `i` uses only `y[i]`).
    pub fn advance(&mut self, k: usize, y: &DVector<f64>) {
        let dt = self.sol.grid.dt();
        let sol = self.sol;
        let monitor = self.monitor;
        let input = &self.input;
        self.zeta.par_iter_mut().enumerate().for_each(|(i, z)| {
            let d = sol.data.view(i, monitor).own();
            let closed = sol.transitions[i].closed_loop();
            let innov = y[i] - d.v_mean;
            *z = rk4_step(
                z,
                dt,
                Stage::Node(k),
                Stage::Mid(k),
                Stage::Node(k + 1),
                |s, z| {
                    let mut out = closed.at(s) * z;
                    out.axpy(innov, input[i].at(s), 1.0);
                    out += &d.w_mean;
                    out
                },
            );
        });
    }
}

/// One estimate trajectory per area.
pub type AreaTrajectories = Vec<GridFn<DVector<f64>>>;

/// Batch form of the distributed estimator over a recorded measurement
/// stream. Returns each area's estimate trajectory.
pub fn distributed_state_estimate(
    sol: &DistributedSolution,
    monitor: &dyn AccessMonitor,
    y: &GridFn<DVector<f64>>,
) -> Result<(AreaTrajectories, EstimateStats), ConsensusError> {
    if *y.grid() != sol.grid {
        return Err(ConsensusError::Lqg(LqgError::GridMismatch(
            "measurement stream is not on the solution grid".into(),
        )));
    }
    let mut est = DistributedEstimator::new(sol, monitor)?;
    let n = sol.n_areas();
    let mut out: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(y.len()); n];
    for k in 0..y.len() {
        for (i, x) in est.estimate().into_iter().enumerate() {
            out[i].push(x);
        }
        if k + 1 < y.len() {
            est.advance(k, y.at(k));
        }
    }
    let stats = est.stats;
    Ok((
        out.into_iter()
            .map(|v| GridFn::new(sol.grid, v).expect("sample count"))
            .collect(),
        stats,
    ))
}

/// `u_i(t_k) = -R_i^-1 b_i' P_i(t_k) xbar_i(t_k)`.
pub fn distributed_command(
    view: &AreaView<'_, LocalScaledData>,
    p: &GridFn<DMatrix<f64>>,
    xbar: &GridFn<DVector<f64>>,
) -> Result<GridFn<f64>, ConsensusError> {
    if !p.same_grid(xbar) {
        return Err(ConsensusError::Lqg(LqgError::GridMismatch(
            "Riccati solution and estimate are on different grids".into(),
        )));
    }
    let d = view.own();
    Ok(GridFn::from_fn(*p.grid(), |k| {
        d.command(p.at(k), xbar.at(k))
    }))
}

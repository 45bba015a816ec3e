//! Batched consensus over a whole time grid.
//!
//! A field holds one value per (grid point, area): the targets at different
//! grid points are independent, so a single round updates every point. The
//! stopping rule is global: rounds continue until the largest per-area
//! Frobenius increment over all grid points drops below `sigma_tol`, or the
//! round cap is reached.
//!
//! Internally the grid is cut into small blocks of points that are advanced
//! many rounds at a time while they sit in cache. Because a block that has
//! dropped below tolerance on its own can be resumed, the result is the same
//! as advancing every point in lock-step.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::privacy::{AreaView, PrivacyError};
use super::ConsensusConfig;
use crate::topology::CommGraph;

/// Communication links that each area has been allowed to open.
#[derive(Debug, Clone)]
pub struct Network {
    links: Vec<Vec<(usize, f64)>>,
}

impl Network {
    /// Opens a channel from every area to each of its neighbours in `graph`.
    pub fn connect<T>(views: &[AreaView<'_, T>], graph: &CommGraph) -> Result<Self, PrivacyError> {
        assert_eq!(views.len(), graph.n(), "one view per graph node");
        let mut links = Vec::with_capacity(views.len());
        for v in views {
            let i = v.area();
            let mut row = Vec::new();
            for &j in graph.neighbors(i) {
                v.open_channel(j)?;
                row.push((j, graph.weight(i, j)));
            }
            links.push(row);
        }
        Ok(Self { links })
    }

    pub fn n(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self, i: usize) -> &[(usize, f64)] {
        &self.links[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerStats {
    pub rounds: usize,
    /// Largest per-area increment in the last round.
    pub final_increment: f64,
    pub capped: bool,
}

/// Values after consensus, laid out `[point][area][entry]`.
#[derive(Debug, Clone)]
pub struct FieldResult {
    pub values: Vec<f64>,
    pub points: usize,
    pub dim: usize,
    pub n_areas: usize,
    pub stats: InnerStats,
}

impl FieldResult {
    pub fn slot(&self, point: usize, area: usize) -> &[f64] {
        let o = (point * self.n_areas + area) * self.dim;
        &self.values[o..o + self.dim]
    }
}

/// How a matrix is flattened into field entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Packing {
    Full {
        rows: usize,
        cols: usize,
    },
    /// Upper triangle with off-diagonal entries scaled by `sqrt 2`, so the
    /// Euclidean norm of the packed vector is the Frobenius norm.
    Symmetric(usize),
}

impl Packing {
    pub fn dim(&self) -> usize {
        match *self {
            Packing::Full { rows, cols } => rows * cols,
            Packing::Symmetric(n) => n * (n + 1) / 2,
        }
    }

    pub fn pack(&self, m: &DMatrix<f64>, out: &mut [f64]) {
        match *self {
            Packing::Full { .. } => out.copy_from_slice(m.as_slice()),
            Packing::Symmetric(n) => {
                let mut k = 0;
                for c in 0..n {
                    for r in 0..=c {
                        out[k] = if r == c {
                            m[(r, c)]
                        } else {
                            0.5 * (m[(r, c)] + m[(c, r)]) * std::f64::consts::SQRT_2
                        };
                        k += 1;
                    }
                }
            }
        }
    }

    pub fn unpack(&self, s: &[f64]) -> DMatrix<f64> {
        match *self {
            Packing::Full { rows, cols } => DMatrix::from_column_slice(rows, cols, s),
            Packing::Symmetric(n) => {
                let mut m = DMatrix::zeros(n, n);
                let mut k = 0;
                for c in 0..n {
                    for r in 0..=c {
                        let v = if r == c {
                            s[k]
                        } else {
                            s[k] * std::f64::consts::FRAC_1_SQRT_2
                        };
                        m[(r, c)] = v;
                        m[(c, r)] = v;
                        k += 1;
                    }
                }
                m
            }
        }
    }
}

const BLOCK_BYTES: usize = 192 * 1024;

struct Block {
    start: usize,
    points: usize,
    cur: Vec<f64>,
    next: Vec<f64>,
    round: usize,
    /// Max increment of each completed round.
    incs: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn round_kernel(
    net: &Network,
    cur: &[f64],
    next: &mut [f64],
    targets: &[f64],
    points: usize,
    dim: usize,
    alpha: f64,
    inv_delta: f64,
) -> f64 {
    let n = net.n();
    let mut worst = 0.0f64;
    for p in 0..points {
        let base = p * n * dim;
        for i in 0..n {
            let links = net.links(i);
            let wsum: f64 = links.iter().map(|&(_, w)| w).sum();
            let c0 = 1.0 - alpha - wsum * inv_delta;
            let o = base + i * dim;
            let vi = &cur[o..o + dim];
            let ti = &targets[o..o + dim];
            let out = &mut next[o..o + dim];
            for e in 0..dim {
                out[e] = c0 * vi[e] + alpha * ti[e];
            }
            for &(j, w) in links {
                let coef = w * inv_delta;
                let oj = base + j * dim;
                let vj = &cur[oj..oj + dim];
                for e in 0..dim {
                    out[e] += coef * vj[e];
                }
            }
            let mut inc = 0.0;
            for e in 0..dim {
                let d = out[e] - vi[e];
                inc += d * d;
            }
            worst = worst.max(inc);
        }
    }
    worst.sqrt()
}

impl Block {
    /// Runs rounds until `to_round`, or until this block alone is below
    /// `tol` when `early` is set.
    fn advance(
        &mut self,
        net: &Network,
        targets: &[f64],
        dim: usize,
        cfg: &ConsensusConfig,
        to_round: usize,
        early: bool,
    ) {
        let n = net.n();
        let span = self.start * n * dim..(self.start + self.points) * n * dim;
        let tgt = &targets[span];
        let inv_delta = 1.0 / cfg.delta;
        while self.round < to_round {
            if early && self.incs.last().is_some_and(|&d| d < cfg.sigma_tol) {
                break;
            }
            let r = self.round + 1;
            let inc = round_kernel(
                net,
                &self.cur,
                &mut self.next,
                tgt,
                self.points,
                dim,
                cfg.step_sizes.alpha(r),
                inv_delta,
            );
            std::mem::swap(&mut self.cur, &mut self.next);
            self.incs.push(inc);
            self.round = r;
        }
    }
}

/// Runs consensus on fixed targets. `init` defaults to zero.
pub fn run_field(
    net: &Network,
    targets: &[f64],
    init: Option<&[f64]>,
    points: usize,
    dim: usize,
    cfg: &ConsensusConfig,
) -> FieldResult {
    let n = net.n();
    assert_eq!(targets.len(), points * n * dim, "target field size");
    let zeros;
    let start = match init {
        Some(v) => v,
        None => {
            zeros = vec![0.0; targets.len()];
            &zeros
        }
    };
    assert_eq!(start.len(), targets.len(), "initial field size");
    let per_point = (n * dim * 3 * 8).max(1);
    let block_pts = (BLOCK_BYTES / per_point).clamp(1, points.max(1));
    let mut blocks: Vec<Block> = (0..points)
        .step_by(block_pts)
        .map(|s| {
            let pts = block_pts.min(points - s);
            let span = s * n * dim..(s + pts) * n * dim;
            Block {
                start: s,
                points: pts,
                cur: start[span].to_vec(),
                next: vec![0.0; pts * n * dim],
                round: 0,
                incs: Vec::new(),
            }
        })
        .collect();
    let cap = cfg.max_inner;
    blocks
        .par_iter_mut()
        .for_each(|b| b.advance(net, targets, dim, cfg, cap, true));
    let mut r = blocks.iter().map(|b| b.round).max().unwrap_or(0);
    let stats = loop {
        blocks
            .par_iter_mut()
            .for_each(|b| b.advance(net, targets, dim, cfg, r, false));
        let inc = blocks
            .iter()
            .map(|b| b.incs.get(r.wrapping_sub(1)).copied().unwrap_or(0.0))
            .fold(0.0, f64::max);
        if inc < cfg.sigma_tol || r >= cap {
            break InnerStats {
                rounds: r,
                final_increment: inc,
                capped: inc >= cfg.sigma_tol,
            };
        }
        r += 1;
    };
    let mut values = Vec::with_capacity(targets.len());
    for b in blocks {
        values.extend_from_slice(&b.cur);
    }
    FieldResult {
        values,
        points,
        dim,
        n_areas: n,
        stats,
    }
}

/// Matrix field: `target(point, area)` is evaluated for every pair (in
/// parallel over points) and each area's consensus limit is returned as one
/// matrix per point.
pub fn run_matrix_field<F>(
    net: &Network,
    cfg: &ConsensusConfig,
    points: usize,
    packing: Packing,
    target: F,
) -> (Vec<Vec<DMatrix<f64>>>, InnerStats)
where
    F: Fn(usize, usize) -> DMatrix<f64> + Sync,
{
    let n = net.n();
    let dim = packing.dim();
    let mut targets = vec![0.0; points * n * dim];
    targets
        .par_chunks_mut(n * dim)
        .enumerate()
        .for_each(|(p, chunk)| {
            for i in 0..n {
                packing.pack(&target(p, i), &mut chunk[i * dim..(i + 1) * dim]);
            }
        });
    let res = run_field(net, &targets, None, points, dim, cfg);
    drop(targets);
    let per_area = (0..n)
        .map(|i| {
            (0..points)
                .map(|p| packing.unpack(res.slot(p, i)))
                .collect()
        })
        .collect();
    (per_area, res.stats)
}

#[cfg(test)]
mod tests {
    use super::super::privacy::{NeighborhoodGuard, PrivateStore};
    use super::super::{consensus_round, StepSchedule};
    use super::*;

    fn network(g: &CommGraph) -> Network {
        let store = PrivateStore::partition(vec![(); g.n()]);
        let guard = NeighborhoodGuard::new(g);
        Network::connect(&store.views(&guard), g).unwrap()
    }

    #[test]
    fn packing_round_trip_and_norm() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let p = Packing::Symmetric(3);
        let mut s = vec![0.0; p.dim()];
        p.pack(&m, &mut s);
        let back = p.unpack(&s);
        assert!((&back - &m).norm() < 1e-14);
        let norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - m.norm()).abs() < 1e-12);
    }

    #[test]
    fn matches_round_by_round_reference() {
        let g = CommGraph::ring(5);
        let net = network(&g);
        let cfg = ConsensusConfig {
            max_inner: 37,
            sigma_tol: 1e-300,
            ..Default::default()
        };
        let points = 50;
        let targets_m: Vec<Vec<DMatrix<f64>>> = (0..points)
            .map(|p| {
                (0..5)
                    .map(|i| {
                        DMatrix::from_fn(2, 2, |r, c| {
                            ((p * 7 + i * 3 + r * 2 + c) % 11) as f64 - 5.0
                        })
                    })
                    .collect()
            })
            .collect();
        let (res, stats) = run_matrix_field(
            &net,
            &cfg,
            points,
            Packing::Full { rows: 2, cols: 2 },
            |p, i| targets_m[p][i].clone(),
        );
        assert_eq!(stats.rounds, 37);
        assert!(stats.capped);
        let sched = StepSchedule::default();
        for p in 0..points {
            let mut v = vec![DMatrix::zeros(2, 2); 5];
            for r in 1..=37 {
                v = consensus_round(&v, &targets_m[p], sched.alpha(r), &g, 10.0).unwrap();
            }
            for i in 0..5 {
                assert!((&res[i][p] - &v[i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn global_stop_is_first_round_below_tolerance() {
        // Points with very different spreads stop at their own rounds in
        // isolation; the field must run until the slowest point qualifies,
        // and not further.
        let g = CommGraph::ring(4);
        let net = network(&g);
        let cfg = ConsensusConfig {
            sigma_tol: 1e-4,
            max_inner: 100_000,
            ..Default::default()
        };
        let points = 40_000;
        let targets: Vec<f64> = (0..points)
            .flat_map(|p| {
                let scale = if p == 17_000 {
                    50.0
                } else {
                    1e-3 * (p % 7) as f64
                };
                (0..4).map(move |i| scale * i as f64)
            })
            .collect();
        let res = run_field(&net, &targets, None, points, 1, &cfg);
        assert!(!res.stats.capped);
        // Reference: lock-step on the slowest point; others are faster.
        let sched = StepSchedule::default();
        let slow: Vec<DMatrix<f64>> = (0..4)
            .map(|i| DMatrix::from_element(1, 1, 50.0 * i as f64))
            .collect();
        let mut v = vec![DMatrix::zeros(1, 1); 4];
        let mut first = 0;
        for r in 1..100_000 {
            let next = consensus_round(&v, &slow, sched.alpha(r), &g, 10.0).unwrap();
            let inc = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            v = next;
            if inc < 1e-4 {
                first = r;
                break;
            }
        }
        assert_eq!(res.stats.rounds, first);
        assert!((res.slot(17_000, 0)[0] - v[0][(0, 0)]).abs() < 1e-9);
    }
}

//! Communication and tie-line graphs.
//!
//! Areas are numbered `0..n` internally; configuration files use 1-based ids
//! and convert at the boundary.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("adjacency must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("weights not symmetric between nodes {i} and {j}: {wij} vs {wji}")]
    Asymmetric {
        i: usize,
        j: usize,
        wij: f64,
        wji: f64,
    },
    #[error("negative or non-finite weight {w} on edge ({i}, {j})")]
    BadWeight { i: usize, j: usize, w: f64 },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("node {node} out of range for a graph on {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
}

fn validate_adjacency(adj: &DMatrix<f64>) -> Result<(), GraphError> {
    if !adj.is_square() {
        return Err(GraphError::NotSquare {
            rows: adj.nrows(),
            cols: adj.ncols(),
        });
    }
    let n = adj.nrows();
    for i in 0..n {
        if adj[(i, i)] != 0.0 {
            return Err(GraphError::SelfLoop(i));
        }
        for j in 0..n {
            let w = adj[(i, j)];
            if !w.is_finite() || w < 0.0 {
                return Err(GraphError::BadWeight { i, j, w });
            }
            if j > i && adj[(i, j)] != adj[(j, i)] {
                return Err(GraphError::Asymmetric {
                    i,
                    j,
                    wij: adj[(i, j)],
                    wji: adj[(j, i)],
                });
            }
        }
    }
    Ok(())
}

fn adjacency_from_edges(
    n: usize,
    edges: &[(usize, usize, f64)],
) -> Result<DMatrix<f64>, GraphError> {
    let mut adj = DMatrix::zeros(n, n);
    for &(i, j, w) in edges {
        for node in [i, j] {
            if node >= n {
                return Err(GraphError::NodeOutOfRange { node, n });
            }
        }
        if i == j {
            return Err(GraphError::SelfLoop(i));
        }
        if !w.is_finite() || w <= 0.0 {
            return Err(GraphError::BadWeight { i, j, w });
        }
        adj[(i, j)] = w;
        adj[(j, i)] = w;
    }
    Ok(adj)
}

fn ring_edges(n: usize, w: f64) -> Vec<(usize, usize, f64)> {
    match n {
        0 | 1 => vec![],
        2 => vec![(0, 1, w)],
        _ => (0..n).map(|i| (i, (i + 1) % n, w)).collect(),
    }
}

/// Graph Laplacian: `l_ii = sum_j a_ij`, `l_ij = -a_ij`.
pub fn laplacian(adjacency: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphError> {
    validate_adjacency(adjacency)?;
    let n = adjacency.nrows();
    let mut l = -adjacency.clone();
    for i in 0..n {
        l[(i, i)] = adjacency.row(i).sum();
    }
    Ok(l)
}

/// `N_i = { j : a_ij > 0 }`, ascending.
pub fn neighbor_sets(adjacency: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = adjacency.nrows();
    (0..n)
        .map(|i| (0..n).filter(|&j| adjacency[(i, j)] > 0.0).collect())
        .collect()
}

/// Outcome of [`check_mixing`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixingDiagnostic {
    pub ok: bool,
    /// Spectral radius of `I - L/delta - 11'/N`.
    pub spectral_radius: f64,
    pub connected: bool,
    pub algebraic_connectivity: f64,
    pub lambda_max: f64,
}

/// Checks that consensus with gain `delta` contracts disagreement:
/// `rho(I - L/delta - 11'/N) < 1` on a connected graph.
pub fn check_mixing(laplacian: &DMatrix<f64>, delta: f64) -> MixingDiagnostic {
    let n = laplacian.nrows();
    let ev = linalg::sym_eigenvalues(laplacian);
    let algebraic_connectivity = if n > 1 { ev[1] } else { 0.0 };
    let lambda_max = ev.last().copied().unwrap_or(0.0);
    let connected = n <= 1 || algebraic_connectivity > 1e-10;
    let mut m = DMatrix::<f64>::identity(n, n) - laplacian / delta;
    m.add_scalar_mut(-1.0 / n as f64);
    let spectral_radius = linalg::sym_eigenvalues(&m)
        .into_iter()
        .map(f64::abs)
        .fold(0.0, f64::max);
    MixingDiagnostic {
        ok: delta > 0.0 && connected && spectral_radius < 1.0,
        spectral_radius,
        connected,
        algebraic_connectivity,
        lambda_max,
    }
}

/// Undirected, weighted communication graph between areas.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    adjacency: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn from_adjacency(adjacency: DMatrix<f64>) -> Result<Self, GraphError> {
        let laplacian = laplacian(&adjacency)?;
        let neighbors = neighbor_sets(&adjacency);
        Ok(Self {
            adjacency,
            laplacian,
            neighbors,
        })
    }

    /// Edges as 0-based `(i, j, weight)`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        Self::from_adjacency(adjacency_from_edges(n, edges)?)
    }

    pub fn ring(n: usize) -> Self {
        Self::from_edges(n, &ring_edges(n, 1.0)).expect("ring is valid")
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j, 1.0)))
            .collect();
        Self::from_edges(n, &edges).expect("complete graph is valid")
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
        Self::from_edges(n, &edges).expect("path is valid")
    }

    pub fn edgeless(n: usize) -> Self {
        Self::from_edges(n, &[]).expect("edgeless graph is valid")
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    pub fn is_neighbor(&self, i: usize, j: usize) -> bool {
        self.adjacency[(i, j)] > 0.0
    }

    pub fn check_mixing(&self, delta: f64) -> MixingDiagnostic {
        check_mixing(&self.laplacian, delta)
    }

    /// 0-based edge list with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.adjacency[(i, j)] > 0.0)
            .map(|(i, j)| (i, j, self.adjacency[(i, j)]))
            .collect()
    }
}

/// Physical tie-line graph; weights are the coefficients `T_ij` (p.u./Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct PhysGraph {
    tie: DMatrix<f64>,
}

impl PhysGraph {
    pub fn from_matrix(tie: DMatrix<f64>) -> Result<Self, GraphError> {
        validate_adjacency(&tie)?;
        Ok(Self { tie })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        Ok(Self {
            tie: adjacency_from_edges(n, edges)?,
        })
    }

    pub fn ring(n: usize, coefficient: f64) -> Self {
        Self::from_edges(n, &ring_edges(n, coefficient)).expect("ring is valid")
    }

    pub fn none(n: usize) -> Self {
        Self {
            tie: DMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.tie.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.tie
    }

    /// Tie coefficients of area `i`'s physical neighbours.
    pub fn tie_row(&self, i: usize) -> BTreeMap<usize, f64> {
        (0..self.n())
            .filter(|&j| self.tie[(i, j)] > 0.0)
            .map(|j| (j, self.tie[(i, j)]))
            .collect()
    }

    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.tie[(i, j)] > 0.0)
            .map(|(i, j)| (i, j, self.tie[(i, j)]))
            .collect()
    }
}

//! State-space model of an interconnected multi-area grid.
//!
//! Each area carries four states `[df, dPm, dPv, dPtie]` (frequency
//! deviation, mechanical power, governor valve position, tie-line power),
//! one input (the power regulation command) and one output (the area
//! control error `beta * df + dPtie`).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix4, RowVector4, Vector4};
use thiserror::Error;

use crate::linalg;
use crate::topology::{GraphError, PhysGraph};

/// States per area.
pub const AREA_STATES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("area {area}: invalid `{field}`: {reason}")]
    InvalidParameter {
        area: usize,
        field: &'static str,
        reason: String,
    },
    #[error("topology: {0}")]
    Topology(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// How an area's private state weight enters the global cost.
#[derive(Debug, Clone, PartialEq)]
pub enum CostWeight {
    /// `q * I` over the whole global state.
    Scalar(f64),
    /// A 4x4 block on the area's own states, scaled by `N` so the average
    /// of the embedded weights is block-diagonal in the original blocks.
    Block(Matrix4<f64>),
}

/// One control area's private parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaParams {
    /// Generator rotational inertia `J`.
    pub inertia: f64,
    /// Damping coefficient `G` (MW/Hz).
    pub damping: f64,
    /// Turbine time constant `T_t` (s).
    pub turbine_tc: f64,
    /// Governor time constant `T_g` (s).
    pub governor_tc: f64,
    /// Governor coefficient `W`.
    pub governor_coeff: f64,
    /// Frequency bias in the area control error.
    pub beta: f64,
    pub q_weight: CostWeight,
    pub r_weight: f64,
    pub rx: Matrix4<f64>,
    pub rw: Matrix4<f64>,
    pub rv: f64,
    pub w_mean: Vector4<f64>,
    pub v_mean: f64,
    pub x0_mean: Vector4<f64>,
}

impl AreaParams {
    /// An area with the given machine constants and the benchmark defaults for
    /// everything else: `beta = 1/W + G`, unit weights, `0.01 I` covariances,
    /// zero noise means and an initial frequency deviation of 0.1.
    pub fn with_defaults(
        inertia: f64,
        damping: f64,
        turbine_tc: f64,
        governor_tc: f64,
        governor_coeff: f64,
    ) -> Self {
        Self {
            inertia,
            damping,
            turbine_tc,
            governor_tc,
            governor_coeff,
            beta: default_beta(governor_coeff, damping),
            q_weight: CostWeight::Scalar(1.0),
            r_weight: 1.0,
            rx: Matrix4::identity() * 0.01,
            rw: Matrix4::identity() * 0.01,
            rv: 0.01,
            w_mean: Vector4::zeros(),
            v_mean: 0.0,
            x0_mean: Vector4::new(0.1, 0.0, 0.0, 0.0),
        }
    }

    pub fn validate(&self, area: usize) -> Result<(), ModelError> {
        let positive = [
            ("inertia", self.inertia),
            ("turbine_tc", self.turbine_tc),
            ("governor_tc", self.governor_tc),
            ("governor_coeff", self.governor_coeff),
            ("r_weight", self.r_weight),
            ("rv", self.rv),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidParameter {
                    area,
                    field,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        for (field, v) in [
            ("damping", self.damping),
            ("beta", self.beta),
            ("v_mean", self.v_mean),
        ] {
            if !v.is_finite() {
                return Err(ModelError::InvalidParameter {
                    area,
                    field,
                    reason: format!("must be finite, got {v}"),
                });
            }
        }
        let q = match &self.q_weight {
            CostWeight::Scalar(q) => Matrix4::identity() * *q,
            CostWeight::Block(m) => *m,
        };
        for (field, m) in [("q_weight", q), ("rx", self.rx), ("rw", self.rw)] {
            let d = DMatrix::from_column_slice(4, 4, m.as_slice());
            if !linalg::is_symmetric_psd(&d, 1e-10) {
                return Err(ModelError::InvalidParameter {
                    area,
                    field,
                    reason: "must be symmetric positive semidefinite".into(),
                });
            }
        }
        Ok(())
    }
}

/// Default frequency bias `1/W + G`.
pub fn default_beta(governor_coeff: f64, damping: f64) -> f64 {
    1.0 / governor_coeff + damping
}

/// The six-area benchmark grid: machine constants per area plus the private
/// cost multipliers `1.4, 1.2, 0.8, 0.6, 1.1, 0.9` (average 1).
pub fn six_area_benchmark() -> Vec<AreaParams> {
    const J: [f64; 6] = [10.0, 11.0, 10.0, 12.0, 10.0, 11.0];
    const G: [f64; 6] = [1.2, 1.1, 1.0, 1.1, 1.2, 1.0];
    const TT: [f64; 6] = [0.31, 0.30, 0.32, 0.30, 0.30, 0.34];
    const TG: [f64; 6] = [0.08, 0.085, 0.075, 0.08, 0.082, 0.083];
    const W: [f64; 6] = [2.4, 2.45, 2.5, 2.3, 2.35, 2.4];
    const Q: [f64; 6] = [1.4, 1.2, 0.8, 0.6, 1.1, 0.9];
    (0..6)
        .map(|i| {
            let mut a = AreaParams::with_defaults(J[i], G[i], TT[i], TG[i], W[i]);
            a.q_weight = CostWeight::Scalar(Q[i]);
            a
        })
        .collect()
}

/// Per-area blocks: self dynamics, couplings to physical neighbours, input
/// and output.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBlocks {
    pub a_self: Matrix4<f64>,
    pub a_coupling: BTreeMap<usize, Matrix4<f64>>,
    pub b: Vector4<f64>,
    pub c: RowVector4<f64>,
}

pub fn build_local_matrices(
    params: &AreaParams,
    tie_row: &BTreeMap<usize, f64>,
) -> Result<LocalBlocks, ModelError> {
    build_local_for(params, tie_row, 0)
}

fn build_local_for(
    p: &AreaParams,
    tie_row: &BTreeMap<usize, f64>,
    area: usize,
) -> Result<LocalBlocks, ModelError> {
    p.validate(area)?;
    let mut tie_sum = 0.0;
    let mut a_coupling = BTreeMap::new();
    for (&j, &t) in tie_row {
        if !(t.is_finite() && t > 0.0) {
            return Err(ModelError::InvalidParameter {
                area,
                field: "tie coefficient",
                reason: format!("coefficient to area {j} must be positive, got {t}"),
            });
        }
        tie_sum += t;
        let mut c = Matrix4::zeros();
        c[(3, 0)] = -2.0 * PI * t;
        a_coupling.insert(j, c);
    }
    #[rustfmt::skip]
    let a_self = Matrix4::new(
        -p.damping / p.inertia, 1.0 / p.inertia, 0.0, -1.0 / p.inertia,
        0.0, -1.0 / p.turbine_tc, 1.0 / p.turbine_tc, 0.0,
        -1.0 / (p.governor_coeff * p.governor_tc), 0.0, -1.0 / p.governor_tc, 0.0,
        2.0 * PI * tie_sum, 0.0, 0.0, 0.0,
    );
    Ok(LocalBlocks {
        a_self,
        a_coupling,
        b: Vector4::new(0.0, 0.0, 1.0 / p.governor_tc, 0.0),
        c: RowVector4::new(p.beta, 0.0, 0.0, 1.0),
    })
}

/// Area blocks placed in global coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedBlocks {
    /// `E_i' A_ii E_i + sum_j E_i' A_ij E_j`, 4N x 4N.
    pub a: DMatrix<f64>,
    /// `E_i' B_ii e_i`, 4N x N.
    pub b: DMatrix<f64>,
    /// `e_i' C_ii E_i`, N x 4N.
    pub c: DMatrix<f64>,
}

fn put4(dst: &mut DMatrix<f64>, row_block: usize, col_block: usize, m: &Matrix4<f64>) {
    dst.view_mut((4 * row_block, 4 * col_block), (4, 4))
        .copy_from(m);
}

/// Places area `i`'s (0-based) blocks into a system of `n_areas` areas.
pub fn embed(local: &LocalBlocks, i: usize, n_areas: usize) -> Result<EmbeddedBlocks, ModelError> {
    if i >= n_areas {
        return Err(ModelError::Topology(format!(
            "area {i} out of range for {n_areas} areas"
        )));
    }
    let n = AREA_STATES * n_areas;
    let mut a = DMatrix::zeros(n, n);
    put4(&mut a, i, i, &local.a_self);
    for (&j, blk) in &local.a_coupling {
        if j >= n_areas || j == i {
            return Err(ModelError::Topology(format!(
                "area {i} lists invalid physical neighbour {j}"
            )));
        }
        put4(&mut a, i, j, blk);
    }
    let mut b = DMatrix::zeros(n, n_areas);
    b.view_mut((4 * i, i), (4, 1)).copy_from(&local.b);
    let mut c = DMatrix::zeros(n_areas, n);
    c.view_mut((i, 4 * i), (1, 4)).copy_from(&local.c);
    Ok(EmbeddedBlocks { a, b, c })
}

/// Dense LQG problem data: plant, cost and noise statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LqgModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub rx: DMatrix<f64>,
    pub rw: DMatrix<f64>,
    pub rv: DMatrix<f64>,
    pub x0_mean: DVector<f64>,
    pub w_mean: DVector<f64>,
    pub v_mean: DVector<f64>,
    /// States per area block, used to locate frequency deviations.
    pub block: usize,
}

impl LqgModel {
    /// Model with zero noise means and `block = n` (a single area).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        s: DMatrix<f64>,
        rx: DMatrix<f64>,
        rw: DMatrix<f64>,
        rv: DMatrix<f64>,
        x0_mean: DVector<f64>,
    ) -> Result<Self, ModelError> {
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        let model = Self {
            w_mean: DVector::zeros(n),
            v_mean: DVector::zeros(p),
            block: n / p.max(1),
            a,
            b,
            c,
            q,
            r,
            s,
            rx,
            rw,
            rv,
            x0_mean,
        };
        let square = [
            ("A", &model.a, n),
            ("Q", &model.q, n),
            ("S", &model.s, n),
            ("R_x", &model.rx, n),
            ("R_w", &model.rw, n),
            ("R", &model.r, m),
            ("R_v", &model.rv, p),
        ];
        for (name, mat, dim) in square {
            if mat.nrows() != dim || mat.ncols() != dim {
                return Err(ModelError::Dimension(format!(
                    "{name} is {}x{}, expected {dim}x{dim}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
        }
        if model.b.nrows() != n || model.c.ncols() != n || model.x0_mean.len() != n {
            return Err(ModelError::Dimension(
                "B, C or x0 inconsistent with A".into(),
            ));
        }
        Ok(model)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// The assembled multi-area system.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSystem {
    pub n_areas: usize,
    pub model: LqgModel,
    pub areas: Vec<AreaParams>,
    pub locals: Vec<LocalBlocks>,
    pub per_area: Vec<EmbeddedBlocks>,
    /// Each area's embedded private state weight; `Q` is their average.
    pub q_parts: Vec<DMatrix<f64>>,
}

impl GlobalSystem {
    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }
}

fn embed_block4(m: &Matrix4<f64>, i: usize, n_areas: usize) -> DMatrix<f64> {
    let n = AREA_STATES * n_areas;
    let mut out = DMatrix::zeros(n, n);
    put4(&mut out, i, i, m);
    out
}

/// Builds the global matrices. `terminal` defaults to zero.
pub fn assemble_global(
    areas: &[AreaParams],
    physical: &PhysGraph,
    terminal: Option<DMatrix<f64>>,
) -> Result<GlobalSystem, ModelError> {
    let n_areas = areas.len();
    if n_areas == 0 {
        return Err(ModelError::Dimension(
            "at least one area is required".into(),
        ));
    }
    if physical.n() != n_areas {
        return Err(ModelError::Dimension(format!(
            "physical graph has {} nodes for {n_areas} areas",
            physical.n()
        )));
    }
    // Re-validate symmetry: tie-line flows must balance.
    PhysGraph::from_matrix(physical.matrix().clone())?;
    let n = AREA_STATES * n_areas;

    let locals = areas
        .iter()
        .enumerate()
        .map(|(i, p)| build_local_for(p, &physical.tie_row(i), i))
        .collect::<Result<Vec<_>, _>>()?;
    let per_area = locals
        .iter()
        .enumerate()
        .map(|(i, l)| embed(l, i, n_areas))
        .collect::<Result<Vec<_>, _>>()?;

    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n_areas);
    let mut c = DMatrix::zeros(n_areas, n);
    for e in &per_area {
        a += &e.a;
        b += &e.b;
        c += &e.c;
    }

    let q_parts: Vec<DMatrix<f64>> = areas
        .iter()
        .enumerate()
        .map(|(i, p)| match &p.q_weight {
            CostWeight::Scalar(q) => DMatrix::identity(n, n) * *q,
            CostWeight::Block(m) => embed_block4(m, i, n_areas) * n_areas as f64,
        })
        .collect();
    let mut q = DMatrix::zeros(n, n);
    for qi in &q_parts {
        q += qi;
    }
    q /= n_areas as f64;

    let s = match terminal {
        Some(s) => {
            if s.nrows() != n || s.ncols() != n {
                return Err(ModelError::Dimension(format!(
                    "terminal weight is {}x{}, expected {n}x{n}",
                    s.nrows(),
                    s.ncols()
                )));
            }
            if !linalg::is_symmetric_psd(&s, 1e-10) {
                return Err(ModelError::Dimension(
                    "terminal weight must be symmetric PSD".into(),
                ));
            }
            s
        }
        None => DMatrix::zeros(n, n),
    };

    let r = DMatrix::from_diagonal(&DVector::from_iterator(
        n_areas,
        areas.iter().map(|p| p.r_weight),
    ));
    let rv = DMatrix::from_diagonal(&DVector::from_iterator(n_areas, areas.iter().map(|p| p.rv)));
    let to_dyn = |m: &Matrix4<f64>| DMatrix::from_column_slice(4, 4, m.as_slice());
    let rx = linalg::block_diag(&areas.iter().map(|p| to_dyn(&p.rx)).collect::<Vec<_>>());
    let rw = linalg::block_diag(&areas.iter().map(|p| to_dyn(&p.rw)).collect::<Vec<_>>());
    let x0_mean = DVector::from_iterator(
        n,
        areas
            .iter()
            .flat_map(|p| p.x0_mean.iter().copied().collect::<Vec<_>>()),
    );
    let w_mean = DVector::from_iterator(
        n,
        areas
            .iter()
            .flat_map(|p| p.w_mean.iter().copied().collect::<Vec<_>>()),
    );
    let v_mean = DVector::from_iterator(n_areas, areas.iter().map(|p| p.v_mean));

    let model = LqgModel {
        a,
        b,
        c,
        q,
        r,
        s,
        rx,
        rw,
        rv,
        x0_mean,
        w_mean,
        v_mean,
        block: AREA_STATES,
    };
    Ok(GlobalSystem {
        n_areas,
        model,
        areas: areas.to_vec(),
        locals,
        per_area,
        q_parts,
    })
}

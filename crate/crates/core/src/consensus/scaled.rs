//! Per-area data scaled by `N` so that plain averages over areas recover
//! the global quantities (`(1/N) sum_i N A_i = A` and so on).

use nalgebra::{DMatrix, DVector};

use crate::grid_model::{GlobalSystem, AREA_STATES};

/// Everything area `i` contributes to (and may use in) the distributed
/// algorithms. All matrices are global-sized.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalScaledData {
    pub area: usize,
    pub n_areas: usize,
    /// `N A_i`.
    pub a: DMatrix<f64>,
    /// `N B_i R_i^-1 B_i'`, the input channel's share of `B R^-1 B'`.
    pub s: DMatrix<f64>,
    /// Private state weight; the global `Q` is the average of these.
    pub q: DMatrix<f64>,
    /// `N C_i' R_vi^-1 C_i`, the output channel's share of `C' Rv^-1 C`.
    pub v: DMatrix<f64>,
    /// `N E_i' R_wi E_i`.
    pub rw: DMatrix<f64>,
    /// `N E_i' R_xi E_i`.
    pub rx: DMatrix<f64>,
    /// `N E_i' x0_i`.
    pub x0: DVector<f64>,
    /// `N E_i' w_mean_i`.
    pub w_mean: DVector<f64>,
    /// Measurement mean of this area's single output.
    pub v_mean: f64,
    /// Column `i` of `B` (global-sized).
    pub b: DVector<f64>,
    /// Row `i` of `C` as a column vector.
    pub c: DVector<f64>,
    pub r_weight: f64,
    pub rv: f64,
}

impl LocalScaledData {
    pub fn from_system(sys: &GlobalSystem) -> Vec<Self> {
        let n_areas = sys.n_areas;
        let n = sys.state_dim();
        let nf = n_areas as f64;
        (0..n_areas)
            .map(|i| {
                let p = &sys.areas[i];
                let blk = &sys.per_area[i];
                let b: DVector<f64> = blk.b.column(i).into_owned();
                let c: DVector<f64> = blk.c.row(i).transpose();
                let mut rw = DMatrix::zeros(n, n);
                let mut rx = DMatrix::zeros(n, n);
                let mut x0 = DVector::zeros(n);
                let mut w_mean = DVector::zeros(n);
                let o = AREA_STATES * i;
                for r in 0..AREA_STATES {
                    x0[o + r] = nf * p.x0_mean[r];
                    w_mean[o + r] = nf * p.w_mean[r];
                    for s in 0..AREA_STATES {
                        rw[(o + r, o + s)] = nf * p.rw[(r, s)];
                        rx[(o + r, o + s)] = nf * p.rx[(r, s)];
                    }
                }
                Self {
                    area: i,
                    n_areas,
                    a: &blk.a * nf,
                    s: &b * b.transpose() * (nf / p.r_weight),
                    q: sys.q_parts[i].clone(),
                    v: &c * c.transpose() * (nf / p.rv),
                    rw,
                    rx,
                    x0,
                    w_mean,
                    v_mean: p.v_mean,
                    b,
                    c,
                    r_weight: p.r_weight,
                    rv: p.rv,
                }
            })
            .collect()
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Input gain of the local estimator: `N C_i' R_vi^-1` applied to the
    /// de-meaned scalar measurement `y_i`.
    pub fn measurement_gain(&self) -> DVector<f64> {
        &self.c * (self.n_areas as f64 / self.rv)
    }

    /// This area's command `-R_i^-1 b_i' P x`.
    pub fn command(&self, p: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
        -(self.b.transpose() * (p * x))[0] / self.r_weight
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::{assemble_global, six_area_benchmark};
    use crate::linalg::frob_diff;
    use crate::topology::PhysGraph;

    #[test]
    fn matches_channel_selector_products() {
        // Build the scaled input/output blocks from channel-selector matrices
        // and compare with the compact forms.
        let sys = assemble_global(&six_area_benchmark(), &PhysGraph::ring(6, 2.0), None).unwrap();
        let data = LocalScaledData::from_system(&sys);
        let nf = 6.0;
        for (i, d) in data.iter().enumerate() {
            let bt = &sys.per_area[i].b * nf;
            let mut rt = DMatrix::zeros(6, 6);
            rt[(i, i)] = 1.0 / (nf * sys.areas[i].r_weight);
            assert!(frob_diff(&(&bt * rt * bt.transpose()), &d.s) < 1e-10);
            let ct = &sys.per_area[i].c * nf;
            let mut rv = DMatrix::zeros(6, 6);
            rv[(i, i)] = 1.0 / (nf * sys.areas[i].rv);
            assert!(frob_diff(&(ct.transpose() * rv * &ct), &d.v) < 1e-8);
        }
    }
}

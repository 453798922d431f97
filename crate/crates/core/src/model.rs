//! Joint PLDA parameters.
//!
//! An embedding `m` is modeled as
//! `m = mu + V y + sum_j U_j x_j + eps`, with `y ~ N(0, I)`, `x_j ~ N(0, I)`
//! and `eps ~ N(0, D^-1)`. `D` is a noise *precision*.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on `|D - D^T|` accepted by [`ModelParams::validate`].
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    mu: DVector<f64>,
    v: DMatrix<f64>,
    u: Vec<DMatrix<f64>>,
    d: DMatrix<f64>,
    diagonal_d: bool,
}

/// Column concatenation `W = [V | U_1 | ... | U_N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedModel {
    pub w: DMatrix<f64>,
    pub r_z: usize,
}

impl ModelParams {
    /// Builds and validates a model.
    pub fn new(
        mu: DVector<f64>,
        v: DMatrix<f64>,
        u: Vec<DMatrix<f64>>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let diagonal_d = is_diagonal(&d);
        let model = Self {
            mu,
            v,
            u,
            d,
            diagonal_d,
        };
        model.validate()?;
        Ok(model)
    }

    /// Zero-mean model with diagonal precision.
    pub fn with_diagonal_precision(
        v: DMatrix<f64>,
        u: Vec<DMatrix<f64>>,
        precision_diag: &[f64],
    ) -> Result<Self> {
        let dim = precision_diag.len();
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(precision_diag));
        Self::new(DVector::zeros(dim), v, u, d)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.mu.len();
        if self.v.nrows() != dim {
            return Err(Error::DimensionMismatch(format!(
                "V has {} rows, mu has length {dim}",
                self.v.nrows()
            )));
        }
        for (j, u) in self.u.iter().enumerate() {
            if u.nrows() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "U_{} has {} rows, expected {dim}",
                    j + 1,
                    u.nrows()
                )));
            }
            if u.ncols() == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "U_{} has rank 0; condition subspaces need at least one column",
                    j + 1
                )));
            }
        }
        if self.d.nrows() != dim || self.d.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "D is {}x{}, expected {dim}x{dim}",
                self.d.nrows(),
                self.d.ncols()
            )));
        }
        let mut asym = 0.0f64;
        for i in 0..dim {
            for k in 0..i {
                asym = asym.max((self.d[(i, k)] - self.d[(k, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        if !self.d.iter().all(|x| x.is_finite())
            || self.d.clone().cholesky().is_none()
        {
            return Err(Error::NotPositiveDefinite("noise precision D".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Number of nuisance conditions `N`.
    pub fn num_conditions(&self) -> usize {
        self.u.len()
    }

    pub fn speaker_rank(&self) -> usize {
        self.v.ncols()
    }

    pub fn condition_ranks(&self) -> Vec<usize> {
        self.u.iter().map(|u| u.ncols()).collect()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn u(&self) -> &[DMatrix<f64>] {
        &self.u
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// True when `D` has no off-diagonal entries; enables the diagonal fast path.
    pub fn has_diagonal_precision(&self) -> bool {
        self.diagonal_d
    }

    /// `D x`, using the diagonal fast path when available.
    pub fn apply_precision(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.diagonal_d {
            x.component_mul(&self.d.diagonal())
        } else {
            &self.d * x
        }
    }

    /// `D M` for a matrix right-hand side.
    pub fn apply_precision_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.diagonal_d {
            let diag = self.d.diagonal();
            let mut out = m.clone();
            for (i, mut row) in out.row_iter_mut().enumerate() {
                row *= diag[i];
            }
            out
        } else {
            &self.d * m
        }
    }

    /// Noise covariance `D^-1`.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        spd_inverse(&self.d).expect("validated precision is SPD")
    }

    pub fn stack_w(&self) -> StackedModel {
        let r_z = self.speaker_rank() + self.u.iter().map(|u| u.ncols()).sum::<usize>();
        let mut w = DMatrix::zeros(self.dim(), r_z);
        let mut col = 0;
        for block in std::iter::once(&self.v).chain(self.u.iter()) {
            w.columns_mut(col, block.ncols()).copy_from(block);
            col += block.ncols();
        }
        StackedModel { w, r_z }
    }

    /// Folds all condition subspaces into the noise term, producing a plain
    /// PLDA model with `D' = (D^-1 + sum_j U_j U_j^T)^-1`.
    pub fn collapse_to_plda(&self) -> Result<ModelParams> {
        if self.u.is_empty() {
            return Ok(self.clone());
        }
        let mut cov = self.noise_covariance();
        for u in &self.u {
            cov += u * u.transpose();
        }
        let mut d = spd_inverse(&cov)
            .ok_or_else(|| Error::NotPositiveDefinite("collapsed noise covariance".into()))?;
        symmetrize(&mut d);
        ModelParams::new(self.mu.clone(), self.v.clone(), Vec::new(), d)
    }

    /// Marginal covariance of a single embedding: `V V^T + sum U_j U_j^T + D^-1`.
    pub fn total_covariance(&self) -> DMatrix<f64> {
        let mut cov = self.noise_covariance();
        cov += &self.v * self.v.transpose();
        for u in &self.u {
            cov += u * u.transpose();
        }
        cov
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..m.ncols()).all(|k| i == k || m[(i, k)] == 0.0))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut inv = m.clone().cholesky()?.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

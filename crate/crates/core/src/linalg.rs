//! Dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest admissible 2-norm condition number before a system is declared singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Relative singular-value cutoff used when projecting onto a column space.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// 2-norm condition number from the singular values; infinite for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max.is_finite() && min.is_finite()) || min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `m * x = rhs` after checking that `m` is square, finite and
/// well conditioned.
pub fn solve_guarded(m: &DMatrix<f64>, rhs: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "{context}: expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let condition = condition_number(m);
    // Written this way so a NaN condition number also fails.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::Singular {
            context: context.to_string(),
            condition,
        });
    }
    m.clone().lu().solve(rhs).ok_or_else(|| Error::Singular {
        context: context.to_string(),
        condition,
    })
}

pub fn inverse_guarded(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    solve_guarded(m, &DMatrix::identity(m.nrows(), m.nrows()), context)
}

/// Orthogonal projector onto the numerical column space of a matrix.
///
/// Stores an orthonormal basis `U` of the retained left singular vectors, so
/// `Π V = U (Uᵀ V)` never forms the n×n projection matrix.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: DMatrix<f64>,
}

impl Projector {
    pub fn new(columns: &DMatrix<f64>) -> Self {
        let n = columns.nrows();
        if columns.ncols() == 0 || n == 0 {
            return Self {
                basis: DMatrix::zeros(n, 0),
            };
        }
        let svd = columns.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| smax > 0.0 && s > RANK_TOLERANCE * smax)
            .map(|(i, _)| i)
            .collect();
        let mut basis = DMatrix::zeros(n, keep.len());
        for (j, &i) in keep.iter().enumerate() {
            basis.set_column(j, &u.column(i));
        }
        Self { basis }
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.basis * (self.basis.transpose() * v)
    }

    pub fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.basis * (self.basis.transpose() * v)
    }
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

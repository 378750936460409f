//! LIML and Fuller k-class estimators on residualized data, mapped into the
//! regularized estimator through γ = 1/(1 − κ).

use nalgebra::{DMatrix, DVector};

use crate::data::{Method, ResidualFold};
use crate::error::{invalid, Error, Result};
use crate::estimators::{FoldWeighting, PreparedFold, PreparedFolds};
use crate::linalg::{condition_number, solve_guarded, symmetrize, Projector, CONDITION_LIMIT};

/// Largest γ produced by the κ → γ map.
pub const GAMMA_MAX: f64 = 1e6;

/// κ values from one split and the γ they map to.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaResult {
    pub method: Method,
    pub kappa_per_fold: Vec<f64>,
    pub kappa_avg: f64,
    pub gamma: f64,
}

/// Smallest eigenvalue of `(Zᵀ(𝟙−Π)Z)⁻¹ ZᵀZ` with `Z = [R_Y | R_X]`.
fn liml_from_parts(z: &DMatrix<f64>, pi_z: &DMatrix<f64>, fold_index: usize) -> Result<f64> {
    let total = symmetrize(&(z.transpose() * z));
    let inner = symmetrize(&(&total - pi_z.transpose() * pi_z));
    let condition = condition_number(&inner);
    let singular = || Error::Singular {
        context: format!("LIML fold {fold_index}"),
        condition,
    };
    // Written this way so a NaN condition number also fails.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(condition <= CONDITION_LIMIT) {
        return Err(singular());
    }
    // inner = L Lᵀ; the eigenvalues of L⁻¹ ZᵀZ L⁻ᵀ solve the generalized problem.
    let chol = inner.cholesky().ok_or_else(singular)?;
    let l = chol.l();
    let left = l.solve_lower_triangular(&total).ok_or_else(singular)?;
    let sym = l.solve_lower_triangular(&left.transpose()).ok_or_else(singular)?;
    Ok(symmetrize(&sym).symmetric_eigenvalues().min())
}

fn z_matrix(fold: &ResidualFold) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(fold.n(), 1 + fold.d());
    z.set_column(0, &fold.ry);
    z.view_mut((0, 1), (fold.n(), fold.d())).copy_from(&fold.rx);
    z
}

fn check_liml_shape(fold: &ResidualFold) -> Result<()> {
    if fold.n() <= fold.q() + fold.d() {
        return Err(invalid(format!(
            "LIML fold {}: needs n > q + d, got n = {}",
            fold.fold_index,
            fold.n()
        )));
    }
    Ok(())
}

/// LIML κ of one fold.
pub fn liml_kappa(fold: &ResidualFold) -> Result<f64> {
    check_liml_shape(fold)?;
    let z = z_matrix(fold);
    let pi_z = Projector::new(&fold.ra).apply(&z);
    liml_from_parts(&z, &pi_z, fold.fold_index)
}

fn liml_kappa_prepared(p: &PreparedFold) -> Result<f64> {
    check_liml_shape(&p.fold)?;
    let z = z_matrix(&p.fold);
    let mut pi_z = DMatrix::zeros(z.nrows(), z.ncols());
    pi_z.set_column(0, &p.pi_ry.column(0));
    pi_z.view_mut((0, 1), (z.nrows(), p.fold.d())).copy_from(&p.pi_rx);
    liml_from_parts(&z, &pi_z, p.fold.fold_index)
}

/// `κ − α/(n_k − q)`.
pub fn fuller_kappa(kappa_liml: f64, alpha: f64, n_k: usize, q: usize) -> Result<f64> {
    if n_k <= q {
        return Err(invalid(format!("Fuller adjustment needs n_k > q, got n_k = {n_k}, q = {q}")));
    }
    Ok(kappa_liml - alpha / (n_k - q) as f64)
}

/// `1/(1 − κ)` with κ clamped to at most `1 − 1/GAMMA_MAX`.
pub fn kclass_gamma(kappa: f64) -> f64 {
    let clamped = kappa.min(1.0 - 1.0 / GAMMA_MAX);
    1.0 / (1.0 - clamped)
}

/// Fuller α of a k-class method; `None` for methods outside the family.
pub fn fuller_alpha(method: Method) -> Option<f64> {
    match method {
        Method::Liml => Some(0.0),
        Method::Fuller1 => Some(1.0),
        Method::Fuller4 => Some(4.0),
        _ => None,
    }
}

/// Per-fold κ of `method`, their plain average and the implied γ.
pub fn kappa_for_folds(prepared: &PreparedFolds, method: Method) -> Result<KappaResult> {
    let alpha = fuller_alpha(method).ok_or_else(|| invalid(format!("{method} is not a k-class method")))?;
    if prepared.d() != 1 {
        return Err(Error::Unsupported("k-class estimators require d = 1".into()));
    }
    let kappa_per_fold = prepared
        .folds
        .iter()
        .map(|p| fuller_kappa(liml_kappa_prepared(p)?, alpha, p.fold.n(), p.fold.q()))
        .collect::<Result<Vec<f64>>>()?;
    let kappa_avg = kappa_per_fold.iter().sum::<f64>() / kappa_per_fold.len() as f64;
    Ok(KappaResult {
        method,
        kappa_per_fold,
        kappa_avg,
        gamma: kclass_gamma(kappa_avg),
    })
}

/// `(R_Xᵀ(𝟙−κM)R_X)⁻¹ R_Xᵀ(𝟙−κM)R_Y` with `M = 𝟙 − Π` on a single fold.
pub fn kclass_fold_estimate(fold: &ResidualFold, kappa: f64) -> Result<DVector<f64>> {
    let proj = Projector::new(&fold.ra);
    let ry = fold.ry_matrix();
    let mx = &fold.rx - proj.apply(&fold.rx);
    let my = &ry - proj.apply(&ry);
    let lhs = fold.rx.transpose() * &fold.rx - (fold.rx.transpose() * mx) * kappa;
    let rhs = fold.rx.transpose() * &ry - (fold.rx.transpose() * my) * kappa;
    Ok(solve_guarded(&lhs, &rhs, "k-class system")?.column(0).into_owned())
}

/// κ values for a set of folds with size-proportional weighting.
pub fn kclass_kappa(folds: &[ResidualFold], method: Method) -> Result<KappaResult> {
    kappa_for_folds(&PreparedFolds::new(folds, FoldWeighting::default())?, method)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuller_arithmetic() {
        assert!((fuller_kappa(1.05, 1.0, 50, 2).unwrap() - 1.0291667).abs() < 1e-7);
        assert!((fuller_kappa(1.0, 4.0, 104, 4).unwrap() - 0.96).abs() < 1e-12);
        assert_eq!(fuller_kappa(1.3, 0.0, 10, 2).unwrap(), 1.3);
        assert!(fuller_kappa(1.0, 1.0, 2, 2).is_err());
    }

    #[test]
    fn gamma_map() {
        assert!((kclass_gamma(0.5) - 2.0).abs() < 1e-12);
        assert_eq!(kclass_gamma(0.0), 1.0);
        assert!((kclass_gamma(1.0) - GAMMA_MAX).abs() < 1e-3);
        assert!((kclass_gamma(3.0) - GAMMA_MAX).abs() < 1e-3);
    }

    #[test]
    fn exact_fit_gives_unit_kappa() {
        // R_Y = 2 R_X + u with u ⟂ R_A.
        let ra = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 0.0, 0.0]);
        let rx = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 0.5, -1.0]);
        let u = [1.0, -1.0, 0.0, 0.0];
        let ry = DVector::from_fn(4, |i, _| 2.0 * rx[(i, 0)] + u[i] + if i == 2 { 0.7 } else { 0.0 });
        let f = ResidualFold::new(ra, rx, ry, 0).unwrap();
        let k = liml_kappa(&f).unwrap();
        assert!((k - 1.0).abs() < 1e-10, "{k}");
    }
}

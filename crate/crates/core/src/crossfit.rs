//! K-fold cross-fitting of the nuisance regressions and the projection onto
//! fold instrument residuals.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, FoldPartition, ResidualFold};
use crate::error::{invalid, Result};
use crate::linalg::Projector;
use crate::nuisance::{self, FittedRegressor, RegressorSpec};

/// `Π_{RA} V` via an orthonormal basis of the numerical column space of `RA`.
pub fn project_onto(ra: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if ra.nrows() != v.nrows() {
        return Err(invalid(format!(
            "projection: RA has {} rows, V has {}",
            ra.nrows(),
            v.nrows()
        )));
    }
    if ra.nrows() < ra.ncols() {
        return Err(invalid(format!(
            "projection needs n >= q, got n = {} and q = {}",
            ra.nrows(),
            ra.ncols()
        )));
    }
    Ok(Projector::new(ra).apply(v))
}

/// Known conditional means E[A|W], E[X|W], E[Y|W] evaluated at every row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMeans {
    pub a: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// Where the nuisance functions come from.
#[derive(Debug, Clone)]
pub enum NuisanceSource {
    /// Learned on each fold complement.
    Fitted(RegressorSpec),
    /// Supplied exactly (simulation oracle); nothing is fitted.
    Known(ConditionalMeans),
}

/// Learners for A, X and Y trained on one fold complement.
#[derive(Debug, Clone)]
pub struct FoldLearners {
    pub a: FittedRegressor,
    pub x: FittedRegressor,
    pub y: FittedRegressor,
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Fits the three learners using only `rows` of the supplied matrices.
pub fn fit_fold_learners<R: Rng + ?Sized>(
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    rows: &[usize],
    spec: &RegressorSpec,
    rng: &mut R,
) -> Result<FoldLearners> {
    let w_train = select_rows(w, rows);
    Ok(FoldLearners {
        a: nuisance::fit(spec, &w_train, &select_rows(a, rows), rng)?,
        x: nuisance::fit(spec, &w_train, &select_rows(x, rows), rng)?,
        y: nuisance::fit(spec, &w_train, &select_rows(y, rows), rng)?,
    })
}

/// Cross-fitted residuals with learners built from `spec`.
pub fn compute_residuals<R: Rng + ?Sized>(
    data: &Dataset,
    partition: &FoldPartition,
    spec: &RegressorSpec,
    rng: &mut R,
) -> Result<Vec<ResidualFold>> {
    compute_residuals_with(data, partition, &NuisanceSource::Fitted(spec.clone()), rng)
}

/// Cross-fitted residuals for every fold, in fold order.
///
/// For fold `k` the learners see only the rows of its complement; residuals
/// are evaluated on the rows of fold `k`.
pub fn compute_residuals_with<R: Rng + ?Sized>(
    data: &Dataset,
    partition: &FoldPartition,
    source: &NuisanceSource,
    rng: &mut R,
) -> Result<Vec<ResidualFold>> {
    if partition.n() != data.n() {
        return Err(invalid(format!(
            "partition covers {} rows, dataset has {}",
            partition.n(),
            data.n()
        )));
    }
    match source {
        NuisanceSource::Known(means) => known_residuals(data, partition, means),
        NuisanceSource::Fitted(spec) => {
            spec.validate()?;
            let k = partition.k();
            let complements: Vec<Vec<usize>> = (0..k)
                .map(|f| if k == 1 { partition.fold(0).to_vec() } else { partition.complement(f) })
                .collect();
            for (f, comp) in complements.iter().enumerate() {
                let need = spec.min_train_rows(comp.len());
                if comp.len() < need {
                    return Err(invalid(format!(
                        "fold {f}: complement has {} rows, learner needs at least {need}",
                        comp.len()
                    )));
                }
            }
            let seeds: Vec<u64> = (0..k).map(|_| rng.random()).collect();
            let y = data.y_matrix();
            (0..k)
                .into_par_iter()
                .map(|f| {
                    let mut fold_rng = ChaCha8Rng::seed_from_u64(seeds[f]);
                    let learners =
                        fit_fold_learners(data.w(), data.a(), data.x(), &y, &complements[f], spec, &mut fold_rng)?;
                    fold_residuals(data, partition.fold(f), &learners, f)
                })
                .collect()
        }
    }
}

fn fold_residuals(data: &Dataset, rows: &[usize], learners: &FoldLearners, index: usize) -> Result<ResidualFold> {
    let w = select_rows(data.w(), rows);
    let ra = select_rows(data.a(), rows) - nuisance::predict(&learners.a, &w)?;
    let rx = select_rows(data.x(), rows) - nuisance::predict(&learners.x, &w)?;
    let my = nuisance::predict(&learners.y, &w)?;
    let ry = DVector::from_fn(rows.len(), |i, _| data.y()[rows[i]] - my[(i, 0)]);
    ResidualFold::new(ra, rx, ry, index)
}

fn known_residuals(data: &Dataset, partition: &FoldPartition, means: &ConditionalMeans) -> Result<Vec<ResidualFold>> {
    if means.a.shape() != data.a().shape() || means.x.shape() != data.x().shape() || means.y.len() != data.n() {
        return Err(invalid("conditional means do not match the dataset shape"));
    }
    partition
        .folds()
        .iter()
        .enumerate()
        .map(|(f, rows)| {
            let ra = select_rows(data.a(), rows) - select_rows(&means.a, rows);
            let rx = select_rows(data.x(), rows) - select_rows(&means.x, rows);
            let ry = DVector::from_fn(rows.len(), |i, _| data.y()[rows[i]] - means.y[rows[i]]);
            ResidualFold::new(ra, rx, ry, f)
        })
        .collect()
}

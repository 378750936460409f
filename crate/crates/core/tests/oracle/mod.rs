//! Independent dense-matrix transcriptions of the estimator formulas.
//!
//! Everything here forms explicit n×n projection matrices and loops over
//! rows, so it shares no code path with the library implementation. Fold
//! averages use the literal `1/K`; callers pass equal-sized folds.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use regsdml::ResidualFold;

pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Instruments, a regressor driven by them and a response with heteroskedastic
/// noise that is correlated with the regressor noise.
pub fn random_fold<R: Rng>(rng: &mut R, n: usize, q: usize, d: usize, index: usize) -> ResidualFold {
    let ra = normal_matrix(rng, n, q);
    let gamma = normal_matrix(rng, q, d).map(|v| v + 1.0);
    let u = normal_matrix(rng, n, d);
    let rx = &ra * gamma + &u;
    let beta = normal_matrix(rng, d, 1);
    let e = normal_matrix(rng, n, 1);
    let ry = DVector::from_fn(n, |i, _| {
        let signal = (rx.row(i) * &beta)[(0, 0)];
        signal + 0.5 * u[(i, 0)] + (1.0 + 0.5 * ra[(i, 0)].abs()) * e[(i, 0)]
    });
    ResidualFold::new(ra, rx, ry, index).unwrap()
}

pub fn random_folds<R: Rng>(rng: &mut R, k: usize, n: usize, q: usize, d: usize) -> Vec<ResidualFold> {
    (0..k).map(|i| random_fold(rng, n, q, d, i)).collect()
}

/// `RA (RAᵀRA)⁻¹ RAᵀ`.
pub fn projection(ra: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = ra.transpose() * ra;
    ra * gram.try_inverse().expect("full column rank") * ra.transpose()
}

fn y(f: &ResidualFold) -> DMatrix<f64> {
    DMatrix::from_column_slice(f.ry.len(), 1, f.ry.as_slice())
}

fn inv(m: DMatrix<f64>) -> DMatrix<f64> {
    m.try_inverse().expect("invertible")
}

pub fn tsls(f: &ResidualFold) -> DVector<f64> {
    let p = projection(&f.ra);
    let lhs = f.rx.transpose() * &p * &f.rx;
    let rhs = f.rx.transpose() * &p * y(f);
    (inv(lhs) * rhs).column(0).into_owned()
}

pub fn dml2(folds: &[ResidualFold]) -> DVector<f64> {
    let k = folds.len() as f64;
    let d = folds[0].d();
    let mut lhs = DMatrix::zeros(d, d);
    let mut rhs = DMatrix::zeros(d, 1);
    for f in folds {
        let p = projection(&f.ra);
        let n = f.n() as f64;
        lhs += f.rx.transpose() * &p * &f.rx / (n * k);
        rhs += f.rx.transpose() * &p * y(f) / (n * k);
    }
    (inv(lhs) * rhs).column(0).into_owned()
}

pub fn dml1(folds: &[ResidualFold]) -> DVector<f64> {
    let k = folds.len() as f64;
    folds.iter().map(tsls).fold(DVector::zeros(folds[0].d()), |acc, b| acc + b / k)
}

fn row(m: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m.ncols(), 1, |j, _| m[(i, j)])
}

/// Sandwich variance with `Ĵ_{k,0}` and the score average written out row by row.
pub fn dml_variance(folds: &[ResidualFold], beta: &DVector<f64>) -> DMatrix<f64> {
    let k = folds.len() as f64;
    let (q, d) = (folds[0].q(), folds[0].d());
    let mut j0 = DMatrix::zeros(d, q);
    let mut meat = DMatrix::zeros(q, q);
    for f in folds {
        let n = f.n() as f64;
        let mut xa = DMatrix::zeros(d, q);
        let mut aa = DMatrix::zeros(q, q);
        let mut ax = DMatrix::zeros(q, d);
        for i in 0..f.n() {
            let (a, x) = (row(&f.ra, i), row(&f.rx, i));
            xa += &x * a.transpose() / n;
            aa += &a * a.transpose() / n;
            ax += &a * x.transpose() / n;
            let resid = f.ry[i] - (x.transpose() * beta)[0];
            let psi = &a * resid;
            meat += &psi * psi.transpose() / (n * k);
        }
        let aa_inv = inv(aa);
        let jk = inv(&xa * &aa_inv * &ax) * &xa * &aa_inv;
        j0 += jk / k;
    }
    &j0 * meat * j0.transpose()
}

/// Normal-equation form with `𝟙 + (γ − 1)Π`.
pub fn regdml_dml2(folds: &[ResidualFold], gamma: f64) -> DVector<f64> {
    let k = folds.len() as f64;
    let d = folds[0].d();
    let mut lhs = DMatrix::zeros(d, d);
    let mut rhs = DMatrix::zeros(d, 1);
    for f in folds {
        let n = f.n();
        let weight = DMatrix::identity(n, n) + projection(&f.ra) * (gamma - 1.0);
        lhs += f.rx.transpose() * &weight * &f.rx / (n as f64 * k);
        rhs += f.rx.transpose() * &weight * y(f) / (n as f64 * k);
    }
    (inv(lhs) * rhs).column(0).into_owned()
}

pub fn regdml_fold(f: &ResidualFold, gamma: f64) -> DVector<f64> {
    regdml_dml2(std::slice::from_ref(f), gamma)
}

pub fn regdml_dml1(folds: &[ResidualFold], gamma: f64) -> DVector<f64> {
    let k = folds.len() as f64;
    folds
        .iter()
        .map(|f| regdml_fold(f, gamma))
        .fold(DVector::zeros(folds[0].d()), |acc, b| acc + b / k)
}

/// σ̂²(γ) with every score function evaluated per observation.
pub fn regdml_variance(folds: &[ResidualFold], gamma: f64, b: &DVector<f64>) -> DMatrix<f64> {
    let k = folds.len() as f64;
    let (q, d) = (folds[0].q(), folds[0].d());
    let g1 = gamma - 1.0;
    let mut d1 = DMatrix::zeros(d, d);
    let mut d2 = DMatrix::zeros(d, d);
    let mut d4 = DMatrix::zeros(d, d);
    for f in folds {
        let nn = f.n();
        let n = nn as f64;
        let psi1 = |i: usize| row(&f.rx, i) * row(&f.ra, i).transpose();
        let psi2 = |i: usize| row(&f.ra, i) * row(&f.ra, i).transpose();
        let psi3 = |i: usize| row(&f.rx, i) * row(&f.rx, i).transpose();
        let resid = |i: usize| f.ry[i] - (row(&f.rx, i).transpose() * b)[0];
        let psi = |i: usize| row(&f.ra, i) * resid(i);
        let psi_tilde = |i: usize| row(&f.rx, i) * resid(i);

        let mean_of = |g: &dyn Fn(usize) -> DMatrix<f64>, r: usize, c: usize| {
            (0..nn).fold(DMatrix::zeros(r, c), |acc, i| acc + g(i) / n)
        };
        let psi1_bar = mean_of(&psi1, d, q);
        let psi2_bar = mean_of(&psi2, q, q);
        let psi2_inv = inv(psi2_bar.clone());
        let d1k = mean_of(&psi3, d, d);
        let d2k = &psi1_bar * &psi2_inv * psi1_bar.transpose();
        let d3k = &psi1_bar * &psi2_inv;
        let d5k = &psi2_inv * mean_of(&psi, q, 1);
        let mut d4k = DMatrix::zeros(d, d);
        for i in 0..nn {
            let s = psi_tilde(i)
                + &d3k * psi(i) * g1
                + (psi1(i) - &psi1_bar) * &d5k * g1
                - &d3k * (psi2(i) - &psi2_bar) * &d5k * g1;
            d4k += &s * s.transpose() / n;
        }
        d1 += d1k / k;
        d2 += d2k / k;
        d4 += d4k / k;
    }
    let bread = &d1 + &d2 * g1;
    let bread_t = d1.transpose() + d2.transpose() * g1;
    inv(bread) * d4 * inv(bread_t)
}

/// `(R_Xᵀ(𝟙−κM)R_X)⁻¹ R_Xᵀ(𝟙−κM)R_Y` with `M = 𝟙 − Π`.
pub fn kclass(f: &ResidualFold, kappa: f64) -> DVector<f64> {
    let n = f.n();
    let m = DMatrix::identity(n, n) - projection(&f.ra);
    let w = DMatrix::identity(n, n) - m * kappa;
    let lhs = f.rx.transpose() * &w * &f.rx;
    let rhs = f.rx.transpose() * &w * y(f);
    (inv(lhs) * rhs).column(0).into_owned()
}

/// Smallest root of `det(ZᵀZ − λ Zᵀ M Z) = 0` for `Z = [R_Y | R_X]`, d = 1.
pub fn liml_kappa(f: &ResidualFold) -> f64 {
    assert_eq!(f.d(), 1);
    let n = f.n();
    let mut z = DMatrix::zeros(n, 2);
    z.set_column(0, &f.ry);
    z.set_column(1, &f.rx.column(0));
    let m = DMatrix::identity(n, n) - projection(&f.ra);
    let a = z.transpose() * &z;
    let b = z.transpose() * m * &z;
    let qa = b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)];
    let qb = -(a[(0, 0)] * b[(1, 1)] + a[(1, 1)] * b[(0, 0)] - a[(0, 1)] * b[(1, 0)] - a[(1, 0)] * b[(0, 1)]);
    let qc = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
    ((-qb - disc) / (2.0 * qa)).min((-qb + disc) / (2.0 * qa))
}

/// OLS of `R_Y` on `R_X` pooled over folds.
pub fn pooled_ols(folds: &[ResidualFold]) -> DVector<f64> {
    let d = folds[0].d();
    let mut lhs = DMatrix::zeros(d, d);
    let mut rhs = DMatrix::zeros(d, 1);
    for f in folds {
        lhs += f.rx.transpose() * &f.rx;
        rhs += f.rx.transpose() * y(f);
    }
    (inv(lhs) * rhs).column(0).into_owned()
}

/// `max|a − b| / max|b|`, a norm-wise relative error.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max().max(f64::MIN_POSITIVE)
}

pub fn rel_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max().max(f64::MIN_POSITIVE)
}

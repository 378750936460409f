//! TSLS-type DML point estimators (DML1 and DML2 assemblies) and the
//! sandwich variance estimator.

use nalgebra::{DMatrix, DVector};

use crate::data::ResidualFold;
use crate::error::{invalid, Result};
use crate::linalg::{inverse_guarded, solve_guarded, symmetrize, Projector};
use crate::stats::normal_quantile;

/// How per-fold quantities are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FoldWeighting {
    /// Weight `n_k / N`; reduces to `1/K` for equal fold sizes.
    #[default]
    SizeProportional,
    /// Plain `1/K`.
    Uniform,
}

impl FoldWeighting {
    pub fn weights(self, sizes: &[usize]) -> Vec<f64> {
        match self {
            FoldWeighting::Uniform => vec![1.0 / sizes.len() as f64; sizes.len()],
            FoldWeighting::SizeProportional => {
                let total: usize = sizes.iter().sum();
                sizes.iter().map(|&n| n as f64 / total as f64).collect()
            }
        }
    }
}

/// Normalized cross-moments of one fold, e.g. `sxa = R_Xᵀ R_A / n_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldMoments {
    pub sxa: DMatrix<f64>,
    pub saa: DMatrix<f64>,
    pub sax: DMatrix<f64>,
    pub sxx: DMatrix<f64>,
    pub say: DMatrix<f64>,
    pub sxy: DMatrix<f64>,
    pub n: usize,
}

impl FoldMoments {
    pub fn new(fold: &ResidualFold) -> Self {
        let n = fold.n() as f64;
        let ry = fold.ry_matrix();
        let sxa = fold.rx.transpose() * &fold.ra / n;
        Self {
            sax: sxa.transpose(),
            sxa,
            saa: symmetrize(&(fold.ra.transpose() * &fold.ra / n)),
            sxx: symmetrize(&(fold.rx.transpose() * &fold.rx / n)),
            say: fold.ra.transpose() * &ry / n,
            sxy: fold.rx.transpose() * &ry / n,
            n: fold.n(),
        }
    }
}

/// One fold with its projection and the products reused across estimators.
#[derive(Debug, Clone)]
pub(crate) struct PreparedFold {
    pub fold: ResidualFold,
    pub moments: FoldMoments,
    pub pi_rx: DMatrix<f64>,
    pub pi_ry: DMatrix<f64>,
    /// `R_Xᵀ Π R_X / n_k`
    pub xpx: DMatrix<f64>,
    /// `R_Xᵀ Π R_Y / n_k`
    pub xpy: DMatrix<f64>,
}

/// Residual folds prepared once and shared by every estimator evaluated on
/// the same split (DML, all γ values, k-class).
#[derive(Debug, Clone)]
pub struct PreparedFolds {
    pub(crate) folds: Vec<PreparedFold>,
    pub(crate) weights: Vec<f64>,
    n_total: usize,
}

impl PreparedFolds {
    pub fn new(folds: &[ResidualFold], weighting: FoldWeighting) -> Result<Self> {
        if folds.is_empty() {
            return Err(invalid("no residual folds"));
        }
        let q = folds[0].q();
        let d = folds[0].d();
        for f in folds {
            if f.q() != q || f.d() != d {
                return Err(invalid("residual folds disagree on dimensions"));
            }
            if f.n() < q {
                return Err(invalid(format!(
                    "fold {} has {} rows, fewer than q = {q}",
                    f.fold_index,
                    f.n()
                )));
            }
        }
        if q < d {
            return Err(invalid(format!("need q >= d, got q = {q}, d = {d}")));
        }
        let sizes: Vec<usize> = folds.iter().map(ResidualFold::n).collect();
        let prepared = folds
            .iter()
            .map(|f| {
                let proj = Projector::new(&f.ra);
                let n = f.n() as f64;
                let pi_rx = proj.apply(&f.rx);
                let pi_ry = proj.apply(&f.ry_matrix());
                let xpx = symmetrize(&(pi_rx.transpose() * &pi_rx / n));
                let xpy = pi_rx.transpose() * &pi_ry / n;
                PreparedFold {
                    fold: f.clone(),
                    moments: FoldMoments::new(f),
                    pi_rx,
                    pi_ry,
                    xpx,
                    xpy,
                }
            })
            .collect();
        Ok(Self {
            folds: prepared,
            weights: weighting.weights(&sizes),
            n_total: sizes.iter().sum(),
        })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }
    pub fn q(&self) -> usize {
        self.folds[0].fold.q()
    }
    pub fn d(&self) -> usize {
        self.folds[0].fold.d()
    }
    pub fn n_total(&self) -> usize {
        self.n_total
    }
    pub fn residual_folds(&self) -> impl Iterator<Item = &ResidualFold> {
        self.folds.iter().map(|p| &p.fold)
    }

    pub(crate) fn weighted_sum<F>(&self, f: F) -> DMatrix<f64>
    where
        F: Fn(&PreparedFold) -> DMatrix<f64>,
    {
        let mut acc: Option<DMatrix<f64>> = None;
        for (pf, w) in self.folds.iter().zip(&self.weights) {
            let term = f(pf) * *w;
            acc = Some(match acc {
                Some(a) => a + term,
                None => term,
            });
        }
        acc.expect("at least one fold")
    }

    /// DML2: fold-averaged TSLS normal equations, solved once.
    pub fn dml2(&self) -> Result<DVector<f64>> {
        let lhs = self.weighted_sum(|p| p.xpx.clone());
        let rhs = self.weighted_sum(|p| p.xpy.clone());
        Ok(solve_guarded(&lhs, &rhs, "DML2 averaged matrix")?.column(0).into_owned())
    }

    /// Per-fold TSLS estimates.
    pub fn per_fold_tsls(&self) -> Result<Vec<DVector<f64>>> {
        self.folds
            .iter()
            .map(|p| {
                let ctx = format!("DML1 fold {}", p.fold.fold_index);
                Ok(solve_guarded(&p.xpx, &p.xpy, &ctx)?.column(0).into_owned())
            })
            .collect()
    }

    /// DML1: weighted mean of the per-fold TSLS estimates.
    pub fn dml1(&self) -> Result<DVector<f64>> {
        let per_fold = self.per_fold_tsls()?;
        let mut beta = DVector::zeros(self.d());
        for (b, w) in per_fold.iter().zip(&self.weights) {
            beta += b * *w;
        }
        Ok(beta)
    }

    /// Sandwich estimate of the asymptotic variance of `√N(β̂ − β₀)`:
    /// `Ĵ₀ · avg(ψψᵀ) · Ĵ₀ᵀ` with `ψ = R_A (R_Y − R_Xᵀβ̂)` and
    /// `Ĵ_k = (S_XA S_AA⁻¹ S_AX)⁻¹ S_XA S_AA⁻¹`.
    pub fn dml_variance(&self, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
        if beta.len() != self.d() {
            return Err(invalid(format!("beta has length {}, expected {}", beta.len(), self.d())));
        }
        let mut j0 = DMatrix::zeros(self.d(), self.q());
        let mut omega = DMatrix::zeros(self.q(), self.q());
        for (p, w) in self.folds.iter().zip(&self.weights) {
            let m = &p.moments;
            let ctx = format!("variance fold {}", p.fold.fold_index);
            let saa_inv = inverse_guarded(&m.saa, &ctx)?;
            let xa_saa = &m.sxa * &saa_inv;
            let bread = &xa_saa * &m.sax;
            let jk = solve_guarded(&bread, &xa_saa, &ctx)?;
            j0 += jk * *w;

            let resid = &p.fold.ry - &p.fold.rx * beta;
            let mut psi = p.fold.ra.clone();
            for (i, mut row) in psi.row_iter_mut().enumerate() {
                row *= resid[i];
            }
            omega += (psi.transpose() * &psi) * (*w / p.fold.n() as f64);
        }
        Ok(symmetrize(&(&j0 * omega * j0.transpose())))
    }
}

/// DML2 estimate with size-proportional fold weights.
pub fn dml2_estimate(folds: &[ResidualFold]) -> Result<DVector<f64>> {
    PreparedFolds::new(folds, FoldWeighting::default())?.dml2()
}

/// DML1 estimate with size-proportional fold weights.
pub fn dml1_estimate(folds: &[ResidualFold]) -> Result<DVector<f64>> {
    PreparedFolds::new(folds, FoldWeighting::default())?.dml1()
}

pub fn dml_variance(folds: &[ResidualFold], beta_hat: &DVector<f64>) -> Result<DMatrix<f64>> {
    PreparedFolds::new(folds, FoldWeighting::default())?.dml_variance(beta_hat)
}

/// Two-sided normal interval `β_j ± z_{(1+level)/2} · sqrt(σ²_jj / N)`.
pub fn confidence_interval(
    beta: &DVector<f64>,
    sigma2: &DMatrix<f64>,
    n: usize,
    level: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if n < 1 {
        return Err(invalid("N must be at least 1"));
    }
    if sigma2.nrows() != beta.len() || sigma2.ncols() != beta.len() {
        return Err(invalid("sigma2 does not match beta"));
    }
    let z = normal_quantile(0.5 * (1.0 + level));
    let half = DVector::from_fn(beta.len(), |j, _| {
        let var = sigma2[(j, j)].max(0.0);
        if var == 0.0 {
            0.0
        } else {
            z * (var / n as f64).sqrt()
        }
    });
    Ok((beta - &half, beta + &half))
}

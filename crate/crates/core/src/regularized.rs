//! Regularized estimator b̂^γ, its variance σ̂²(γ), data-driven γ selection
//! and the per-split part of the regsDML algorithm.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crossfit::{compute_residuals_with, NuisanceSource};
use crate::data::{partition_folds, Dataset, EstimateResult, Method};
use crate::error::{invalid, Error, Result};
use crate::estimators::{FoldWeighting, PreparedFolds};
use crate::linalg::{inverse_guarded, solve_guarded, symmetrize};
use crate::stats::median;

/// A regularization strength; `Infinite` stands for plain TSLS-type DML.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Finite(f64),
    Infinite,
}

impl Gamma {
    /// `f64::INFINITY` for the sentinel.
    pub fn as_f64(self) -> f64 {
        match self {
            Gamma::Finite(g) => g,
            Gamma::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Gamma::Infinite)
    }

    pub fn scaled(self, factor: f64) -> Gamma {
        match self {
            Gamma::Finite(g) => Gamma::Finite(g * factor),
            Gamma::Infinite => Gamma::Infinite,
        }
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Finite(g) => write!(f, "{g}"),
            Gamma::Infinite => f.write_str("inf"),
        }
    }
}

/// Candidate values of γ for the selection step.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaGrid {
    values: Vec<f64>,
    includes_infinity: bool,
}

impl GammaGrid {
    pub fn new(values: Vec<f64>, includes_infinity: bool) -> Result<Self> {
        if values.is_empty() && !includes_infinity {
            return Err(invalid("gamma grid is empty"));
        }
        if values.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(invalid("gamma grid values must be finite and non-negative"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("gamma grid values must be strictly increasing"));
        }
        Ok(Self {
            values,
            includes_infinity,
        })
    }

    /// `{0}`, 40 geometric points from 1e-3 to 1e5, and the ∞ sentinel.
    pub fn default_grid() -> Self {
        let points = 40;
        let (lo, hi) = (1e-3f64.ln(), 1e5f64.ln());
        let mut values = vec![0.0];
        values.extend((0..points).map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp()));
        Self {
            values,
            includes_infinity: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn includes_infinity(&self) -> bool {
        self.includes_infinity
    }

    /// Finite values in increasing order followed by the sentinel, if present.
    pub fn candidates(&self) -> Vec<Gamma> {
        let mut out: Vec<Gamma> = self.values.iter().map(|&g| Gamma::Finite(g)).collect();
        if self.includes_infinity {
            out.push(Gamma::Infinite);
        }
        out
    }
}

impl Default for GammaGrid {
    fn default() -> Self {
        Self::default_grid()
    }
}

impl FromStr for GammaGrid {
    type Err = Error;

    /// `default`, or a comma-separated list such as `0,1,10,inf`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("default") {
            return Ok(Self::default_grid());
        }
        let mut values = Vec::new();
        let mut inf = false;
        for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            if token.eq_ignore_ascii_case("inf") || token.eq_ignore_ascii_case("infinity") {
                inf = true;
                continue;
            }
            let g: f64 = token
                .parse()
                .map_err(|_| invalid(format!("gamma grid: cannot parse '{token}'")))?;
            values.push(g);
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        Self::new(values, inf)
    }
}

/// How fold-level systems are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Assembly {
    /// Average the per-fold estimates.
    Dml1,
    /// Average the per-fold normal equations, then solve once.
    #[default]
    Dml2,
}

/// Averaged D̂₁, D̂₂, D̂₄ and the per-fold D̂₃ᵏ, D̂₅ᵏ of the σ̂²(γ) estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct DMatrices {
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
    pub d4: DMatrix<f64>,
    pub d3: Vec<DMatrix<f64>>,
    pub d5: Vec<DMatrix<f64>>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("gamma must be finite and non-negative, got {gamma}")))
    }
}

impl PreparedFolds {
    fn assemble(
        &self,
        assembly: Assembly,
        context: &str,
        system: impl Fn(&crate::estimators::PreparedFold) -> (DMatrix<f64>, DMatrix<f64>),
    ) -> Result<DVector<f64>> {
        match assembly {
            Assembly::Dml2 => {
                let lhs = self.weighted_sum(|p| system(p).0);
                let rhs = self.weighted_sum(|p| system(p).1);
                Ok(solve_guarded(&lhs, &rhs, context)?.column(0).into_owned())
            }
            Assembly::Dml1 => {
                let mut b = DVector::zeros(self.d());
                for (p, w) in self.folds.iter().zip(&self.weights) {
                    let (lhs, rhs) = system(p);
                    let ctx = format!("{context}, fold {}", p.fold.fold_index);
                    b += solve_guarded(&lhs, &rhs, &ctx)?.column(0) * *w;
                }
                Ok(b)
            }
        }
    }

    /// b̂^γ from the transformed residuals `R̃ = R̂ + (√γ − 1) Π R̂`.
    pub fn regdml(&self, gamma: f64, assembly: Assembly) -> Result<DVector<f64>> {
        check_gamma(gamma)?;
        let c = gamma.sqrt() - 1.0;
        self.assemble(assembly, "regularized system", |p| {
            let n = p.fold.n() as f64;
            let tx = &p.fold.rx + &p.pi_rx * c;
            let ty = p.fold.ry_matrix() + &p.pi_ry * c;
            (symmetrize(&(tx.transpose() * &tx / n)), tx.transpose() * ty / n)
        })
    }

    /// b̂^γ from the normal equations `R̂_Xᵀ(𝟙 + (γ − 1)Π)R̂_X b = R̂_Xᵀ(𝟙 + (γ − 1)Π)R̂_Y`.
    pub fn regdml_normal_form(&self, gamma: f64, assembly: Assembly) -> Result<DVector<f64>> {
        check_gamma(gamma)?;
        self.assemble(assembly, "regularized system", |p| {
            let m = &p.moments;
            (&m.sxx + &p.xpx * (gamma - 1.0), &m.sxy + &p.xpy * (gamma - 1.0))
        })
    }

    pub fn d_matrices(&self, gamma: f64, b: &DVector<f64>) -> Result<DMatrices> {
        check_gamma(gamma)?;
        if b.len() != self.d() {
            return Err(invalid(format!("b has length {}, expected {}", b.len(), self.d())));
        }
        let g1 = gamma - 1.0;
        let (d, q) = (self.d(), self.q());
        let mut d1 = DMatrix::zeros(d, d);
        let mut d2 = DMatrix::zeros(d, d);
        let mut d4 = DMatrix::zeros(d, d);
        let mut d3s = Vec::with_capacity(self.k());
        let mut d5s = Vec::with_capacity(self.k());
        for (p, w) in self.folds.iter().zip(&self.weights) {
            let (ra, rx) = (&p.fold.ra, &p.fold.rx);
            let m = &p.moments;
            let n = p.fold.n();
            let ctx = format!("regularized variance fold {}", p.fold.fold_index);
            let saa_inv = inverse_guarded(&m.saa, &ctx)?;
            let d3 = &m.sxa * &saa_inv;
            let d2k = symmetrize(&(&d3 * &m.sax));
            let e = &p.fold.ry - rx * b;
            let psi_bar = ra.transpose() * &e / n as f64;
            let d5 = &saa_inv * DMatrix::from_column_slice(q, 1, psi_bar.as_slice());

            // Row i of `score` is ψ̄′ᵢ.
            let ra_d5 = ra * &d5; // n×1: R_A,iᵀ D̂₅
            let mean3 = &m.sxa * &d5; // d×1
            let mean4 = &d3 * &m.saa * &d5; // d×1
            let ra_d3t = ra * d3.transpose(); // n×d: (D̂₃ R_A,i)ᵀ
            let mut score = DMatrix::zeros(n, d);
            for i in 0..n {
                let (ei, si) = (e[i], ra_d5[(i, 0)]);
                for j in 0..d {
                    let tilde = rx[(i, j)] * ei;
                    let t2 = ra_d3t[(i, j)] * ei;
                    let t3 = rx[(i, j)] * si - mean3[(j, 0)];
                    let t4 = ra_d3t[(i, j)] * si - mean4[(j, 0)];
                    score[(i, j)] = tilde + g1 * (t2 + t3 - t4);
                }
            }
            let d4k = symmetrize(&(score.transpose() * &score / n as f64));

            d1 += &m.sxx * *w;
            d2 += d2k * *w;
            d4 += d4k * *w;
            d3s.push(d3);
            d5s.push(d5);
        }
        Ok(DMatrices {
            d1,
            d2,
            d4,
            d3: d3s,
            d5: d5s,
        })
    }

    /// σ̂²(γ) = (D̂₁ + (γ−1)D̂₂)⁻¹ D̂₄ (D̂₁ + (γ−1)D̂₂)⁻ᵀ.
    pub fn regdml_variance(&self, gamma: f64, b: &DVector<f64>) -> Result<DMatrix<f64>> {
        let dm = self.d_matrices(gamma, b)?;
        let bread = &dm.d1 + &dm.d2 * (gamma - 1.0);
        let left = solve_guarded(&bread, &dm.d4, "regularized variance bread")?;
        let full = solve_guarded(&bread, &left.transpose(), "regularized variance bread")?;
        Ok(symmetrize(&full))
    }
}

pub fn regdml_estimate(
    folds: &[crate::data::ResidualFold],
    gamma: f64,
    assembly: Assembly,
) -> Result<DVector<f64>> {
    PreparedFolds::new(folds, FoldWeighting::default())?.regdml(gamma, assembly)
}

pub fn regdml_variance(
    folds: &[crate::data::ResidualFold],
    gamma: f64,
    b_gamma: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    PreparedFolds::new(folds, FoldWeighting::default())?.regdml_variance(gamma, b_gamma)
}

/// `max(1, ln √N)`.
pub fn a_multiplier(n: usize) -> f64 {
    (0.5 * (n as f64).ln()).max(1.0)
}

/// Objective values of the γ search, `None` where the evaluation was singular.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSelection {
    pub gamma_hat: Gamma,
    pub objectives: Vec<(Gamma, Option<f64>)>,
}

/// Minimizer over evaluated candidates, scanned in grid order so that ties go
/// to the smallest γ.
pub fn argmin_objective(objectives: &[(Gamma, Option<f64>)]) -> Result<Gamma> {
    let mut best: Option<(Gamma, f64)> = None;
    for &(g, value) in objectives {
        if let Some(v) = value.filter(|v| v.is_finite()) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((g, v));
            }
        }
    }
    best.map(|(g, _)| g).ok_or(Error::SelectionFailed)
}

/// γ̂ = argmin σ̂²(γ)/N + (b̂^γ − β̂)²; the ∞ sentinel scores σ̂²_DML/N.
pub fn select_gamma(
    prepared: &PreparedFolds,
    grid: &GammaGrid,
    beta_dml: f64,
    sigma2_dml: f64,
    n: usize,
    assembly: Assembly,
) -> Result<GammaSelection> {
    if prepared.d() != 1 {
        return Err(Error::Unsupported("gamma selection requires d = 1".into()));
    }
    let n_f = n as f64;
    let objectives: Vec<(Gamma, Option<f64>)> = grid
        .candidates()
        .into_iter()
        .map(|g| {
            let value = match g {
                Gamma::Infinite => Some(sigma2_dml / n_f),
                Gamma::Finite(gamma) => prepared.regdml(gamma, assembly).ok().and_then(|b| {
                    let s2 = prepared.regdml_variance(gamma, &b).ok()?;
                    Some(s2[(0, 0)] / n_f + (b[0] - beta_dml).powi(2))
                }),
            };
            (g, value)
        })
        .collect();
    let gamma_hat = argmin_objective(&objectives)?;
    Ok(GammaSelection { gamma_hat, objectives })
}

/// Quantities from one sample split of the regsDML algorithm (d = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionRecord {
    pub beta_dml: f64,
    pub sigma2_dml: f64,
    pub beta_reg: f64,
    pub sigma2_reg: f64,
    pub gamma_hat: Gamma,
    pub gamma_prime: Gamma,
    /// The ∞ sentinel won, so the reg slots hold the DML values.
    pub fallback: bool,
    pub seed: u64,
}

/// DML and regularized quantities on prepared folds of one split.
pub fn regsdml_record(
    prepared: &PreparedFolds,
    grid: &GammaGrid,
    n: usize,
    assembly: Assembly,
    seed: u64,
) -> Result<RepetitionRecord> {
    if prepared.d() != 1 {
        return Err(Error::Unsupported("regsDML requires d = 1".into()));
    }
    let beta = match assembly {
        Assembly::Dml2 => prepared.dml2()?,
        Assembly::Dml1 => prepared.dml1()?,
    };
    let sigma2 = prepared.dml_variance(&beta)?[(0, 0)];
    let selection = select_gamma(prepared, grid, beta[0], sigma2, n, assembly)?;
    let gamma_prime = selection.gamma_hat.scaled(a_multiplier(n));
    let (beta_reg, sigma2_reg) = match gamma_prime {
        Gamma::Infinite => (beta[0], sigma2),
        Gamma::Finite(g) => {
            let b = prepared.regdml(g, assembly)?;
            (b[0], prepared.regdml_variance(g, &b)?[(0, 0)])
        }
    };
    Ok(RepetitionRecord {
        beta_dml: beta[0],
        sigma2_dml: sigma2,
        beta_reg,
        sigma2_reg,
        gamma_hat: selection.gamma_hat,
        gamma_prime,
        fallback: gamma_prime.is_infinite(),
        seed,
    })
}

/// One split of the regsDML algorithm: partition, cross-fit once, evaluate
/// DML and every γ on the same residuals.
pub fn regsdml_single_split<R: Rng + ?Sized>(
    data: &Dataset,
    k: usize,
    source: &NuisanceSource,
    grid: &GammaGrid,
    assembly: Assembly,
    rng: &mut R,
) -> Result<RepetitionRecord> {
    let seed: u64 = rng.random();
    let mut split_rng = ChaCha8Rng::seed_from_u64(seed);
    let partition = partition_folds(data.n(), k, &mut split_rng)?;
    let folds = compute_residuals_with(data, &partition, source, &mut split_rng)?;
    let prepared = PreparedFolds::new(&folds, FoldWeighting::default())?;
    regsdml_record(&prepared, grid, data.n(), assembly, seed)
}

/// `(median βₛ, median(σ̂ₛ² + (βₛ − β_med)²))`.
pub fn median_with_correction(betas: &[f64], sigma2s: &[f64]) -> (f64, f64) {
    let beta_med = median(betas);
    let corrected: Vec<f64> = betas
        .iter()
        .zip(sigma2s)
        .map(|(b, s)| s + (b - beta_med).powi(2))
        .collect();
    (beta_med, median(&corrected))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub beta_med: f64,
    pub sigma2_med: f64,
    pub beta_reg_med: f64,
    pub sigma2_reg_med: f64,
}

pub fn aggregate_repetitions(records: &[RepetitionRecord]) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(invalid("no repetitions to aggregate"));
    }
    let col = |f: fn(&RepetitionRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let (beta_med, sigma2_med) = median_with_correction(&col(|r| r.beta_dml), &col(|r| r.sigma2_dml));
    let (beta_reg_med, sigma2_reg_med) = median_with_correction(&col(|r| r.beta_reg), &col(|r| r.sigma2_reg));
    Ok(Aggregate {
        beta_med,
        sigma2_med,
        beta_reg_med,
        sigma2_reg_med,
    })
}

/// Takes the regularized quantities iff their variance is strictly smaller.
/// The returned `sigma2` is the chosen median variance of `√N β̂`.
pub fn select_final(agg: &Aggregate, gamma_reg: Option<f64>, n: usize, level: f64) -> Result<EstimateResult> {
    let (beta, sigma2, gamma) = if agg.sigma2_reg_med < agg.sigma2_med {
        (agg.beta_reg_med, agg.sigma2_reg_med, gamma_reg)
    } else {
        (agg.beta_med, agg.sigma2_med, None)
    };
    EstimateResult::new(
        Method::RegsDml,
        DVector::from_element(1, beta),
        DMatrix::from_element(1, 1, sigma2),
        n,
        level,
        gamma,
    )
}

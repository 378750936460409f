//! Numerical checks of Neyman orthogonality and of the bias from using the
//! raw instrument instead of its residual.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::crossfit::compute_residuals;
use crate::data::{partition_folds, ResidualFold};
use crate::error::{invalid, Error, Result};
use crate::estimators::{FoldWeighting, PreparedFolds};
use crate::nuisance::RegressorSpec;
use crate::sim::scenario::{simulate, ScenarioKind, ScenarioSpec};
use crate::stats::{mean, sample_sd};

/// Which moment function to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Score {
    /// `(A − m_A)(Y − m_Y − (X − m_X)β)`.
    NeymanPsi,
    /// `A (Y − m_Y − (X − m_X)β)`, the raw instrument.
    NaiveVarphi,
}

/// Monte Carlo estimate of a directional derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Derivative {
    pub value: f64,
    pub std_error: f64,
}

impl Derivative {
    /// `|value| / std_error`.
    pub fn z(&self) -> f64 {
        self.value.abs() / self.std_error
    }
}

/// Derivative at `r = 0` of `E[score]` under `η⁰ + r·(η − η⁰)`, where the
/// direction shifts every conditional mean by +1. Central differences are
/// taken per observation, so the standard error is that of a sample mean.
pub fn orthogonality_diagnostic<R: Rng + ?Sized>(
    score: Score,
    spec: &ScenarioSpec,
    mc_size: usize,
    step: f64,
    rng: &mut R,
) -> Result<Derivative> {
    if mc_size < 1000 {
        return Err(invalid(format!("mc_size must be at least 1000, got {mc_size}")));
    }
    if !(step > 0.0 && step <= 0.1) {
        return Err(invalid(format!("step must lie in (0, 0.1], got {step}")));
    }
    let sim = simulate(spec, mc_size, rng)?;
    let data = &sim.data;
    if data.q() != 1 || data.d() != 1 {
        return Err(Error::Unsupported("orthogonality diagnostic needs q = d = 1".into()));
    }
    let means = sim
        .means
        .as_ref()
        .ok_or_else(|| invalid(format!("scenario {} has no closed-form conditional means", spec.kind)))?;
    let b = spec.beta0;
    let eval = |i: usize, r: f64| {
        let a = data.a()[(i, 0)];
        let ra = a - means.a[(i, 0)] - r;
        let rx = data.x()[(i, 0)] - means.x[(i, 0)] - r;
        let ry = data.y()[i] - means.y[i] - r;
        let inst = match score {
            Score::NeymanPsi => ra,
            Score::NaiveVarphi => a,
        };
        inst * (ry - rx * b)
    };
    let diffs: Vec<f64> = (0..mc_size)
        .map(|i| (eval(i, step) - eval(i, -step)) / (2.0 * step))
        .collect();
    Ok(Derivative {
        value: mean(&diffs),
        std_error: sample_sd(&diffs) / (mc_size as f64).sqrt(),
    })
}

/// Standardized biases of the DML estimator with `R̂_A` (proper) and with the
/// raw `A` (naive) as instrument.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaiveInstrumentSummary {
    pub proper_bias: f64,
    pub naive_bias: f64,
    pub proper_estimates: Vec<f64>,
    pub naive_estimates: Vec<f64>,
}

fn standardized_bias(estimates: &[f64], fallback_se: f64, beta0: f64) -> f64 {
    let sd = if estimates.len() > 1 { sample_sd(estimates) } else { fallback_se };
    (mean(estimates) - beta0) / sd
}

/// Runs `m` datasets of the twenty-covariate scenario and compares both
/// instrument choices on the same cross-fitted residuals.
pub fn naive_instrument_diagnostic<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    k: usize,
    learner: &RegressorSpec,
    rng: &mut R,
) -> Result<NaiveInstrumentSummary> {
    if m < 1 {
        return Err(invalid("M must be at least 1"));
    }
    let spec = ScenarioSpec::new(ScenarioKind::NaiveInstrumentSem);
    let seeds: Vec<u64> = (0..m).map(|_| rng.random()).collect();
    // (proper β̂, naive β̂, proper SE, naive SE) per run
    let runs = seeds
        .par_iter()
        .map(|&seed| -> Result<[f64; 4]> {
            let mut run_rng = ChaCha8Rng::seed_from_u64(seed);
            let data = simulate(&spec, n, &mut run_rng)?.data;
            let partition = partition_folds(n, k, &mut run_rng)?;
            let folds = compute_residuals(&data, &partition, learner, &mut run_rng)?;
            let naive_folds = folds
                .iter()
                .map(|f| {
                    let rows = partition.fold(f.fold_index);
                    let a = DMatrix::from_fn(rows.len(), data.q(), |i, j| data.a()[(rows[i], j)]);
                    ResidualFold::new(a, f.rx.clone(), f.ry.clone(), f.fold_index)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = [0.0; 4];
            for (slot, fs) in [&folds, &naive_folds].into_iter().enumerate() {
                let prepared = PreparedFolds::new(fs, FoldWeighting::default())?;
                let beta = prepared.dml2()?;
                let sigma2 = prepared.dml_variance(&beta)?;
                out[slot] = beta[0];
                out[slot + 2] = (sigma2[(0, 0)] / n as f64).sqrt();
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |j: usize| runs.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let (proper, naive) = (col(0), col(1));
    Ok(NaiveInstrumentSummary {
        proper_bias: standardized_bias(&proper, mean(&col(2)), spec.beta0),
        naive_bias: standardized_bias(&naive, mean(&col(3)), spec.beta0),
        proper_estimates: proper,
        naive_estimates: naive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argument_checks() {
        let spec = ScenarioSpec::new(ScenarioKind::LinearGaussianOracle);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(orthogonality_diagnostic(Score::NeymanPsi, &spec, 999, 0.01, &mut rng).is_err());
        assert!(orthogonality_diagnostic(Score::NeymanPsi, &spec, 1000, 0.2, &mut rng).is_err());
        let forest = ScenarioSpec::new(ScenarioKind::ForestSem);
        assert!(orthogonality_diagnostic(Score::NeymanPsi, &forest, 1000, 0.01, &mut rng).is_err());
    }
}

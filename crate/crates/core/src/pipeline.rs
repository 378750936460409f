//! Repeated sample splitting for every estimator: cross-fit once per split,
//! evaluate all requested methods on the shared residuals, then aggregate the
//! splits by medians with the spread correction.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::crossfit::{compute_residuals_with, NuisanceSource};
use crate::data::{partition_folds, Dataset, EstimateResult, Method};
use crate::error::{invalid, Error, Result};
use crate::estimators::{FoldWeighting, PreparedFolds};
use crate::kclass::{fuller_alpha, kappa_for_folds};
use crate::linalg::symmetrize;
use crate::regularized::{
    aggregate_repetitions, regsdml_record, select_final, Aggregate, Assembly, GammaGrid, RepetitionRecord,
};
use crate::stats::median;

/// Settings shared by every estimator run on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationConfig {
    /// Number of folds.
    pub k: usize,
    /// Number of independent sample splits.
    pub s: usize,
    pub grid: GammaGrid,
    pub level: f64,
    pub assembly: Assembly,
    pub weighting: FoldWeighting,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            k: 2,
            s: 100,
            grid: GammaGrid::default_grid(),
            level: 0.95,
            assembly: Assembly::Dml2,
            weighting: FoldWeighting::SizeProportional,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k < 1 || self.s < 1 {
            return Err(invalid("K and S must be at least 1"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(invalid(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.k > 1 && n < 2 * self.k {
            return Err(invalid(format!("N = {n} is too small for K = {} folds", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Draw {
    beta: DVector<f64>,
    sigma2: DMatrix<f64>,
    gamma: Option<f64>,
}

#[derive(Debug)]
struct Split {
    dml2: Option<Result<Draw>>,
    dml1: Option<Result<Draw>>,
    reg: Option<Result<RepetitionRecord>>,
    kclass: Vec<(Method, Result<Draw>)>,
}

/// Per-method results plus the two regsDML candidates.
#[derive(Debug)]
pub struct FitOutput {
    pub results: Vec<(Method, Result<EstimateResult>)>,
    /// Medians of the DML and regularized quantities behind regsDML, if requested.
    pub regs_aggregate: Option<Aggregate>,
}

impl FitOutput {
    pub fn get(&self, method: Method) -> Option<&Result<EstimateResult>> {
        self.results.iter().find(|(m, _)| *m == method).map(|(_, r)| r)
    }
}

fn dedup(methods: &[Method]) -> Vec<Method> {
    let mut out: Vec<Method> = Vec::with_capacity(methods.len());
    for &m in methods {
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

fn run_split(
    data: &Dataset,
    source: &NuisanceSource,
    methods: &[Method],
    config: &EstimationConfig,
    seed: u64,
) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let partition = partition_folds(data.n(), config.k, &mut rng)?;
    let folds = compute_residuals_with(data, &partition, source, &mut rng)?;
    let prepared = PreparedFolds::new(&folds, config.weighting)?;
    let n = data.n();

    let dml = |beta: Result<DVector<f64>>| -> Result<Draw> {
        let beta = beta?;
        let sigma2 = prepared.dml_variance(&beta)?;
        Ok(Draw {
            beta,
            sigma2,
            gamma: None,
        })
    };
    let wants = |m: Method| methods.contains(&m);
    let dml2 = wants(Method::Dml2).then(|| dml(prepared.dml2()));
    let dml1 = wants(Method::Dml1).then(|| dml(prepared.dml1()));
    let reg = (wants(Method::RegDml) || wants(Method::RegsDml))
        .then(|| regsdml_record(&prepared, &config.grid, n, config.assembly, seed));
    let kclass = methods
        .iter()
        .filter(|m| fuller_alpha(**m).is_some())
        .map(|&m| {
            let draw = kappa_for_folds(&prepared, m).and_then(|kr| {
                let beta = prepared.regdml(kr.gamma, config.assembly)?;
                let sigma2 = prepared.regdml_variance(kr.gamma, &beta)?;
                Ok(Draw {
                    beta,
                    sigma2,
                    gamma: Some(kr.gamma),
                })
            });
            (m, draw)
        })
        .collect();
    Ok(Split { dml2, dml1, reg, kclass })
}

/// Coordinatewise medians; for d = 1 exactly `median_s(σ̂ₛ² + (β̂ₛ − β̂_med)²)`.
fn aggregate_draws(draws: &[&Draw]) -> (DVector<f64>, DMatrix<f64>, Option<f64>) {
    let d = draws[0].beta.len();
    let beta_med = DVector::from_fn(d, |j, _| median(&draws.iter().map(|r| r.beta[j]).collect::<Vec<_>>()));
    let sigma2_med = DMatrix::from_fn(d, d, |j, l| {
        let vals: Vec<f64> = draws
            .iter()
            .map(|r| r.sigma2[(j, l)] + (r.beta[j] - beta_med[j]) * (r.beta[l] - beta_med[l]))
            .collect();
        median(&vals)
    });
    let gammas: Vec<f64> = draws.iter().filter_map(|r| r.gamma).collect();
    let gamma = (!gammas.is_empty()).then(|| median(&gammas));
    (beta_med, symmetrize(&sigma2_med), gamma)
}

fn collect<'a, T>(items: impl Iterator<Item = &'a Result<T>>) -> Result<Vec<&'a T>>
where
    T: 'a,
{
    items
        .map(|r| r.as_ref().map_err(Error::duplicate))
        .collect()
}

/// Runs every requested method over `config.s` sample splits.
///
/// Failures of the shared steps (partitioning, cross-fitting) are returned
/// as `Err`; failures of an individual method are reported in its slot.
pub fn estimate_methods<R: Rng + ?Sized>(
    data: &Dataset,
    source: &NuisanceSource,
    methods: &[Method],
    config: &EstimationConfig,
    rng: &mut R,
) -> Result<FitOutput> {
    config.validate(data.n())?;
    let methods = dedup(methods);
    if methods.is_empty() {
        return Err(invalid("no methods requested"));
    }
    let seeds: Vec<u64> = (0..config.s).map(|_| rng.random()).collect();
    let splits = seeds
        .par_iter()
        .map(|&seed| run_split(data, source, &methods, config, seed))
        .collect::<Result<Vec<Split>>>()?;
    let (n, level) = (data.n(), config.level);

    let finish = |method: Method, draws: Result<Vec<&Draw>>| -> Result<EstimateResult> {
        let (beta, sigma2, gamma) = aggregate_draws(&draws?);
        EstimateResult::new(method, beta, sigma2, n, level, gamma)
    };
    let records: Option<Result<Vec<RepetitionRecord>>> = splits[0].reg.is_some().then(|| {
        splits
            .iter()
            .map(|s| s.reg.as_ref().expect("requested").as_ref().cloned().map_err(Error::duplicate))
            .collect()
    });
    let regs_aggregate = match &records {
        Some(Ok(r)) => Some(aggregate_repetitions(r)?),
        _ => None,
    };
    let median_gamma_prime = records.as_ref().and_then(|r| r.as_ref().ok()).map(|r| {
        median(&r.iter().map(|x| x.gamma_prime.as_f64()).collect::<Vec<_>>())
    });

    let results = methods
        .iter()
        .map(|&m| {
            let res = match m {
                Method::Dml2 => finish(m, collect(splits.iter().map(|s| s.dml2.as_ref().expect("requested")))),
                Method::Dml1 => finish(m, collect(splits.iter().map(|s| s.dml1.as_ref().expect("requested")))),
                Method::RegDml | Method::RegsDml => match (&records, &regs_aggregate) {
                    (Some(Err(e)), _) => Err(e.duplicate()),
                    (_, Some(agg)) if m == Method::RegsDml => select_final(agg, median_gamma_prime, n, level),
                    (_, Some(agg)) => EstimateResult::new(
                        m,
                        DVector::from_element(1, agg.beta_reg_med),
                        DMatrix::from_element(1, 1, agg.sigma2_reg_med),
                        n,
                        level,
                        median_gamma_prime,
                    ),
                    _ => unreachable!("records requested for regularized methods"),
                },
                _ => finish(
                    m,
                    collect(splits.iter().map(|s| {
                        &s.kclass.iter().find(|(km, _)| *km == m).expect("requested").1
                    })),
                ),
            };
            (m, res)
        })
        .collect();
    Ok(FitOutput {
        results,
        regs_aggregate,
    })
}

/// regsDML with its default companions, returning only the regsDML result.
pub fn regsdml<R: Rng + ?Sized>(
    data: &Dataset,
    source: &NuisanceSource,
    config: &EstimationConfig,
    rng: &mut R,
) -> Result<EstimateResult> {
    single(data, source, Method::RegsDml, config, rng)
}

/// A k-class method (LIML, Fuller1, Fuller4) aggregated over `config.s` splits.
pub fn kclass_estimate<R: Rng + ?Sized>(
    data: &Dataset,
    source: &NuisanceSource,
    method: Method,
    config: &EstimationConfig,
    rng: &mut R,
) -> Result<EstimateResult> {
    if fuller_alpha(method).is_none() {
        return Err(invalid(format!("{method} is not a k-class method")));
    }
    single(data, source, method, config, rng)
}

fn single<R: Rng + ?Sized>(
    data: &Dataset,
    source: &NuisanceSource,
    method: Method,
    config: &EstimationConfig,
    rng: &mut R,
) -> Result<EstimateResult> {
    let mut out = estimate_methods(data, source, &[method], config, rng)?;
    out.results.pop().expect("one method requested").1
}

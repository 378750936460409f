//! Monte Carlo harness: coverage, rejection rates and scaled interval lengths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::scenario::{simulate, ScenarioSpec, Simulated};
use crate::crossfit::NuisanceSource;
use crate::data::{EstimateResult, Method};
use crate::error::{invalid, Result};
use crate::nuisance::RegressorSpec;
use crate::pipeline::{estimate_methods, EstimationConfig, FitOutput};
use crate::stats::median;

/// Nuisance learner used in a simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    Fitted(RegressorSpec),
    /// The scenario's true conditional means; nothing is fitted.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub n: usize,
    pub m: usize,
    pub methods: Vec<Method>,
    pub learner: Learner,
    pub estimation: EstimationConfig,
}

/// Results of one method across all runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub failures: usize,
    pub coverage: f64,
    pub rejection_rate: f64,
    pub median_scaled_length: f64,
    /// Run index and CI length divided by the median DML length, successful runs only.
    pub ci_length_scaled: Vec<(usize, f64)>,
    pub estimates: Vec<f64>,
    /// Estimated asymptotic variance of `√N β̂` per successful run.
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub scenario: String,
    pub beta0: f64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub s: usize,
    pub level: f64,
    pub methods: Vec<MethodSummary>,
    /// Runs in which the regsDML variance differed from the smaller candidate.
    pub construction_violations: usize,
}

impl SimulationReport {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == method.name())
    }
}

/// Per-run outcome from an arbitrary estimation routine.
pub type RunOutcome = Result<FitOutput>;

/// Generic harness: draws `m` datasets with independent derived seeds, hands
/// each to `estimate`, and summarizes the first coordinate of every method.
pub fn run_with<R, F>(
    spec: &ScenarioSpec,
    n: usize,
    m: usize,
    methods: &[Method],
    estimation: &EstimationConfig,
    rng: &mut R,
    estimate: F,
) -> Result<SimulationReport>
where
    R: Rng + ?Sized,
    F: Fn(&Simulated, &mut ChaCha8Rng) -> RunOutcome + Sync,
{
    if m < 1 {
        return Err(invalid("M must be at least 1"));
    }
    let seeds: Vec<u64> = (0..m).map(|_| rng.random()).collect();
    let outcomes: Vec<RunOutcome> = seeds
        .par_iter()
        .map(|&seed| {
            let mut run_rng = ChaCha8Rng::seed_from_u64(seed);
            let sim = simulate(spec, n, &mut run_rng)?;
            estimate(&sim, &mut run_rng)
        })
        .collect();

    let result_of = |o: &RunOutcome, method: Method| -> Option<EstimateResult> {
        o.as_ref().ok()?.get(method)?.as_ref().ok().cloned()
    };
    let dml_lengths: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| result_of(o, Method::Dml2))
        .map(|r| r.ci_length(0))
        .collect();
    let reference = median(&dml_lengths);

    let mut summaries = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut s = MethodSummary {
            method: method.name().to_string(),
            runs: m,
            failures: 0,
            coverage: f64::NAN,
            rejection_rate: f64::NAN,
            median_scaled_length: f64::NAN,
            ci_length_scaled: Vec::new(),
            estimates: Vec::new(),
            sigma2: Vec::new(),
        };
        let (mut covered, mut rejected) = (0usize, 0usize);
        for (run, o) in outcomes.iter().enumerate() {
            match result_of(o, method) {
                Some(r) => {
                    covered += usize::from(r.covers(0, spec.beta0));
                    rejected += usize::from(!r.covers(0, 0.0));
                    s.ci_length_scaled.push((run, r.ci_length(0) / reference));
                    s.estimates.push(r.beta[0]);
                    s.sigma2.push(r.sigma2[(0, 0)]);
                }
                None => s.failures += 1,
            }
        }
        let ok = m - s.failures;
        if ok > 0 {
            s.coverage = covered as f64 / ok as f64;
            s.rejection_rate = rejected as f64 / ok as f64;
            let lengths: Vec<f64> = s.ci_length_scaled.iter().map(|(_, l)| *l).collect();
            s.median_scaled_length = median(&lengths);
        }
        summaries.push(s);
    }

    let construction_violations = outcomes
        .iter()
        .filter_map(|o| {
            let o = o.as_ref().ok()?;
            let agg = o.regs_aggregate?;
            let r = o.get(Method::RegsDml)?.as_ref().ok()?;
            Some(r.sigma2[(0, 0)] != agg.sigma2_med.min(agg.sigma2_reg_med))
        })
        .filter(|&bad| bad)
        .count();

    Ok(SimulationReport {
        scenario: spec.kind.name().to_string(),
        beta0: spec.beta0,
        n,
        m,
        k: estimation.k,
        s: estimation.s,
        level: estimation.level,
        methods: summaries,
        construction_violations,
    })
}

/// Monte Carlo study of the requested methods on one scenario. DML is always
/// evaluated because it defines the length scale.
pub fn run_monte_carlo<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    config: &MonteCarloConfig,
    rng: &mut R,
) -> Result<SimulationReport> {
    let mut methods = vec![Method::Dml2];
    methods.extend(config.methods.iter().copied().filter(|m| *m != Method::Dml2));
    match &config.learner {
        Learner::Fitted(spec) => spec.validate()?,
        Learner::Oracle if !spec.has_known_means() => {
            return Err(invalid(format!("scenario {} has no closed-form conditional means", spec.kind)));
        }
        Learner::Oracle => {}
    }
    run_with(spec, config.n, config.m, &methods, &config.estimation, rng, |sim, run_rng| {
        let source = match &config.learner {
            Learner::Fitted(s) => NuisanceSource::Fitted(s.clone()),
            Learner::Oracle => NuisanceSource::Known(
                sim.means
                    .clone()
                    .ok_or_else(|| invalid(format!("scenario {} has no closed-form conditional means", spec.kind)))?,
            ),
        };
        estimate_methods(&sim.data, &source, &methods, &config.estimation, run_rng)
    })
}

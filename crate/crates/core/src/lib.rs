//! Double machine learning (DML), regularized DML and regsDML for partially
//! linear models with an endogenous regressor:
//!
//! `Y = Xᵀβ₀ + g(W) + h(H) + ε`, with `A` an instrument-like variable that is
//! independent of the hidden `H` given `W`.
//!
//! The estimators work on cross-fitted residuals of `A`, `X` and `Y` given
//! `W`. [`pipeline::estimate_methods`] runs the full repeated-splitting
//! procedure for any set of [`Method`]s.

pub mod crossfit;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod io;
pub mod kclass;
pub mod linalg;
pub mod nuisance;
pub mod pipeline;
pub mod regularized;
pub mod sim;
pub mod stats;

pub use crossfit::{compute_residuals, compute_residuals_with, project_onto, ConditionalMeans, NuisanceSource};
pub use data::{partition_folds, Dataset, EstimateResult, FoldPartition, Method, ResidualFold};
pub use error::{Error, Result};
pub use estimators::{confidence_interval, dml1_estimate, dml2_estimate, dml_variance, FoldMoments, FoldWeighting, PreparedFolds};
pub use kclass::{fuller_kappa, kclass_gamma, liml_kappa, KappaResult};
pub use nuisance::{LearnerKind, RegressorSpec};
pub use pipeline::{estimate_methods, kclass_estimate, regsdml, EstimationConfig, FitOutput};
pub use regularized::{
    a_multiplier, aggregate_repetitions, regdml_estimate, regdml_variance, regsdml_single_split, select_final,
    select_gamma, Aggregate, Assembly, Gamma, GammaGrid, RepetitionRecord,
};
pub use sim::{run_monte_carlo, Learner, MonteCarloConfig, ScenarioKind, ScenarioSpec, SimulationReport};

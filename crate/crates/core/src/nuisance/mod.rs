//! Nuisance regressions for the conditional means E[A|W], E[X|W], E[Y|W].

mod forest;
mod spline;

use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;

pub use forest::{RandomForest, RegressionTree};
pub use spline::AdditiveSpline;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerKind {
    SplineAdditive,
    RandomForest,
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spline" | "splines" | "splineadditive" => Ok(Self::SplineAdditive),
            "forest" | "randomforest" | "rf" => Ok(Self::RandomForest),
            other => Err(invalid(format!("unknown learner '{other}'"))),
        }
    }
}

/// Learner choice and hyperparameters. `None` means "auto".
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorSpec {
    pub kind: LearnerKind,
    pub forest_trees: usize,
    pub forest_min_node: usize,
    pub forest_mtry: Option<usize>,
    pub spline_df: Option<usize>,
}

impl RegressorSpec {
    pub fn splines() -> Self {
        Self {
            kind: LearnerKind::SplineAdditive,
            ..Self::forest()
        }
    }

    pub fn forest() -> Self {
        Self {
            kind: LearnerKind::RandomForest,
            forest_trees: 500,
            forest_min_node: 5,
            forest_mtry: None,
            spline_df: None,
        }
    }

    pub fn with_trees(mut self, trees: usize) -> Self {
        self.forest_trees = trees;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.forest_trees < 1 || self.forest_min_node < 1 {
            return Err(invalid("forest_trees and forest_min_node must be at least 1"));
        }
        if matches!(self.spline_df, Some(df) if df < 4) {
            return Err(invalid("explicit spline_df must be at least 4"));
        }
        if self.forest_mtry == Some(0) {
            return Err(invalid("forest_mtry must be at least 1"));
        }
        Ok(())
    }

    /// Minimum number of training rows the learner accepts.
    pub fn min_train_rows(&self, m: usize) -> usize {
        match self.kind {
            LearnerKind::SplineAdditive => self.spline_df.unwrap_or_else(|| spline_df(m)).max(2),
            LearnerKind::RandomForest => 2,
        }
    }

    fn mtry(&self, v: usize) -> usize {
        self.forest_mtry.unwrap_or((v / 3).max(1)).min(v)
    }
}

/// Degrees of freedom per coordinate for the additive spline: `⌈m^{1/5}⌉ + 2`.
pub fn spline_df(n_train: usize) -> usize {
    let root = (n_train as f64).powf(0.2);
    // guard against 32^0.2 = 2.0000000000000004
    let rounded = root.round();
    let ceil = if (root - rounded).abs() < 1e-9 { rounded } else { root.ceil() };
    ceil as usize + 2
}

#[derive(Debug, Clone)]
enum Model {
    Spline(AdditiveSpline),
    Forest(Vec<RandomForest>),
}

/// A trained learner: one model per target column.
#[derive(Debug, Clone)]
pub struct FittedRegressor {
    model: Model,
    input_dim: usize,
    output_dim: usize,
}

impl FittedRegressor {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn as_spline(&self) -> Option<&AdditiveSpline> {
        match &self.model {
            Model::Spline(s) => Some(s),
            Model::Forest(_) => None,
        }
    }

    pub fn forests(&self) -> Option<&[RandomForest]> {
        match &self.model {
            Model::Forest(f) => Some(f),
            Model::Spline(_) => None,
        }
    }
}

/// Fits one model per column of `target` on inputs `w`.
pub fn fit<R: Rng + ?Sized>(
    spec: &RegressorSpec,
    w: &DMatrix<f64>,
    target: &DMatrix<f64>,
    rng: &mut R,
) -> Result<FittedRegressor> {
    spec.validate()?;
    let m = w.nrows();
    if m < 2 {
        return Err(invalid(format!("need at least 2 training rows, got {m}")));
    }
    if target.nrows() != m {
        return Err(invalid(format!("W has {m} rows but target has {}", target.nrows())));
    }
    if w.ncols() == 0 || target.ncols() == 0 {
        return Err(invalid("W and target need at least one column"));
    }
    let model = match spec.kind {
        LearnerKind::SplineAdditive => {
            let df = spec.spline_df.unwrap_or_else(|| spline_df(m));
            Model::Spline(AdditiveSpline::fit(w, target, df)?)
        }
        LearnerKind::RandomForest => {
            let mtry = spec.mtry(w.ncols());
            let seeds: Vec<u64> = (0..target.ncols()).map(|_| rng.random()).collect();
            let forests = seeds
                .iter()
                .enumerate()
                .map(|(j, &seed)| {
                    RandomForest::fit(
                        w,
                        target.column(j).as_slice(),
                        spec.forest_trees,
                        spec.forest_min_node,
                        mtry,
                        seed,
                    )
                })
                .collect();
            Model::Forest(forests)
        }
    };
    Ok(FittedRegressor {
        model,
        input_dim: w.ncols(),
        output_dim: target.ncols(),
    })
}

/// Predictions on new inputs, one column per fitted target.
pub fn predict(model: &FittedRegressor, w_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w_new.ncols() != model.input_dim {
        return Err(invalid(format!(
            "model was fitted on {} columns, got {}",
            model.input_dim,
            w_new.ncols()
        )));
    }
    Ok(match &model.model {
        Model::Spline(s) => s.predict(w_new),
        Model::Forest(forests) => {
            let mut out = DMatrix::zeros(w_new.nrows(), forests.len());
            for (j, f) in forests.iter().enumerate() {
                out.set_column(j, &nalgebra::DVector::from_vec(f.predict(w_new)));
            }
            out
        }
    })
}

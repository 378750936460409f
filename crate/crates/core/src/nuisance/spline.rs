//! Additive cubic B-spline regression.
//!
//! Each input coordinate gets a cubic B-spline basis with `df` columns
//! (interior knots at equispaced quantiles, first basis function dropped
//! so that the global intercept stays identifiable). Coefficients come from
//! ridge-jittered least squares on the centered design.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

const DEGREE: usize = 3;
const RIDGE_JITTER: f64 = 1e-8;

/// Cubic B-spline basis for one coordinate.
#[derive(Debug, Clone)]
pub(crate) struct CoordinateBasis {
    knots: Vec<f64>,
    lower: f64,
    upper: f64,
    df: usize,
}

impl CoordinateBasis {
    pub(crate) fn new(values: &[f64], df: usize) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let lower = sorted[0];
        let upper = sorted[sorted.len() - 1];
        let interior = df.saturating_sub(DEGREE);
        let mut knots = vec![lower; DEGREE + 1];
        for j in 1..=interior {
            knots.push(quantile_sorted(&sorted, j as f64 / (interior + 1) as f64));
        }
        knots.extend(std::iter::repeat_n(upper, DEGREE + 1));
        Self {
            knots,
            lower,
            upper,
            df,
        }
    }

    /// Number of design columns this coordinate contributes.
    pub(crate) fn width(&self) -> usize {
        if self.upper > self.lower {
            self.df
        } else {
            0
        }
    }

    /// Basis values at `x`, clamped into the training range; the first
    /// B-spline is omitted.
    pub(crate) fn eval(&self, x: f64, out: &mut [f64]) {
        if self.width() == 0 {
            return;
        }
        let x = x.clamp(self.lower, self.upper);
        let full = bspline_values(&self.knots, x);
        out.copy_from_slice(&full[1..]);
    }
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// All cubic B-splines on `knots` evaluated at `x` (Cox-de Boor).
/// The last non-degenerate interval is closed on the right.
fn bspline_values(knots: &[f64], x: f64) -> Vec<f64> {
    let n_intervals = knots.len() - 1;
    let mut b = vec![0.0; n_intervals];
    let last = (0..n_intervals).rev().find(|&i| knots[i] < knots[i + 1]);
    for i in 0..n_intervals {
        let inside = knots[i] <= x && x < knots[i + 1];
        let at_end = Some(i) == last && x == knots[i + 1];
        if inside || at_end {
            b[i] = 1.0;
        }
    }
    for p in 1..=DEGREE {
        for i in 0..n_intervals - p {
            let mut v = 0.0;
            let d1 = knots[i + p] - knots[i];
            if d1 > 0.0 {
                v += (x - knots[i]) / d1 * b[i];
            }
            let d2 = knots[i + p + 1] - knots[i + 1];
            if d2 > 0.0 {
                v += (knots[i + p + 1] - x) / d2 * b[i + 1];
            }
            b[i] = v;
        }
    }
    b.truncate(knots.len() - DEGREE - 1);
    b
}

/// Fitted additive spline model for one or more target columns.
#[derive(Debug, Clone)]
pub struct AdditiveSpline {
    bases: Vec<CoordinateBasis>,
    column_means: DVector<f64>,
    intercept: DVector<f64>,
    coef: DMatrix<f64>,
}

impl AdditiveSpline {
    pub fn fit(w: &DMatrix<f64>, target: &DMatrix<f64>, df: usize) -> Result<Self> {
        let m = w.nrows();
        if df < DEGREE {
            return Err(invalid(format!("spline df must be at least {DEGREE}, got {df}")));
        }
        if m < df.max(2) {
            return Err(invalid(format!("spline fit needs at least {} rows, got {m}", df.max(2))));
        }
        let bases: Vec<CoordinateBasis> = (0..w.ncols())
            .map(|j| CoordinateBasis::new(w.column(j).as_slice(), df))
            .collect();
        let design = design_matrix(&bases, w);
        let p = design.ncols();
        let t = target.ncols();

        let column_means = DVector::from_fn(p, |j, _| design.column(j).mean());
        let target_means = DVector::from_fn(t, |j, _| target.column(j).mean());
        let mut centered = design;
        for j in 0..p {
            let mu = column_means[j];
            centered.column_mut(j).add_scalar_mut(-mu);
        }
        let mut ty = target.clone();
        for j in 0..t {
            let mu = target_means[j];
            ty.column_mut(j).add_scalar_mut(-mu);
        }

        let coef = if p == 0 {
            DMatrix::zeros(0, t)
        } else {
            let mut gram = centered.transpose() * &centered;
            let jitter = RIDGE_JITTER * (gram.trace() / p as f64).max(f64::MIN_POSITIVE);
            for j in 0..p {
                gram[(j, j)] += jitter;
            }
            let rhs = centered.transpose() * &ty;
            let chol = gram
                .cholesky()
                .ok_or_else(|| Error::Data("spline normal equations not positive definite".into()))?;
            chol.solve(&rhs)
        };
        let intercept = &target_means - coef.transpose() * &column_means;
        Ok(Self {
            bases,
            column_means,
            intercept,
            coef,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.bases.len()
    }

    pub fn output_dim(&self) -> usize {
        self.intercept.len()
    }

    /// Number of non-intercept design columns.
    pub fn design_width(&self) -> usize {
        self.column_means.len()
    }

    pub fn predict(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let design = design_matrix(&self.bases, w);
        let mut out = design * &self.coef;
        for j in 0..out.ncols() {
            let b0 = self.intercept[j];
            out.column_mut(j).add_scalar_mut(b0);
        }
        out
    }

    /// Spline design (without intercept) for new inputs.
    pub fn design(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        design_matrix(&self.bases, w)
    }
}

fn design_matrix(bases: &[CoordinateBasis], w: &DMatrix<f64>) -> DMatrix<f64> {
    let widths: Vec<usize> = bases.iter().map(CoordinateBasis::width).collect();
    let p: usize = widths.iter().sum();
    let mut design = DMatrix::zeros(w.nrows(), p);
    let mut buf = Vec::new();
    for i in 0..w.nrows() {
        let mut offset = 0;
        for (j, basis) in bases.iter().enumerate() {
            let width = widths[j];
            buf.resize(width, 0.0);
            basis.eval(w[(i, j)], &mut buf);
            for (c, v) in buf.iter().enumerate() {
                design[(i, offset + c)] = *v;
            }
            offset += width;
        }
    }
    design
}

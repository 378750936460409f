//! Observations, fold partitions, residual folds and estimation results.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::estimators::confidence_interval;
use crate::linalg::all_finite;

/// Observed data: instruments `A` (N×q), endogenous regressors `X` (N×d),
/// adjustment covariates `W` (N×v) and response `Y` (N).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    a: DMatrix<f64>,
    x: DMatrix<f64>,
    w: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(a: DMatrix<f64>, x: DMatrix<f64>, w: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(invalid("dataset needs at least one row"));
        }
        for (name, rows) in [("A", a.nrows()), ("X", x.nrows()), ("W", w.nrows())] {
            if rows != n {
                return Err(invalid(format!("{name} has {rows} rows, Y has {n}")));
            }
        }
        if x.ncols() == 0 || w.ncols() == 0 {
            return Err(invalid("X and W need at least one column"));
        }
        if a.ncols() < x.ncols() {
            return Err(invalid(format!(
                "need q >= d, got q = {} and d = {}",
                a.ncols(),
                x.ncols()
            )));
        }
        if !(all_finite(&a) && all_finite(&x) && all_finite(&w) && y.iter().all(|v| v.is_finite())) {
            return Err(Error::Data("dataset contains non-finite entries".into()));
        }
        Ok(Self { a, x, w, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn q(&self) -> usize {
        self.a.ncols()
    }
    pub fn d(&self) -> usize {
        self.x.ncols()
    }
    pub fn v(&self) -> usize {
        self.w.ncols()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// `Y` as an N×1 matrix.
    pub fn y_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n(), 1, self.y.as_slice())
    }
}

/// Disjoint folds covering `0..N` (0-based) with sizes differing by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPartition {
    folds: Vec<Vec<usize>>,
    n: usize,
}

impl FoldPartition {
    /// Validates that `folds` is a balanced partition of `0..n`.
    pub fn new(folds: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        if folds.is_empty() {
            return Err(invalid("partition needs at least one fold"));
        }
        let mut seen = vec![false; n];
        for idx in folds.iter().flatten() {
            if *idx >= n || seen[*idx] {
                return Err(invalid(format!("index {idx} out of range or repeated")));
            }
            seen[*idx] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid("folds do not cover every row"));
        }
        let min = folds.iter().map(Vec::len).min().unwrap_or(0);
        let max = folds.iter().map(Vec::len).max().unwrap_or(0);
        if max - min > 1 {
            return Err(invalid("fold sizes differ by more than one"));
        }
        Ok(Self { folds, n })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }
    pub fn fold(&self, k: usize) -> &[usize] {
        &self.folds[k]
    }

    /// Rows outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        let mut mask = vec![true; self.n];
        for &i in &self.folds[k] {
            mask[i] = false;
        }
        (0..self.n).filter(|&i| mask[i]).collect()
    }
}

/// Uniformly random balanced partition of `0..n` into `k` folds.
///
/// The first `n % k` folds receive `⌈n/k⌉` rows, the rest `⌊n/k⌋`; indices
/// inside each fold are sorted.
pub fn partition_folds<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<FoldPartition> {
    if k < 1 {
        return Err(invalid("number of folds must be at least 1"));
    }
    if k > n {
        return Err(invalid(format!("cannot split {n} rows into {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = perm[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    FoldPartition::new(folds, n)
}

/// Cross-fitted residuals of `A`, `X` and `Y` on one held-out fold.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFold {
    pub ra: DMatrix<f64>,
    pub rx: DMatrix<f64>,
    pub ry: DVector<f64>,
    pub fold_index: usize,
}

impl ResidualFold {
    pub fn new(ra: DMatrix<f64>, rx: DMatrix<f64>, ry: DVector<f64>, fold_index: usize) -> Result<Self> {
        let n = ry.len();
        if ra.nrows() != n || rx.nrows() != n {
            return Err(invalid(format!(
                "fold {fold_index}: residual row counts differ ({}, {}, {n})",
                ra.nrows(),
                rx.nrows()
            )));
        }
        if !(all_finite(&ra) && all_finite(&rx) && ry.iter().all(|v| v.is_finite())) {
            return Err(Error::Data(format!("fold {fold_index}: non-finite residuals")));
        }
        Ok(Self { ra, rx, ry, fold_index })
    }

    pub fn n(&self) -> usize {
        self.ry.len()
    }
    pub fn q(&self) -> usize {
        self.ra.ncols()
    }
    pub fn d(&self) -> usize {
        self.rx.ncols()
    }

    pub fn ry_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n(), 1, self.ry.as_slice())
    }
}

/// Estimator tag carried by every result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Dml1,
    Dml2,
    RegDml,
    RegsDml,
    Liml,
    Fuller1,
    Fuller4,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Dml2,
        Method::Dml1,
        Method::RegDml,
        Method::RegsDml,
        Method::Liml,
        Method::Fuller1,
        Method::Fuller4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dml1 => "DML1",
            Method::Dml2 => "DML",
            Method::RegDml => "regDML",
            Method::RegsDml => "regsDML",
            Method::Liml => "LIML",
            Method::Fuller1 => "Fuller1",
            Method::Fuller4 => "Fuller4",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dml" | "dml2" => Ok(Method::Dml2),
            "dml1" => Ok(Method::Dml1),
            "regdml" => Ok(Method::RegDml),
            "regsdml" => Ok(Method::RegsDml),
            "liml" => Ok(Method::Liml),
            "fuller1" | "fuller(1)" => Ok(Method::Fuller1),
            "fuller4" | "fuller(4)" => Ok(Method::Fuller4),
            other => Err(invalid(format!("unknown method '{other}'"))),
        }
    }
}

/// Point estimate with its estimated asymptotic variance and confidence interval.
///
/// `sigma2` is the asymptotic variance of `√N·β̂`; the variance of the
/// estimate itself is `sigma2 / n_obs`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub method: Method,
    pub beta: DVector<f64>,
    pub sigma2: DMatrix<f64>,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
    pub gamma: Option<f64>,
    pub n_obs: usize,
    pub level: f64,
}

impl EstimateResult {
    pub fn new(
        method: Method,
        beta: DVector<f64>,
        sigma2: DMatrix<f64>,
        n_obs: usize,
        level: f64,
        gamma: Option<f64>,
    ) -> Result<Self> {
        let (ci_lower, ci_upper) = confidence_interval(&beta, &sigma2, n_obs, level)?;
        Ok(Self {
            method,
            beta,
            sigma2,
            ci_lower,
            ci_upper,
            gamma,
            n_obs,
            level,
        })
    }

    /// `sqrt(sigma2_jj / N)`.
    pub fn std_error(&self, j: usize) -> f64 {
        (self.sigma2[(j, j)] / self.n_obs as f64).sqrt()
    }

    pub fn ci_length(&self, j: usize) -> f64 {
        self.ci_upper[j] - self.ci_lower[j]
    }

    pub fn covers(&self, j: usize, value: f64) -> bool {
        self.ci_lower[j] <= value && value <= self.ci_upper[j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn even_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = partition_folds(4, 2, &mut rng).unwrap();
        assert_eq!(p.k(), 2);
        assert!(p.folds().iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = p.folds().concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rounding_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = partition_folds(5, 2, &mut rng).unwrap();
        let mut sizes: Vec<usize> = p.folds().iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 3]);
    }

    #[test]
    fn same_seed_same_partition() {
        let a = partition_folds(6, 2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = partition_folds(6, 2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_fold_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(partition_folds(3, 4, &mut rng).is_err());
        assert!(partition_folds(3, 0, &mut rng).is_err());
        assert!(partition_folds(3, 1, &mut rng).is_ok());
    }

    #[test]
    fn complement_excludes_fold() {
        let p = FoldPartition::new(vec![vec![0, 2], vec![1, 3]], 4).unwrap();
        assert_eq!(p.complement(0), vec![1, 3]);
    }

    #[test]
    fn dataset_rejects_bad_shapes() {
        let ok = Dataset::new(
            DMatrix::zeros(3, 1),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(3, 1),
            DVector::zeros(3),
        );
        assert!(ok.is_ok());
        let under = Dataset::new(
            DMatrix::zeros(3, 1),
            DMatrix::zeros(3, 2),
            DMatrix::zeros(3, 1),
            DVector::zeros(3),
        );
        assert!(under.is_err());
        let nan = Dataset::new(
            DMatrix::from_element(3, 1, f64::NAN),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(3, 1),
            DVector::zeros(3),
        );
        assert!(nan.is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }

    proptest::proptest! {
        #[test]
        fn partition_covers_all_rows(n in 1usize..200, k in 1usize..12, seed in 0u64..1000) {
            proptest::prop_assume!(k <= n);
            let p = partition_folds(n, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut all: Vec<usize> = p.folds().concat();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for f in p.folds() {
                proptest::prop_assert!(f.len() == n / k || f.len() == n.div_ceil(k));
            }
        }
    }
}

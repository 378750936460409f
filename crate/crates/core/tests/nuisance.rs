use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regsdml::nuisance::{self, AdditiveSpline};
use regsdml::sim::simulate;
use regsdml::{compute_residuals, partition_folds, Dataset, RegressorSpec, ScenarioKind, ScenarioSpec};

/// Least-squares fit of `y` on `[1, design]` through the SVD pseudo-inverse.
fn lstsq_fitted(design: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = design.nrows();
    let full = DMatrix::from_fn(n, design.ncols() + 1, |i, j| if j == 0 { 1.0 } else { design[(i, j - 1)] });
    let coef = full.clone().svd(true, true).solve(y, 1e-12).unwrap();
    full * coef
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn spline_reproduces_a_linear_target() {
    let m = 200;
    let w = DMatrix::from_fn(m, 1, |i, _| i as f64 / (m - 1) as f64);
    let target = w.map(|v| 3.0 * v);
    let model = AdditiveSpline::fit(&w, &target, 5).unwrap();
    let pred = model.predict(&w);
    let err = (&pred - &target).abs().max();
    assert!(err <= 1e-6, "max error {err}");

    let oracle = lstsq_fitted(&model.design(&w), &target.column(0).into_owned());
    assert!((pred.column(0) - oracle).abs().max() <= 1e-6);
}

#[test]
fn spline_matches_least_squares_on_noisy_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = 150;
    let w = DMatrix::<f64>::from_fn(m, 2, |_, _| rng.random_range(-2.0..2.0));
    let y = DVector::from_fn(m, |i, _| w[(i, 0)].sin() + w[(i, 1)].powi(2) + 0.3 * normal(&mut rng));
    let target = DMatrix::from_column_slice(m, 1, y.as_slice());
    let model = AdditiveSpline::fit(&w, &target, 6).unwrap();
    let pred = model.predict(&w).column(0).into_owned();
    let oracle = lstsq_fitted(&model.design(&w), &y);
    assert!((&pred - &oracle).abs().max() <= 1e-5 * (1.0 + oracle.abs().max()));
}

#[test]
fn spline_clamps_beyond_the_training_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = 80;
    let w = DMatrix::from_fn(m, 1, |_, _| rng.random_range(0.0..1.0));
    let target = w.map(|v: f64| (4.0 * v).sin());
    let model = AdditiveSpline::fit(&w, &target, 6).unwrap();
    let max = w.max();
    let beyond = model.predict(&DMatrix::from_element(1, 1, max + 1.0))[(0, 0)];
    let edge = model.predict(&DMatrix::from_element(1, 1, max))[(0, 0)];
    assert!(beyond.is_finite());
    assert!((beyond - edge).abs() < 1e-12);
}

#[test]
fn forest_tracks_a_step_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = 400;
    let w = DMatrix::from_fn(m, 2, |_, _| rng.random_range(-1.0..1.0));
    let truth = |a: f64, b: f64| if a > 0.0 { 2.0 } else { -1.0 } + 0.5 * b;
    let target = DMatrix::from_fn(m, 1, |i, _| truth(w[(i, 0)], w[(i, 1)]) + 0.2 * normal(&mut rng));
    let spec = RegressorSpec::forest().with_trees(100);
    let model = nuisance::fit(&spec, &w, &target, &mut rng).unwrap();
    let test = DMatrix::from_fn(200, 2, |_, _| rng.random_range(-0.9..0.9));
    let pred = nuisance::predict(&model, &test).unwrap();
    let mse = (0..200).map(|i| (pred[(i, 0)] - truth(test[(i, 0)], test[(i, 1)])).powi(2)).sum::<f64>() / 200.0;
    assert!(mse < 0.15, "mse {mse}");
}

#[test]
fn forest_with_same_seed_is_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = DMatrix::from_fn(60, 3, |_, _| rng.random_range(0.0..1.0));
    let target = DMatrix::from_fn(60, 1, |i, _| w[(i, 0)] * w[(i, 2)]);
    let spec = RegressorSpec::forest().with_trees(50);
    let a = nuisance::fit(&spec, &w, &target, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = nuisance::fit(&spec, &w, &target, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(nuisance::predict(&a, &w).unwrap(), nuisance::predict(&b, &w).unwrap());
}

#[test]
fn residuals_are_uncorrelated_with_covariates() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 2000;
    let w = DMatrix::from_fn(n, 2, |_, _| normal(&mut rng));
    let a = DMatrix::from_fn(n, 1, |i, _| 1.0 + w[(i, 0)] - 0.5 * w[(i, 1)]);
    let a = a.map(|v| v + normal(&mut rng));
    let x = DMatrix::from_fn(n, 1, |i, _| a[(i, 0)] + 2.0 * w[(i, 1)] + normal(&mut rng));
    let y = DVector::from_fn(n, |i, _| 0.5 * x[(i, 0)] - w[(i, 0)] + normal(&mut rng));
    let data = Dataset::new(a, x, w.clone(), y).unwrap();
    let partition = partition_folds(n, 2, &mut rng).unwrap();
    let folds = compute_residuals(&data, &partition, &RegressorSpec::splines(), &mut rng).unwrap();
    for (k, f) in folds.iter().enumerate() {
        let rows = partition.fold(k);
        for j in 0..2 {
            let wj: Vec<f64> = rows.iter().map(|&r| w[(r, j)]).collect();
            for r in [f.ra.column(0).as_slice(), f.rx.column(0).as_slice(), f.ry.as_slice()] {
                assert!(corr(r, &wj).abs() <= 0.1);
            }
        }
    }
}

#[test]
fn residuals_are_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = simulate(&ScenarioSpec::new(ScenarioKind::ForestSem), 120, &mut rng).unwrap().data;
        let p = partition_folds(120, 2, &mut rng).unwrap();
        compute_residuals(&data, &p, &RegressorSpec::forest().with_trees(30), &mut rng).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn nan_inputs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut data = simulate(&ScenarioSpec::new(ScenarioKind::IntroSem), 30, &mut rng).unwrap().data;
    let mut w = data.w().clone();
    w[(3, 0)] = f64::NAN;
    let rebuilt = Dataset::new(data.a().clone(), data.x().clone(), w, data.y().clone());
    if let Ok(d) = rebuilt {
        data = d;
        let p = partition_folds(30, 2, &mut rng).unwrap();
        assert!(compute_residuals(&data, &p, &RegressorSpec::splines(), &mut rng).is_err());
    }
}

/// The instrument residuals carry no information about the hidden confounder
/// once W is adjusted for.
#[test]
fn forest_scenario_instrument_residuals_ignore_the_confounder() {
    let n = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sim = simulate(&ScenarioSpec::new(ScenarioKind::ForestSem), n, &mut rng).unwrap();
    let p = partition_folds(n, 2, &mut rng).unwrap();
    let folds = compute_residuals(&sim.data, &p, &RegressorSpec::forest().with_trees(100), &mut rng).unwrap();
    for (k, f) in folds.iter().enumerate() {
        let h: Vec<f64> = p.fold(k).iter().map(|&r| sim.hidden[r]).collect();
        for j in 0..2 {
            let c = corr(f.ra.column(j).as_slice(), &h);
            assert!(c.abs() <= 0.05, "fold {k} instrument {j}: corr {c}");
        }
    }
}

//! Fixtures shared by the benchmarks in `benches/`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regsdml::sim::simulate;
use regsdml::{Dataset, ResidualFold, ScenarioKind, ScenarioSpec};

/// `k` folds of `n` rows each with `q` instruments and one regressor.
pub fn residual_folds(k: usize, n: usize, q: usize, seed: u64) -> Vec<ResidualFold> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|index| {
            let ra = DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..1.0));
            let rx = DMatrix::from_fn(n, 1, |i, _| ra.row(i).sum() + rng.random_range(-1.0..1.0));
            let ry = DVector::from_fn(n, |i, _| 0.5 * rx[(i, 0)] + rng.random_range(-1.0..1.0));
            ResidualFold::new(ra, rx, ry, index).expect("consistent shapes")
        })
        .collect()
}

pub fn scenario_data(kind: ScenarioKind, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate(&ScenarioSpec::new(kind), n, &mut rng).expect("valid scenario").data
}

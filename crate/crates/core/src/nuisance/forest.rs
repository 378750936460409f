//! Bootstrap-aggregated regression trees.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A single CART regression tree grown on a bootstrap sample.
#[derive(Debug, Clone)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    min_leaf: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: &mut [usize], rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(leaf_mean(self.y, rows)));
        if rows.len() < 2 * self.min_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(rows, rng) else {
            return id;
        };
        // partition rows in place: left = x <= threshold
        let mut split = 0;
        for i in 0..rows.len() {
            if self.x[(rows[i], feature)] <= threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (lrows, rrows) = rows.split_at_mut(split);
        let left = self.grow(lrows, rng);
        let right = self.grow(rrows, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let n = rows.len();
        let n_features = self.x.ncols();
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for feature in sample(rng, n_features, self.mtry.min(n_features)).into_iter() {
            order.sort_by(|&a, &b| self.x[(a, feature)].total_cmp(&self.x[(b, feature)]));
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += self.y[order[i]];
                let n_left = i + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf {
                    continue;
                }
                if n_right < self.min_leaf {
                    break;
                }
                let xl = self.x[(order[i], feature)];
                let xr = self.x[(order[i + 1], feature)];
                if xl >= xr {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64 - parent;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, feature, 0.5 * (xl + xr)));
                }
            }
        }
        let tol = 1e-12 * (parent.abs() + 1.0);
        best.filter(|(g, _, _)| *g > tol).map(|(_, f, t)| (f, t))
    }
}

fn leaf_mean(y: &[f64], rows: &[usize]) -> f64 {
    rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64
}

impl RegressionTree {
    fn grow(x: &DMatrix<f64>, y: &[f64], min_leaf: usize, mtry: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = y.len();
        let mut rows: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
        let mut grower = Grower {
            x,
            y,
            min_leaf,
            mtry,
            nodes: Vec::new(),
        };
        grower.grow(&mut rows, &mut rng);
        Self { nodes: grower.nodes }
    }

    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[(row, *feature)] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// Random forest for a single real-valued target.
#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
}

impl RandomForest {
    /// Grows `n_trees` trees; tree `t` uses its own ChaCha stream seeded from
    /// `seeds[t]`, so the result does not depend on thread scheduling.
    pub fn fit(x: &DMatrix<f64>, y: &[f64], n_trees: usize, min_leaf: usize, mtry: usize, seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let seeds: Vec<u64> = (0..n_trees).map(|_| master.random()).collect();
        let trees = seeds
            .into_par_iter()
            .map(|s| RegressionTree::grow(x, y, min_leaf, mtry, s))
            .collect();
        Self { trees }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|r| self.trees.iter().map(|t| t.predict_row(x, r)).sum::<f64>() / self.trees.len() as f64)
            .collect()
    }

    /// Per-tree predictions for one row; used to gauge Monte Carlo spread.
    pub fn tree_predictions(&self, x: &DMatrix<f64>, row: usize) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict_row(x, row)).collect()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaves_respect_min_size() {
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let tree = RegressionTree::grow(&x, &y, 5, 1, 11);
        // count bootstrap rows reaching every leaf
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<usize> = (0..40).map(|_| rng.random_range(0..40)).collect();
        let mut counts = vec![0usize; tree.n_nodes()];
        for &r in &rows {
            let mut id = 0;
            loop {
                match &tree.nodes[id] {
                    Node::Leaf(_) => {
                        counts[id] += 1;
                        break;
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => id = if x[(r, *feature)] <= *threshold { *left } else { *right },
                }
            }
        }
        for (id, node) in tree.nodes.iter().enumerate() {
            if matches!(node, Node::Leaf(_)) {
                assert!(counts[id] >= 5, "leaf {id} has {} rows", counts[id]);
            }
        }
    }

    #[test]
    fn step_function_is_learned() {
        let x = DMatrix::from_fn(200, 1, |i, _| i as f64 / 200.0);
        let y: Vec<f64> = (0..200).map(|i| if i < 100 { 0.0 } else { 10.0 }).collect();
        let forest = RandomForest::fit(&x, &y, 50, 5, 1, 3);
        let pred = forest.predict(&x);
        assert!(pred[10].abs() < 0.5);
        assert!((pred[190] - 10.0).abs() < 0.5);
    }
}

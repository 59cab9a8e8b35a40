//! CART with Gini impurity and a bagged forest of such trees.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::seed;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(bool),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Binary classification tree grown until every leaf is pure or holds fewer
/// than two samples. Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    root: Node,
}

fn majority(y: &[bool], idx: &[usize]) -> bool {
    let pos = idx.iter().filter(|&&i| y[i]).count();
    2 * pos > idx.len()
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    max_features: usize,
    rng: ChaCha8Rng,
}

impl Grower<'_> {
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64)> {
        let n_features = self.x[0].len();
        let mut features: Vec<usize> = if self.max_features >= n_features {
            (0..n_features).collect()
        } else {
            sample(&mut self.rng, n_features, self.max_features).into_vec()
        };
        features.sort_unstable();

        let total_pos = idx.iter().filter(|&&i| self.y[i]).count();
        let n = idx.len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_pos = 0;
            for k in 1..n {
                if self.y[order[k - 1]] {
                    left_pos += 1;
                }
                let (lo, hi) = (self.x[order[k - 1]][f], self.x[order[k]][f]);
                if lo == hi {
                    continue;
                }
                let right_pos = total_pos - left_pos;
                let impurity = (k as f64 * gini(left_pos, k) + (n - k) as f64 * gini(right_pos, n - k)) / n as f64;
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    best = Some((impurity, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: &[usize]) -> Node {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        if idx.len() < 2 || pos == 0 || pos == idx.len() {
            return Node::Leaf(majority(self.y, idx));
        }
        let Some((feature, threshold)) = self.best_split(idx) else {
            // Identical feature vectors with mixed labels.
            return Node::Leaf(majority(self.y, idx));
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.grow(&left)),
            right: Box::new(self.grow(&right)),
        }
    }
}

impl DecisionTree {
    /// Fits on the rows listed in `idx` (repeats allowed). `max_features`
    /// below the feature count draws that many candidate features per split.
    pub fn fit_indices(x: &[Vec<f64>], y: &[bool], idx: &[usize], max_features: usize, seed: u64) -> Self {
        assert!(!idx.is_empty(), "fit on no rows");
        let mut grower = Grower {
            x,
            y,
            max_features: max_features.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        Self {
            root: grower.grow(idx),
        }
    }

    pub fn fit(x: &[Vec<f64>], y: &[bool]) -> Self {
        let idx: Vec<usize> = (0..x.len()).collect();
        Self::fit_indices(x, y, &idx, usize::MAX, 0)
    }

    pub fn predict_one(&self, row: &[f64]) -> bool {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(label) => return *label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn depth(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + depth(left).max(depth(right)),
            }
        }
        depth(&self.root)
    }
}

/// `n` row indices drawn with replacement.
pub fn bootstrap_sample(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Bagged trees with per-split feature subsampling; majority vote, ties
/// predicting the negative class.
#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[bool], n_estimators: usize, max_features: usize, seed: u64) -> Self {
        let trees = (0..n_estimators as u64)
            .map(|b| {
                let tree_seed = seed::derive_n(seed, b);
                let idx = bootstrap_sample(x.len(), seed::derive(tree_seed, "bootstrap"));
                DecisionTree::fit_indices(x, y, &idx, max_features, seed::derive(tree_seed, "features"))
            })
            .collect();
        Self { trees }
    }

    pub fn predict_one(&self, row: &[f64]) -> bool {
        let votes = self.trees.iter().filter(|t| t.predict_one(row)).count();
        2 * votes > self.trees.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_training_set_gives_constant_tree() {
        let x = vec![vec![0.3, 1.0]];
        let t = DecisionTree::fit(&x, &[true]);
        assert_eq!(t.depth(), 0);
        assert!(t.predict_one(&[9.0, -4.0]));
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(!DecisionTree::fit(&x, &[false; 3]).predict_one(&[5.0]));
    }

    #[test]
    fn memorises_distinct_points() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![(i * 7 % 20) as f64, (i % 3) as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| (i * 13) % 5 < 2).collect();
        let t = DecisionTree::fit(&x, &y);
        for (row, &label) in x.iter().zip(&y) {
            assert_eq!(t.predict_one(row), label);
        }
    }

    #[test]
    fn finds_single_threshold() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![(i % 4) as f64, i as f64]).collect();
        let y: Vec<bool> = (0..10).map(|i| i >= 6).collect();
        let t = DecisionTree::fit(&x, &y);
        assert_eq!(t.depth(), 1);
        assert!(t.predict_one(&[0.0, 5.6]));
        assert!(!t.predict_one(&[0.0, 5.4]));
    }

    #[test]
    fn duplicate_points_with_mixed_labels_terminate() {
        let x = vec![vec![1.0], vec![1.0], vec![1.0]];
        let t = DecisionTree::fit(&x, &[true, false, true]);
        assert!(t.predict_one(&[1.0]));
    }

    #[test]
    fn single_tree_forest_equals_tree_on_bootstrap() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i * 17 % 40) as f64, (i * 7 % 11) as f64, (i % 5) as f64]).collect();
        let y: Vec<bool> = (0..40).map(|i| (i * 17 % 40) > 15 && i % 5 != 0).collect();
        let seed = 77;
        let forest = RandomForest::fit(&x, &y, 1, 3, seed);
        let tree_seed = seed::derive_n(seed, 0);
        let idx = bootstrap_sample(40, seed::derive(tree_seed, "bootstrap"));
        let tree = DecisionTree::fit_indices(&x, &y, &idx, usize::MAX, 0);
        assert_eq!(forest.trees[0], tree);
        for row in &x {
            assert_eq!(forest.predict_one(row), tree.predict_one(row));
        }
    }

    #[test]
    fn forest_is_seed_deterministic() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 7) as f64, (i % 3) as f64]).collect();
        let y: Vec<bool> = (0..30).map(|i| i % 7 > 3).collect();
        let a = RandomForest::fit(&x, &y, 10, 1, 5);
        let b = RandomForest::fit(&x, &y, 10, 1, 5);
        assert_eq!(a.trees, b.trees);
    }
}

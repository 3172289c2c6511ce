//! Random forest of fully grown Gini CART trees on bootstrap samples.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::Dataset;
use crate::seed;

#[derive(Debug, Clone)]
enum Node {
    Leaf(u8),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary classification tree; `x[feature] <= threshold` goes left.
#[derive(Debug, Clone)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

fn gini(c0: usize, c1: usize) -> f64 {
    let n = (c0 + c1) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = c1 as f64 / n;
    2.0 * p * (1.0 - p)
}

impl DecisionTree {
    /// Grows a tree on the rows in `sample` (duplicates allowed).
    ///
    /// At each node the features are visited in a fresh random order; the
    /// first `max_features` are searched, and if none of them admits a split
    /// the search continues through the rest. Nodes are split until pure or
    /// until no feature varies.
    pub fn fit(data: &Dataset, sample: &[usize], max_features: usize, rng: &mut seed::Rng) -> Self {
        let mut tree = DecisionTree { nodes: Vec::new() };
        let mut features: Vec<usize> = (0..data.n_cols()).collect();
        tree.grow(data, sample.to_vec(), max_features.max(1), &mut features, rng);
        tree
    }

    fn grow(
        &mut self,
        data: &Dataset,
        idx: Vec<usize>,
        max_features: usize,
        features: &mut [usize],
        rng: &mut seed::Rng,
    ) -> usize {
        let id = self.nodes.len();
        let ones = idx.iter().filter(|&&i| data.labels[i] == 1).count();
        let zeros = idx.len() - ones;
        let majority = u8::from(ones > zeros);
        self.nodes.push(Node::Leaf(majority));
        if ones == 0 || zeros == 0 {
            return id;
        }
        features.shuffle(rng);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(idx.len());
        for (visited, &f) in features.iter().enumerate() {
            if visited >= max_features && best.is_some() {
                break;
            }
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (data.features.get(i, f), data.labels[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; 2];
            for s in 0..pairs.len() - 1 {
                left[pairs[s].1 as usize] += 1;
                if pairs[s].0 == pairs[s + 1].0 {
                    continue;
                }
                let right = [zeros - left[0], ones - left[1]];
                let nl = (left[0] + left[1]) as f64;
                let nr = (right[0] + right[1]) as f64;
                let impurity = nl * gini(left[0], left[1]) + nr * gini(right[0], right[1]);
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    let (a, b) = (pairs[s].0, pairs[s + 1].0);
                    let mid = 0.5 * (a + b);
                    let threshold = if mid < b { mid } else { a };
                    best = Some((impurity, f, threshold));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| data.features.get(i, feature) <= threshold);
        let left = self.grow(data, l, max_features, features, rng);
        let right = self.grow(data, r, max_features, features, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        let mut node = 0;
        loop {
            match self.nodes[node] {
                Node::Leaf(label) => return label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<DecisionTree>,
}

impl Forest {
    pub fn fit(train: &Dataset, n_trees: usize, max_features: usize, seed: u64) -> Self {
        let n = train.len();
        let trees = (0..n_trees as u64)
            .map(|t| {
                let mut rng = seed::rng(seed::derive(seed, "tree", t));
                let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                DecisionTree::fit(train, &sample, max_features, &mut rng)
            })
            .collect();
        Self { trees }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Fraction of trees voting for class 1.
    pub fn prob_one(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.predict(x) == 1).count();
        votes as f64 / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{fit, ClassifierSpec};
    use crate::data::FeatureMatrix;
    use crate::taskgen::{build_task, sample_dataset, TaskId, TaskSpec};

    fn xor_data() -> Dataset {
        let rows = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ];
        Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), vec![0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn full_tree_fits_xor_exactly() {
        let ds = xor_data();
        let mut rng = seed::rng(1);
        let tree = DecisionTree::fit(&ds, &[0, 1, 2, 3], 2, &mut rng);
        for (x, &y) in ds.features.rows().zip(&ds.labels) {
            assert_eq!(tree.predict(x), y);
        }
    }

    #[test]
    fn gini_of_pure_and_balanced_nodes() {
        assert_eq!(gini(5, 0), 0.0);
        assert_eq!(gini(3, 3), 0.5);
    }

    #[test]
    fn single_tree_forest_matches_its_tree() {
        let task = build_task(&TaskSpec::new(TaskId::Sd8)).unwrap();
        let train = sample_dataset(&task, 150, 3).unwrap();
        let probe = sample_dataset(&task, 200, 4).unwrap();
        let spec = ClassifierSpec::RandomForest {
            n_trees: 1,
            max_features: Some(2),
        };
        let model = fit(&spec, &train, 9).unwrap();
        let forest = model.as_forest().unwrap();
        let proba = model.predict_proba(&probe.features).unwrap();
        for (x, p) in probe.features.rows().zip(proba) {
            assert_eq!(p[1], f64::from(forest.trees()[0].predict(x)));
        }
    }

    #[test]
    fn identical_points_with_conflicting_labels_make_a_leaf() {
        let rows = vec![vec![1.0], vec![1.0], vec![1.0]];
        let ds = Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), vec![0, 1, 1]).unwrap();
        let mut rng = seed::rng(0);
        let tree = DecisionTree::fit(&ds, &[0, 1, 2], 1, &mut rng);
        assert_eq!(tree.n_nodes(), 1);
        assert_eq!(tree.predict(&[1.0]), 1);
    }
}

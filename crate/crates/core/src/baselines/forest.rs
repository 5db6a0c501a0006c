use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::metrics;
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub max_trees: usize,
    /// Trees added without a validation AUROC gain before stopping.
    pub patience: usize,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(N))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { max_trees: 50, patience: 5, min_samples_leaf: 2, max_features: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Fraction of positive training samples that reached the leaf.
    Leaf { value: f64 },
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
    /// Validation AUROC after each tree was added, including discarded ones.
    pub val_auroc_trace: Vec<f64>,
}

impl ForestModel {
    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::data(format!("feature vector of {} for a forest of {}", x.len(), self.n_features)));
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        x.rows().into_iter().map(|r| self.predict_row(&r.to_vec())).collect()
    }
}

struct Grower<'a> {
    x: &'a [f64],
    n: usize,
    y: &'a [u8],
    min_leaf: usize,
    max_features: usize,
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

impl Grower<'_> {
    fn value(&self, i: usize, f: usize) -> f64 {
        self.x[i * self.n + f]
    }

    /// Best `(feature, threshold, weighted child impurity)` among the sampled features.
    fn best_split(&self, samples: &[usize], rng: &mut SeededRng) -> Option<(usize, f64, f64)> {
        let total = samples.len();
        let total_pos = samples.iter().filter(|&&i| self.y[i] == 1).count();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<(f64, u8)> = Vec::with_capacity(total);
        for f in rng.sample_indices(self.n, self.max_features) {
            order.clear();
            order.extend(samples.iter().map(|&i| (self.value(i, f), self.y[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for k in 1..total {
                left_pos += order[k - 1].1 as usize;
                if order[k].0 == order[k - 1].0 || k < self.min_leaf || total - k < self.min_leaf {
                    continue;
                }
                let score = (k as f64 * gini(left_pos, k) + (total - k) as f64 * gini(total_pos - left_pos, total - k)) / total as f64;
                if best.is_none_or(|b| score < b.2) {
                    best = Some((f, 0.5 * (order[k - 1].0 + order[k].0), score));
                }
            }
        }
        best
    }

    fn grow(&self, samples: Vec<usize>, rng: &mut SeededRng) -> DecisionTree {
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut stack = vec![(0usize, samples)];
        while let Some((at, samples)) = stack.pop() {
            let pos = samples.iter().filter(|&&i| self.y[i] == 1).count();
            let value = pos as f64 / samples.len() as f64;
            nodes[at] = Node::Leaf { value };
            if pos == 0 || pos == samples.len() || samples.len() < 2 * self.min_leaf {
                continue;
            }
            let Some((feature, threshold, _)) = self.best_split(&samples, rng) else { continue };
            let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| self.value(i, feature) <= threshold);
            let (left, right) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[at] = Node::Split { feature, threshold, left, right };
            stack.push((right, r));
            stack.push((left, l));
        }
        DecisionTree { nodes }
    }
}

/// Bagged Gini trees added one at a time; stops once `patience` trees in a
/// row fail to raise validation AUROC and keeps the best-scoring prefix.
pub fn train_forest(x: &Array2<f64>, y: &[u8], x_val: &Array2<f64>, y_val: &[u8], config: &ForestConfig) -> Result<ForestModel> {
    if x.nrows() != y.len() || x_val.nrows() != y_val.len() || x.ncols() != x_val.ncols() {
        return Err(Error::data("forest inputs have mismatched shapes"));
    }
    if x.nrows() == 0 || x_val.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::data("forest needs non-empty training and validation data"));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::data("training labels contain a single class"));
    }
    if config.max_trees == 0 || config.patience == 0 || config.min_samples_leaf == 0 {
        return Err(Error::config("max_trees, patience and min_samples_leaf must be at least 1"));
    }
    let n = x.ncols();
    let max_features = config.max_features.unwrap_or_else(|| (n as f64).sqrt().ceil() as usize).clamp(1, n);
    let x = x.as_standard_layout();
    let grower = Grower { x: x.as_slice().expect("standard layout"), n, y, min_leaf: config.min_samples_leaf, max_features };
    let val_rows: Vec<Vec<f64>> = x_val.rows().into_iter().map(|r| r.to_vec()).collect();

    let mut rng = SeededRng::new(config.seed);
    let mut trees = Vec::new();
    let mut sums = vec![0.0; val_rows.len()];
    let mut trace = Vec::new();
    let (mut best_auroc, mut best_count, mut stale) = (f64::NEG_INFINITY, 0, 0);
    while trees.len() < config.max_trees {
        let bootstrap: Vec<usize> = (0..y.len()).map(|_| rng.index(y.len())).collect();
        let tree = grower.grow(bootstrap, &mut rng);
        for (s, row) in sums.iter_mut().zip(&val_rows) {
            *s += tree.predict(row);
        }
        trees.push(tree);
        let scores: Vec<f64> = sums.iter().map(|s| s / trees.len() as f64).collect();
        let auroc = metrics::auroc(&scores, y_val)?;
        trace.push(auroc);
        if auroc > best_auroc {
            (best_auroc, best_count, stale) = (auroc, trees.len(), 0);
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    trees.truncate(best_count);
    Ok(ForestModel { trees, n_features: n, val_auroc_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(m: usize, seed: u64, noise: f64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = SeededRng::new(seed);
        let x = Array2::from_shape_simple_fn((m, 6), || rng.uniform_range(-1.0, 1.0));
        let y = x.rows().into_iter().map(|r| (r[2] + rng.uniform_range(-noise, noise) > 0.0) as u8).collect();
        (x, y)
    }

    #[test]
    fn pure_split_in_one_tree() {
        // one feature, classes separated by a gap around zero
        let separated = |m: usize, seed: u64| {
            let mut rng = SeededRng::new(seed);
            let y: Vec<u8> = (0..m).map(|i| (i % 2) as u8).collect();
            let x = Array2::from_shape_fn((m, 1), |(i, _)| if y[i] == 1 { 0.5 } else { -0.5 } + rng.uniform_range(-0.4, 0.4));
            (x, y)
        };
        let (x1, y) = separated(60, 1);
        let (xv1, yv) = separated(30, 2);
        let forest = train_forest(&x1, &y, &xv1, &yv, &ForestConfig::default()).unwrap();
        let first = ForestModel { trees: forest.trees[..1].to_vec(), n_features: 1, val_auroc_trace: vec![] };
        let s = first.predict(&xv1).unwrap();
        assert_eq!(metrics::accuracy(&s, &yv, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn at_most_fifty_trees_and_running_best() {
        let (x, y) = data(80, 3, 0.8);
        let (xv, yv) = data(40, 4, 0.8);
        let cfg = ForestConfig { patience: 100, ..ForestConfig::default() };
        let f = train_forest(&x, &y, &xv, &yv, &cfg).unwrap();
        assert_eq!(f.val_auroc_trace.len(), 50);
        assert!(f.trees.len() <= 50);
        let best = f.val_auroc_trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(f.val_auroc_trace[f.trees.len() - 1], best);
        assert_eq!(metrics::auroc(&f.predict(&xv).unwrap(), &yv).unwrap(), best);
    }

    #[test]
    fn deterministic_and_leaves_are_probabilities() {
        let (x, y) = data(50, 5, 0.5);
        let (xv, yv) = data(20, 6, 0.5);
        let cfg = ForestConfig { seed: 9, ..ForestConfig::default() };
        let a = train_forest(&x, &y, &xv, &yv, &cfg).unwrap();
        let b = train_forest(&x, &y, &xv, &yv, &cfg).unwrap();
        assert_eq!(a, b);
        for t in &a.trees {
            for n in &t.nodes {
                if let Node::Leaf { value } = n {
                    assert!((0.0..=1.0).contains(value));
                }
            }
        }
        assert!(a.val_auroc_trace.len() - a.trees.len() <= 5);
    }

    #[test]
    fn min_leaf_is_respected() {
        let (x, y) = data(40, 7, 1.0);
        let grower = Grower { x: x.as_slice().unwrap(), n: 6, y: &y, min_leaf: 2, max_features: 6 };
        let tree = grower.grow((0..40).collect(), &mut SeededRng::new(1));
        let mut counts = vec![0usize; tree.nodes.len()];
        for r in x.rows() {
            let mut i = 0;
            while let Node::Split { feature, threshold, left, right } = tree.nodes[i] {
                i = if r[feature] <= threshold { left } else { right };
            }
            counts[i] += 1;
        }
        for (i, n) in tree.nodes.iter().enumerate() {
            if matches!(n, Node::Leaf { .. }) {
                assert!(counts[i] >= 2);
            }
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let (x, _) = data(10, 1, 0.0);
        assert!(train_forest(&x, &[1; 10], &x, &[1, 0, 1, 0, 1, 0, 1, 0, 1, 0], &ForestConfig::default()).is_err());
    }
}

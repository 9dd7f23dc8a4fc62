//! Multiclass gradient boosting with depth-limited regression trees.
//!
//! One tree per class per round is fit to the softmax gradient; leaf values
//! take a damped Newton step. Deterministic: no row or feature subsampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Options for the boosted fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostOptions {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_rounds: usize,
    /// Minimum number of samples in a leaf.
    pub min_leaf: usize,
}

impl Default for BoostOptions {
    fn default() -> Self {
        BoostOptions {
            learning_rate: 0.3,
            max_depth: 6,
            n_rounds: 50,
            min_leaf: 5,
        }
    }
}

impl BoostOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::config("max_depth must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::config("learning_rate must lie in (0, 1]"));
        }
        if self.min_leaf == 0 {
            return Err(Error::config("min_leaf must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A fitted regression tree stored as an arena.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

struct TreeBuilder<'a> {
    features: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    options: &'a BoostOptions,
    newton_scale: f64,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        let g: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        self.newton_scale * g / (h + 1e-12)
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        if depth >= self.options.max_depth || idx.len() < 2 * self.options.min_leaf {
            let value = self.leaf_value(&idx);
            self.nodes.push(Node::Leaf { value });
            return self.nodes.len() - 1;
        }
        match self.best_split(&idx) {
            None => {
                let value = self.leaf_value(&idx);
                self.nodes.push(Node::Leaf { value });
                self.nodes.len() - 1
            }
            Some((feature, threshold)) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
                    .into_iter()
                    .partition(|&i| self.features[i][feature] <= threshold);
                let placeholder = self.nodes.len();
                self.nodes.push(Node::Leaf { value: 0.0 });
                let left = self.build(left_idx, depth + 1);
                let right = self.build(right_idx, depth + 1);
                self.nodes[placeholder] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                placeholder
            }
        }
    }

    /// Best (feature, threshold) by squared-error reduction of the gradient.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64)> {
        let n_features = self.features.first().map_or(0, |r| r.len());
        let total_g: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let total_n = idx.len() as f64;
        let parent_score = total_g * total_g / total_n;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for feature in 0..n_features {
            order.sort_by(|&a, &b| {
                self.features[a][feature]
                    .partial_cmp(&self.features[b][feature])
                    .expect("finite features")
            });
            let mut left_g = 0.0;
            let mut left_n = 0.0;
            for w in 0..order.len() - 1 {
                let i = order[w];
                left_g += self.grad[i];
                left_n += 1.0;
                let here = self.features[i][feature];
                let next = self.features[order[w + 1]][feature];
                if here == next {
                    continue; // cannot split between equal values
                }
                let left_count = w + 1;
                let right_count = order.len() - left_count;
                if left_count < self.options.min_leaf || right_count < self.options.min_leaf {
                    continue;
                }
                let right_g = total_g - left_g;
                let right_n = total_n - left_n;
                let gain = left_g * left_g / left_n + right_g * right_g / right_n - parent_score;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, feature, 0.5 * (here + next)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Fitted multiclass boosting model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub options: BoostOptions,
    pub n_classes: usize,
    /// Log-prior initialization per class.
    init_scores: Vec<f64>,
    /// trees[round][class]
    trees: Vec<Vec<RegressionTree>>,
    /// Training log-loss after each round (index 0 = priors only).
    pub loss_path: Vec<f64>,
}

fn softmax_rows(scores: &mut [Vec<f64>]) {
    for row in scores.iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        for s in row.iter_mut() {
            *s /= total;
        }
    }
}

fn mean_log_loss(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| -p[l].max(1e-300).ln())
        .sum();
    total / labels.len() as f64
}

/// Fit the boosting model on raw feature rows and class labels.
pub fn fit(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    options: &BoostOptions,
) -> Result<BoostModel> {
    options.validate()?;
    let n = features.len();
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let init_scores: Vec<f64> = counts
        .iter()
        .map(|&c| ((c as f64 + 1e-12) / n as f64).ln())
        .collect();

    let mut scores: Vec<Vec<f64>> = (0..n).map(|_| init_scores.clone()).collect();
    let mut trees: Vec<Vec<RegressionTree>> = Vec::with_capacity(options.n_rounds);
    let mut loss_path = Vec::with_capacity(options.n_rounds + 1);
    let newton_scale = if n_classes > 1 {
        (n_classes as f64 - 1.0) / n_classes as f64
    } else {
        1.0
    };

    let mut probs = scores.clone();
    softmax_rows(&mut probs);
    loss_path.push(mean_log_loss(&probs, labels));

    for _ in 0..options.n_rounds {
        let mut round_trees = Vec::with_capacity(n_classes);
        for class in 0..n_classes {
            let grad: Vec<f64> = (0..n)
                .map(|i| f64::from(labels[i] == class) - probs[i][class])
                .collect();
            let hess: Vec<f64> = (0..n).map(|i| probs[i][class] * (1.0 - probs[i][class])).collect();
            let mut builder = TreeBuilder {
                features,
                grad: &grad,
                hess: &hess,
                options,
                newton_scale,
                nodes: Vec::new(),
            };
            let root = builder.build((0..n).collect(), 0);
            debug_assert_eq!(root, 0);
            let tree = RegressionTree {
                nodes: builder.nodes,
            };
            for (i, row) in features.iter().enumerate() {
                scores[i][class] += options.learning_rate * tree.predict(row);
            }
            round_trees.push(tree);
        }
        trees.push(round_trees);
        probs = scores.clone();
        softmax_rows(&mut probs);
        loss_path.push(mean_log_loss(&probs, labels));
    }

    Ok(BoostModel {
        options: *options,
        n_classes,
        init_scores,
        trees,
        loss_path,
    })
}

impl BoostModel {
    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let mut scores = self.init_scores.clone();
        for round in &self.trees {
            for (class, tree) in round.iter().enumerate() {
                scores[class] += self.options.learning_rate * tree.predict(row);
            }
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        for s in scores.iter_mut() {
            *s /= total;
        }
        scores
    }
}

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; defaults to `⌈d/3⌉` (regression) or `⌈√d⌉`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            mtry: None,
            min_leaf: 5,
            max_depth: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Threshold and feature of the root split, if any.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Split { feature, threshold, .. } => Some((feature, threshold)),
            Node::Leaf(_) => None,
        }
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    mtry: usize,
    min_leaf: usize,
    max_depth: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut Rng) -> usize {
        let n = idx.len();
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mean = sum / n as f64;
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf(mean));
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        if depth >= self.max_depth || n < 2 * self.min_leaf || pure {
            return me;
        }
        let d = self.x.ncols();
        let feats = sample(rng, d, self.mtry.min(d));
        // (score, feature, threshold, split position) for the best candidate.
        let mut best: Option<(f64, usize, f64)> = None;
        let parent = sum * sum / n as f64;
        let mut order: Vec<usize> = idx.to_vec();
        for f in feats.iter() {
            order.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]));
            let mut left = 0.0;
            for k in 0..n - 1 {
                left += self.y[order[k]];
                let nl = k + 1;
                let nr = n - nl;
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let xa = self.x[[order[k], f]];
                let xb = self.x[[order[k + 1], f]];
                if xa == xb {
                    continue;
                }
                let right = sum - left;
                // Reduction in squared error (equivalently Gini for 0/1 targets).
                let gain = left * left / nl as f64 + right * right / nr as f64 - parent;
                if best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
                    best = Some((gain, f, 0.5 * (xa + xb)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return me;
        };
        let mut split = 0;
        for k in 0..n {
            if self.x[[idx[k], feature]] <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

/// Bagged CART ensemble. For classification the 0/1 target is regressed
/// directly, so predictions are averaged leaf class fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub task: Task,
}

impl Forest {
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let mut buf = vec![0.0; x.ncols()];
        x.rows()
            .into_iter()
            .map(|r| {
                buf.iter_mut().zip(r.iter()).for_each(|(b, v)| *b = *v);
                self.trees.iter().map(|t| t.predict_row(&buf)).sum::<f64>() / self.trees.len() as f64
            })
            .collect()
    }
}

pub fn fit_forest(x: ArrayView2<f64>, y: &[f64], task: Task, cfg: &ForestConfig, rng: &mut Rng) -> Forest {
    let (n, d) = x.dim();
    assert_eq!(n, y.len(), "x and y lengths differ");
    let mtry = cfg.mtry.unwrap_or(match task {
        Task::Regression => d.div_ceil(3),
        Task::Classification => (d as f64).sqrt().ceil() as usize,
    });
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for _ in 0..cfg.n_trees.max(1) {
        let mut idx: Vec<usize> = if cfg.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut b = Builder {
            x,
            y,
            mtry: mtry.max(1),
            min_leaf: cfg.min_leaf.max(1),
            max_depth: cfg.max_depth.unwrap_or(usize::MAX),
            nodes: Vec::new(),
        };
        b.build(&mut idx, 0, rng);
        trees.push(Tree { nodes: b.nodes });
    }
    Forest { trees, task }
}

//! Isolation forest, used both as the intrinsic-reward oracle on embedded
//! data and as the standalone unsupervised baseline.
//!
//! Scores follow the canonical form s(x) = 2^(-E[path] / c(subsample)),
//! always in [0,1], larger meaning more anomalous.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const EULER_MASCHERONI: f64 = 0.5772156649;

/// Expected path length of an unsuccessful search in a binary search tree
/// over n points; the harmonic number is approximated by ln(i) + gamma.
pub fn c(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let m = (n - 1) as f64;
    2.0 * (m.ln() + EULER_MASCHERONI) - 2.0 * m / n as f64
}

#[derive(Debug, Clone)]
enum Node {
    Internal {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone)]
pub struct IsolationTree {
    nodes: Vec<Node>,
    pub height_limit: usize,
}

impl IsolationTree {
    fn build(data: &[Vec<f64>], items: &mut Vec<usize>, height_limit: usize, rng: &mut ChaCha8Rng) -> IsolationTree {
        let mut tree = IsolationTree {
            nodes: Vec::new(),
            height_limit,
        };
        tree.build_node(data, items, 0, rng);
        tree
    }

    fn build_node(
        &mut self,
        data: &[Vec<f64>],
        items: &[usize],
        depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let dim = data[0].len();
        let make_leaf = |nodes: &mut Vec<Node>| {
            nodes.push(Node::Leaf { size: items.len() });
            nodes.len() - 1
        };
        if depth >= self.height_limit || items.len() <= 1 {
            return make_leaf(&mut self.nodes);
        }
        // Candidate dimensions are those with spread at this node; a node
        // constant in every feature becomes a leaf.
        let mut splittable = Vec::new();
        for d in 0..dim {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for &i in items {
                min = min.min(data[i][d]);
                max = max.max(data[i][d]);
            }
            if max > min {
                splittable.push((d, min, max));
            }
        }
        if splittable.is_empty() {
            return make_leaf(&mut self.nodes);
        }
        let (d, min, max) = splittable[rng.random_range(0..splittable.len())];
        let value = rng.random_range(min..max);
        let (left_items, right_items): (Vec<usize>, Vec<usize>) =
            items.iter().partition(|&&i| data[i][d] < value);

        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { size: 0 }); // placeholder
        let left = self.build_node(data, &left_items, depth + 1, rng);
        let right = self.build_node(data, &right_items, depth + 1, rng);
        self.nodes[idx] = Node::Internal {
            dim: d,
            value,
            left,
            right,
        };
        idx
    }

    /// Edges traversed to the reached leaf, plus c(leaf_size).
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0usize;
        let mut depth = 0usize;
        loop {
            match &self.nodes[node] {
                Node::Leaf { size } => return depth as f64 + c(*size),
                Node::Internal {
                    dim,
                    value,
                    left,
                    right,
                } => {
                    node = if x[*dim] < *value { *left } else { *right };
                    depth += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct IsolationForest {
    pub trees: Vec<IsolationTree>,
    pub subsample_size: usize,
    pub train_dim: usize,
}

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 256;

impl IsolationForest {
    /// Fit `n_trees` trees, each on an independent uniform subsample.
    /// `subsample` is clamped to the data size. Deterministic given `seed`.
    pub fn fit(data: &[Vec<f64>], n_trees: usize, subsample: usize, seed: u64) -> Result<IsolationForest> {
        if data.is_empty() {
            return Err(Error::Config("cannot fit an isolation forest on zero rows".into()));
        }
        if n_trees == 0 {
            return Err(Error::Config("tree count must be >= 1".into()));
        }
        let train_dim = data[0].len();
        if data.iter().any(|r| r.len() != train_dim) {
            return Err(Error::Config("ragged rows in isolation forest input".into()));
        }
        let subsample_size = subsample.min(data.len()).max(1);
        let height_limit = (subsample_size as f64).log2().ceil().max(0.0) as usize;

        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            // Per-tree seed derived from the master stream so trees stay
            // independent and the whole fit is reproducible.
            let tree_seed: u64 = master.random();
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
            let mut items: Vec<usize> =
                rand::seq::index::sample(&mut rng, data.len(), subsample_size).into_vec();
            trees.push(IsolationTree::build(data, &mut items, height_limit, &mut rng));
        }
        Ok(IsolationForest {
            trees,
            subsample_size,
            train_dim,
        })
    }

    pub fn fit_default(data: &[Vec<f64>], seed: u64) -> Result<IsolationForest> {
        Self::fit(data, DEFAULT_TREES, DEFAULT_SUBSAMPLE, seed)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.train_dim {
            return Err(Error::Dimension {
                expected: self.train_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn mean_path_length(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let sum: f64 = self.trees.iter().map(|t| t.path_length(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Anomaly score in [0,1]: 2^(-E[path] / c(subsample_size)).
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let e = self.mean_path_length(x)?;
        let norm = c(self.subsample_size);
        if norm <= 0.0 {
            // Degenerate forest (subsample of one point): every path is 0.
            return Ok(1.0);
        }
        Ok(2f64.powf(-e / norm))
    }

    pub fn score_all(&self, data: &[Vec<f64>]) -> Result<Vec<f64>> {
        data.iter().map(|r| self.score(r)).collect()
    }
}

//! Bagged CART regression forests with variance-reduction splits.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ForestConfig;
use super::ModelError;

const LEAF: i64 = -1;

/// Mean that is exact when all values are equal and never leaves their range.
fn bounded_mean(mut it: impl Iterator<Item = f64>) -> f64 {
    let first = it.next().expect("non-empty");
    let (mut lo, mut hi, mut acc, mut n) = (first, first, 0.0, 1usize);
    for v in it {
        lo = lo.min(v);
        hi = hi.max(v);
        acc += v - first;
        n += 1;
    }
    (first + acc / n as f64).clamp(lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Split feature, or -1 for a leaf.
    pub feature: i64,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    /// Mean target of the training rows that reached this node.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Rows go left when `x[feature] <= threshold`.
    pub fn predict(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.feature == LEAF {
                return n.value;
            }
            i = if row[n.feature as usize] <= n.threshold {
                n.left
            } else {
                n.right
            };
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.feature == LEAF {
                0
            } else {
                1 + walk(t, n.left).max(walk(t, n.right))
            }
        }
        walk(self, 0)
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Number of rows (in sorted order) going left.
    n_left: usize,
    score: f64,
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn best_split<R: Rng>(&self, idx: &mut [usize], rng: &mut R) -> Option<Split> {
        let n = idx.len();
        let d = self.x.dim().1;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let parent_score = total * total / n as f64;
        let features = rand::seq::index::sample(rng, d, self.mtry.min(d));
        let mut best: Option<Split> = None;
        for f in features.iter() {
            idx.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for p in 1..n {
                left_sum += self.y[idx[p - 1]];
                if p < self.cfg.min_leaf || n - p < self.cfg.min_leaf {
                    continue;
                }
                let (lo, hi) = (self.x[[idx[p - 1], f]], self.x[[idx[p], f]]);
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                // SSE reduction up to a constant: sum_L^2/n_L + sum_R^2/n_R
                let score = left_sum * left_sum / p as f64 + right_sum * right_sum / (n - p) as f64;
                if score > parent_score + 1e-12 * parent_score.abs().max(1.0)
                    && best.as_ref().is_none_or(|b| score > b.score)
                {
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some(Split {
                        feature: f,
                        threshold: if mid < hi { mid } else { lo },
                        n_left: p,
                        score,
                    });
                }
            }
        }
        best
    }

    fn grow<R: Rng>(&mut self, idx: &mut [usize], depth: usize, rng: &mut R) -> usize {
        let n = idx.len();
        let mean = bounded_mean(idx.iter().map(|&i| self.y[i]));
        let id = self.nodes.len();
        self.nodes.push(Node {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: mean,
        });
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        if depth >= self.cfg.max_depth || n < 2 * self.cfg.min_leaf || pure {
            return id;
        }
        let Some(split) = self.best_split(idx, rng) else {
            return id;
        };
        let f = split.feature;
        idx.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b)));
        let (l, r) = idx.split_at_mut(split.n_left);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node {
            feature: f as i64,
            threshold: split.threshold,
            left,
            right,
            value: mean,
        };
        id
    }
}

fn fit_tree(x: ArrayView2<'_, f64>, y: &[f64], cfg: &ForestConfig, mut rng: ChaCha8Rng) -> Tree {
    let n = y.len();
    let d = x.dim().1;
    let mut idx: Vec<usize> = if cfg.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut g = Grower {
        x,
        y,
        cfg,
        mtry: cfg.max_features.unwrap_or((d / 3).max(1)).clamp(1, d.max(1)),
        nodes: Vec::new(),
    };
    g.grow(&mut idx, 0, &mut rng);
    Tree { nodes: g.nodes }
}

/// Trees for one target coordinate; prediction is the mean over trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    pub trees: Vec<Tree>,
}

impl RegressionForest {
    /// Fits `cfg.n_trees` trees in parallel. Tree `i` draws from its own
    /// ChaCha stream `stream_base + i`, so results do not depend on scheduling.
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        cfg: &ForestConfig,
        seed: u64,
        stream_base: u64,
    ) -> Result<Self, ModelError> {
        if y.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        if x.dim().0 != y.len() {
            return Err(ModelError::ShapeMismatch("feature and target rows differ".into()));
        }
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream_base + t as u64);
                fit_tree(x, y, cfg, rng)
            })
            .collect();
        Ok(Self { trees })
    }

    pub fn predict(&self, row: ArrayView1<'_, f64>) -> f64 {
        bounded_mean(self.trees.iter().map(|t| t.predict(row)))
    }

    /// Nodes of every tree stacked as `[feature, threshold, left, right, value]` rows,
    /// with the per-tree node counts.
    pub fn to_tensors(&self) -> (Array2<f64>, Vec<f64>) {
        let total: usize = self.trees.iter().map(|t| t.nodes.len()).sum();
        let mut nodes = Array2::zeros((total, 5));
        let mut counts = Vec::with_capacity(self.trees.len());
        let mut r = 0;
        for t in &self.trees {
            counts.push(t.nodes.len() as f64);
            for n in &t.nodes {
                nodes.row_mut(r).assign(&ndarray::arr1(&[
                    n.feature as f64,
                    n.threshold,
                    n.left as f64,
                    n.right as f64,
                    n.value,
                ]));
                r += 1;
            }
        }
        (nodes, counts)
    }

    pub fn from_tensors(nodes: ArrayView2<'_, f64>, counts: &[f64]) -> Result<Self, ModelError> {
        let bad = || ModelError::Format("inconsistent forest tensors".into());
        if nodes.dim().1 != 5 {
            return Err(bad());
        }
        let mut trees = Vec::with_capacity(counts.len());
        let mut r = 0;
        for &c in counts {
            let c = c as usize;
            if c == 0 || r + c > nodes.dim().0 {
                return Err(bad());
            }
            let tree_nodes: Vec<Node> = (r..r + c)
                .map(|i| {
                    let row = nodes.row(i);
                    Node {
                        feature: row[0] as i64,
                        threshold: row[1],
                        left: row[2] as usize,
                        right: row[3] as usize,
                        value: row[4],
                    }
                })
                .collect();
            if tree_nodes
                .iter()
                .any(|n| n.feature != LEAF && (n.left >= c || n.right >= c))
            {
                return Err(bad());
            }
            trees.push(Tree { nodes: tree_nodes });
            r += c;
        }
        if r != nodes.dim().0 || trees.is_empty() {
            return Err(bad());
        }
        Ok(Self { trees })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array2};

    #[test]
    fn single_sample_predicts_its_target() {
        let x = Array2::from_shape_vec((1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let f = RegressionForest::fit(x.view(), &[0.42], &ForestConfig::default(), 1, 0).unwrap();
        assert_eq!(f.predict(arr1(&[9.0, 9.0, 9.0]).view()), 0.42);
    }

    #[test]
    fn depth_is_bounded() {
        let x = Array2::from_shape_fn((200, 2), |(i, j)| ((i * 37 + j * 11) % 101) as f64);
        let y: Vec<f64> = (0..200).map(|i| ((i * 13) % 17) as f64).collect();
        let cfg = ForestConfig {
            n_trees: 5,
            max_depth: 4,
            min_leaf: 2,
            ..ForestConfig::default()
        };
        let f = RegressionForest::fit(x.view(), &y, &cfg, 3, 0).unwrap();
        assert!(f.trees.iter().all(|t| t.depth() <= 4));
    }

    #[test]
    fn tensor_round_trip() {
        let x = Array2::from_shape_fn((50, 3), |(i, j)| (i as f64 * 0.37 + j as f64).sin());
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.1).cos()).collect();
        let cfg = ForestConfig {
            n_trees: 4,
            ..ForestConfig::default()
        };
        let f = RegressionForest::fit(x.view(), &y, &cfg, 9, 0).unwrap();
        let (nodes, counts) = f.to_tensors();
        assert_eq!(RegressionForest::from_tensors(nodes.view(), &counts).unwrap(), f);
    }

    #[test]
    fn deterministic_across_runs() {
        let x = Array2::from_shape_fn((80, 6), |(i, j)| ((i * 7 + j * 3) % 23) as f64);
        let y: Vec<f64> = (0..80).map(|i| (i % 9) as f64).collect();
        let cfg = ForestConfig {
            n_trees: 8,
            ..ForestConfig::default()
        };
        let a = RegressionForest::fit(x.view(), &y, &cfg, 5, 0).unwrap();
        let b = RegressionForest::fit(x.view(), &y, &cfg, 5, 0).unwrap();
        assert_eq!(a, b);
    }
}

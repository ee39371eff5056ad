use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{Fingerprint, PartitionId, Partitioner};
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::seed::{SeedSpec, StreamRng};

#[derive(Clone, Debug, PartialEq, Serialize)]
enum Node<T> {
    Split {
        attribute: usize,
        value: T,
        left: usize,
        right: usize,
    },
    Leaf {
        index: usize,
        depth: usize,
    },
}

/// A fully grown isolation tree over a `ξ`-point subsample. Points go left
/// iff `x[attribute] < value`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsolationTree<T> {
    sample_rows: Vec<usize>,
    nodes: Vec<Node<T>>,
    leaves: usize,
}

impl<T: Scalar> IsolationTree<T> {
    fn grow(data: &Matrix<T>, sample_rows: Vec<usize>, rng: &mut StreamRng) -> Self {
        let mut nodes = vec![Node::Leaf { index: 0, depth: 0 }];
        let mut leaves = 0;
        // (node slot, member rows, depth)
        let mut stack = vec![(0usize, sample_rows.clone(), 0usize)];
        while let Some((slot, rows, depth)) = stack.pop() {
            let splittable: Vec<(usize, T, T)> = (0..data.cols())
                .filter_map(|q| {
                    let mut lo = T::infinity();
                    let mut hi = T::neg_infinity();
                    for &r in &rows {
                        let v = data[(r, q)];
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    (lo < hi).then_some((q, lo, hi))
                })
                .collect();
            // stop: a single point, or all points coordinate-identical
            if rows.len() <= 1 || splittable.is_empty() {
                nodes[slot] = Node::Leaf { index: leaves, depth };
                leaves += 1;
                continue;
            }
            let (attribute, lo, hi) = splittable[rng.random_range(0..splittable.len())];
            let value = split_value(lo, hi, rng);
            let (l_rows, r_rows): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&r| data[(r, attribute)] < value);
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf { index: 0, depth: 0 });
            nodes.push(Node::Leaf { index: 0, depth: 0 });
            nodes[slot] = Node::Split {
                attribute,
                value,
                left,
                right,
            };
            // right pushed first so the left subtree is numbered first
            stack.push((right, r_rows, depth + 1));
            stack.push((left, l_rows, depth + 1));
        }
        Self {
            sample_rows,
            nodes,
            leaves,
        }
    }

    fn descend(&self, x: &[T]) -> (usize, usize) {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split {
                    attribute,
                    value,
                    left,
                    right,
                } => at = if x[attribute] < value { left } else { right },
                Node::Leaf { index, depth } => return (index, depth),
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    pub fn sample_rows(&self) -> &[usize] {
        &self.sample_rows
    }

    /// `(attribute, split value)` of every internal node, in node order.
    pub fn splits(&self) -> Vec<(usize, T)> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split { attribute, value, .. } => Some((attribute, value)),
                Node::Leaf { .. } => None,
            })
            .collect()
    }
}

/// Uniform draw strictly inside `(lo, hi)`.
fn split_value<T: Scalar>(lo: T, hi: T, rng: &mut StreamRng) -> T {
    for _ in 0..64 {
        let u = T::lit(rng.random::<f64>());
        let p = lo + u * (hi - lo);
        if p > lo && p < hi {
            return p;
        }
    }
    // lo and hi are adjacent floats or nearly so
    let mid = lo + (hi - lo) / T::lit(2.0);
    if mid > lo {
        mid
    } else {
        hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsolationForest<T> {
    #[serde(skip)]
    id: PartitionId,
    dim: usize,
    subsample: usize,
    trees: Vec<IsolationTree<T>>,
}

impl<T: Scalar> IsolationForest<T> {
    /// Grows `t` trees, each on its own `xi`-point subsample drawn from
    /// substream `(seed, tag, j)`.
    pub fn build(data: &Matrix<T>, xi: usize, t: usize, seed: SeedSpec, tag: &str) -> Result<Self> {
        let n = data.rows();
        if xi < 2 {
            return Err(Error::invalid("isolation forest subsample size must be at least 2"));
        }
        if xi > n {
            return Err(Error::invalid(format!("subsample size {xi} exceeds sample size {n}")));
        }
        if t == 0 {
            return Err(Error::invalid("number of trees must be at least 1"));
        }
        let trees: Vec<IsolationTree<T>> = (0..t)
            .into_par_iter()
            .map(|j| {
                let mut rng = seed.substream(tag, j as u64);
                let rows = index::sample(&mut rng, n, xi).into_vec();
                IsolationTree::grow(data, rows, &mut rng)
            })
            .collect();
        let mut fp = Fingerprint::new("iforest");
        fp.usize(data.cols());
        fp.usize(xi);
        for tree in &trees {
            for &r in &tree.sample_rows {
                fp.usize(r);
            }
            for (q, p) in tree.splits() {
                fp.usize(q);
                fp.scalar(p);
            }
        }
        Ok(Self {
            id: fp.finish(),
            dim: data.cols(),
            subsample: xi,
            trees,
        })
    }

    pub fn trees(&self) -> &[IsolationTree<T>] {
        &self.trees
    }

    pub fn subsample_size(&self) -> usize {
        self.subsample
    }

    /// Leaf reached by `x` in tree `tree`.
    pub fn leaf_index(&self, tree: usize, x: &[T]) -> Result<usize> {
        check_dim(self.dim, x.len())?;
        Ok(self.trees[tree].descend(x).0)
    }

    /// Root-to-leaf edge count of `x` in tree `tree`.
    pub fn path_length(&self, tree: usize, x: &[T]) -> Result<usize> {
        check_dim(self.dim, x.len())?;
        Ok(self.trees[tree].descend(x).1)
    }

    /// Mean path length over all trees; short paths flag anomalies.
    pub fn average_path_length(&self, x: &[T]) -> Result<T> {
        check_dim(self.dim, x.len())?;
        let total: usize = self.trees.iter().map(|t| t.descend(x).1).sum();
        Ok(T::from_count(total) / T::from_count(self.trees.len()))
    }
}

impl<T: Scalar> Partitioner<T> for IsolationForest<T> {
    fn id(&self) -> PartitionId {
        self.id
    }

    fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn cells_in_tree(&self, tree: usize) -> usize {
        self.trees[tree].leaves
    }

    #[inline]
    fn locate(&self, tree: usize, x: &[T]) -> usize {
        self.trees[tree].descend(x).0
    }
}

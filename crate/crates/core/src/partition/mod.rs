//! Random partitionings of a point cloud.
//!
//! Each partitioning holds `t` independent trees; a tree divides space into
//! cells and [`Partitioner::locate`] answers which cell a point falls in.
//! Two structures are provided: nearest-site Voronoi diagrams and
//! isolation trees.

mod iforest;
mod voronoi;

pub use iforest::{IsolationForest, IsolationTree};
pub use voronoi::{VoronoiPartitioning, VoronoiTree};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Result};
use crate::scalar::Scalar;

/// Identity of a built partitioning; feature maps from different
/// partitionings are not comparable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct PartitionId(pub u64);

pub trait Partitioner<T: Scalar>: Sync {
    fn id(&self) -> PartitionId;

    fn n_trees(&self) -> usize;

    /// Dimension of the partitioned space.
    fn dim(&self) -> usize;

    /// Number of cells in tree `tree`.
    fn cells_in_tree(&self, tree: usize) -> usize;

    /// Cell of `x` in tree `tree`. `x.len()` must equal [`Partitioner::dim`].
    fn locate(&self, tree: usize, x: &[T]) -> usize;

    /// Dimension-checked [`Partitioner::locate`].
    fn cell(&self, tree: usize, x: &[T]) -> Result<usize> {
        check_dim(self.dim(), x.len())?;
        Ok(self.locate(tree, x))
    }
}

/// Incremental hash used to derive a [`PartitionId`] from what was built.
pub(crate) struct Fingerprint(Sha256);

impl Fingerprint {
    pub(crate) fn new(kind: &str) -> Self {
        let mut h = Sha256::new();
        h.update(kind.as_bytes());
        Self(h)
    }

    pub(crate) fn usize(&mut self, v: usize) {
        self.0.update((v as u64).to_le_bytes());
    }

    pub(crate) fn scalar<T: Scalar>(&mut self, v: T) {
        self.0.update(v.as_f64().to_bits().to_le_bytes());
    }

    pub(crate) fn finish(self) -> PartitionId {
        let d = self.0.finalize();
        PartitionId(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
    }
}

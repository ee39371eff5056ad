//! Isolation Kernel: explicit feature maps, pairwise similarity, Gram
//! matrices and the observation cross-kernel vector. A Gaussian RBF kernel is
//! provided for the simulation space as an alternative.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::partition::{PartitionId, Partitioner};
use crate::scalar::{squared_distance, Scalar};

/// A point's embedding: the cell it falls in for each of the `t` trees.
/// Equivalent to a binary vector of length `t·ξ` with exactly `t` ones.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct FeatureIndexMap {
    partition: PartitionId,
    cells: Vec<u32>,
}

impl FeatureIndexMap {
    pub fn new(partition: PartitionId, cells: Vec<u32>) -> Self {
        Self { partition, cells }
    }

    pub fn partition(&self) -> PartitionId {
        self.partition
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn n_trees(&self) -> usize {
        self.cells.len()
    }

    /// Number of trees on which `self` and `other` share a cell.
    pub fn agreement(&self, other: &FeatureIndexMap) -> Result<usize> {
        if self.partition != other.partition || self.cells.len() != other.cells.len() {
            return Err(Error::ProvenanceMismatch);
        }
        Ok(count_equal(&self.cells, &other.cells))
    }
}

#[inline]
pub(crate) fn count_equal(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x == y).count()
}

/// Embeds `x` under `partitioning`.
pub fn feature_map<T: Scalar, P: Partitioner<T> + ?Sized>(partitioning: &P, x: &[T]) -> Result<FeatureIndexMap> {
    check_dim(partitioning.dim(), x.len())?;
    let cells = (0..partitioning.n_trees())
        .map(|j| partitioning.locate(j, x) as u32)
        .collect();
    Ok(FeatureIndexMap::new(partitioning.id(), cells))
}

/// Embeds every row of `points`, in row order.
pub fn feature_maps<T: Scalar, P: Partitioner<T> + ?Sized>(
    partitioning: &P,
    points: &Matrix<T>,
) -> Result<Vec<FeatureIndexMap>> {
    check_dim(partitioning.dim(), points.cols())?;
    Ok((0..points.rows())
        .into_par_iter()
        .map(|i| {
            let x = points.row(i);
            let cells = (0..partitioning.n_trees())
                .map(|j| partitioning.locate(j, x) as u32)
                .collect();
            FeatureIndexMap::new(partitioning.id(), cells)
        })
        .collect())
}

/// Fraction of trees in which the two points share a cell.
pub fn kernel_similarity<T: Scalar>(a: &FeatureIndexMap, b: &FeatureIndexMap) -> Result<T> {
    let agree = a.agreement(b)?;
    if a.n_trees() == 0 {
        return Err(Error::EmptyInput("feature map has no trees"));
    }
    Ok(T::from_count(agree) / T::from_count(a.n_trees()))
}

fn check_shared(maps: &[FeatureIndexMap]) -> Result<()> {
    let first = maps.first().ok_or(Error::EmptyInput("no feature maps"))?;
    if first.n_trees() == 0 {
        return Err(Error::EmptyInput("feature map has no trees"));
    }
    if maps
        .iter()
        .any(|m| m.partition != first.partition || m.cells.len() != first.cells.len())
    {
        return Err(Error::ProvenanceMismatch);
    }
    Ok(())
}

/// Symmetric kernel matrix with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix<T> {
    values: Matrix<T>,
}

impl<T: Scalar> GramMatrix<T> {
    /// Wraps a matrix after checking it is square, symmetric, finite and
    /// has a unit diagonal.
    pub fn from_matrix(values: Matrix<T>) -> Result<Self> {
        check_dim(values.rows(), values.cols())?;
        if values.rows() == 0 {
            return Err(Error::EmptyInput("gram matrix"));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("gram matrix"));
        }
        if !values.is_symmetric(T::zero()) {
            return Err(Error::invalid("gram matrix is not symmetric"));
        }
        if (0..values.rows()).any(|i| values[(i, i)] != T::one()) {
            return Err(Error::invalid("gram matrix diagonal must be 1"));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.values
    }

    /// Row-major CSV without header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for row in self.values.iter_rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Isolation Kernel Gram matrix of `maps`.
pub fn gram_matrix<T: Scalar>(maps: &[FeatureIndexMap]) -> Result<GramMatrix<T>> {
    check_shared(maps)?;
    let n = maps.len();
    let inv_t = T::one() / T::from_count(maps[0].n_trees());
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|m| {
                    if m == i {
                        T::one()
                    } else {
                        T::from_count(count_equal(&maps[i].cells, &maps[m].cells)) * inv_t
                    }
                })
                .collect()
        })
        .collect();
    Ok(GramMatrix {
        values: Matrix::from_rows(&rows)?,
    })
}

/// `k(s_i, s*)` for every sample `i`.
pub fn kernel_cross_vector<T: Scalar>(maps: &[FeatureIndexMap], obs_map: &FeatureIndexMap) -> Result<Vec<T>> {
    check_shared(maps)?;
    maps.iter().map(|m| kernel_similarity(m, obs_map)).collect()
}

/// Gaussian RBF kernel `exp(-‖x−y‖² / 2σ²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RbfKernel<T> {
    pub bandwidth: T,
}

impl<T: Scalar> RbfKernel<T> {
    pub fn new(bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::invalid("rbf bandwidth must be positive"));
        }
        Ok(Self { bandwidth })
    }

    /// Bandwidth set to the median pairwise distance. Large samples use an
    /// evenly strided subset of at most 1000 rows.
    pub fn median_heuristic(points: &Matrix<T>) -> Result<Self> {
        let n = points.rows();
        if n < 2 {
            return Err(Error::EmptyInput("median heuristic needs two points"));
        }
        let stride = n.div_ceil(1000).max(1);
        let idx: Vec<usize> = (0..n).step_by(stride).collect();
        let mut d: Vec<T> = Vec::with_capacity(idx.len() * idx.len() / 2);
        for (a, &i) in idx.iter().enumerate() {
            for &m in &idx[a + 1..] {
                d.push(squared_distance(points.row(i), points.row(m)).sqrt());
            }
        }
        d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let med = d[d.len() / 2];
        Self::new(if med > T::zero() { med } else { T::one() })
    }

    #[inline]
    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        let two = T::lit(2.0);
        (-squared_distance(a, b) / (two * self.bandwidth * self.bandwidth)).exp()
    }

    pub fn gram(&self, points: &Matrix<T>) -> Result<GramMatrix<T>> {
        let n = points.rows();
        if n == 0 {
            return Err(Error::EmptyInput("rbf gram"));
        }
        let mut g = Matrix::identity(n);
        let upper: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| (i + 1..n).map(|m| self.eval(points.row(i), points.row(m))).collect())
            .collect();
        for (i, row) in upper.into_iter().enumerate() {
            for (o, v) in row.into_iter().enumerate() {
                g[(i, i + 1 + o)] = v;
                g[(i + 1 + o, i)] = v;
            }
        }
        Ok(GramMatrix { values: g })
    }

    pub fn cross(&self, points: &Matrix<T>, x: &[T]) -> Result<Vec<T>> {
        check_dim(points.cols(), x.len())?;
        Ok(points.iter_rows().map(|r| self.eval(r, x)).collect())
    }
}

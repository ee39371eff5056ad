//! Kernel ABC posterior weights and the maxima weighted mapping.
//!
//! The weights `w = (G + nλI)⁻¹ k` express the observation's kernel mean
//! embedding as a combination of the sample points. Accumulating them per
//! Voronoi site of a parameter-space partitioning gives, for each tree, a
//! mass over sites; the per-tree argmax sites form the maxima weighted
//! mapping that the tracer search then tries to hit.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::kernel::{count_equal, gram_matrix, FeatureIndexMap, GramMatrix};
use crate::linalg::{Ldl, Matrix};
use crate::partition::{PartitionId, Partitioner, VoronoiPartitioning};
use crate::scalar::Scalar;

const REFINEMENT_STEPS: usize = 3;

/// Solution of the regularized kernel system.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PosteriorWeights<T> {
    pub w: Vec<T>,
    pub lambda: T,
    /// `‖(G + nλI)w − k‖∞` of the returned solution.
    pub residual_norm: T,
}

impl<T: Scalar> PosteriorWeights<T> {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn min(&self) -> T {
        self.w.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.w.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn sum(&self) -> T {
        self.w.iter().copied().sum()
    }
}

fn check_system<T: Scalar>(n: usize, k_vec: &[T], lambda: T) -> Result<()> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be positive"));
    }
    if n == 0 {
        return Err(Error::EmptyInput("kernel system"));
    }
    check_dim(n, k_vec.len())?;
    if k_vec.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel cross vector"));
    }
    Ok(())
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Solves with `solve`, then polishes with a few steps of iterative
/// refinement against the exact operator `apply`.
fn refined_solve<T: Scalar>(
    k_vec: &[T],
    lambda: T,
    solve: impl Fn(&[T]) -> Result<Vec<T>>,
    apply: impl Fn(&[T]) -> Vec<T>,
) -> Result<PosteriorWeights<T>> {
    let tol = T::residual_tolerance();
    let mut w = solve(k_vec)?;
    let residual = |w: &[T]| -> Vec<T> { apply(w).iter().zip(k_vec).map(|(&a, &b)| a - b).collect() };
    let mut r = residual(&w);
    let mut norm = inf_norm(&r);
    for _ in 0..REFINEMENT_STEPS {
        if norm <= tol * T::lit(1e-3) {
            break;
        }
        let delta = solve(&r)?;
        let candidate: Vec<T> = w.iter().zip(&delta).map(|(&a, &d)| a - d).collect();
        let r_new = residual(&candidate);
        let n_new = inf_norm(&r_new);
        if n_new >= norm {
            break;
        }
        w = candidate;
        r = r_new;
        norm = n_new;
    }
    if !(norm <= tol) {
        return Err(Error::Residual {
            residual: norm.as_f64(),
            tolerance: tol.as_f64(),
        });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("posterior weights"));
    }
    Ok(PosteriorWeights {
        w,
        lambda,
        residual_norm: norm,
    })
}

/// Posterior weights from an explicit Gram matrix, via LDLᵀ of `G + nλI`.
pub fn posterior_weights<T: Scalar>(g: &GramMatrix<T>, k_vec: &[T], lambda: T) -> Result<PosteriorWeights<T>> {
    let n = g.n();
    check_system(n, k_vec, lambda)?;
    let shift = T::from_count(n) * lambda;
    let mut a = g.matrix().clone();
    for i in 0..n {
        a[(i, i)] += shift;
    }
    let ldl = Ldl::factorize(a)?;
    let gm = g.matrix();
    refined_solve(
        k_vec,
        lambda,
        |b| ldl.solve(b),
        |w| {
            (0..n)
                .into_par_iter()
                .map(|i| crate::scalar::dot(gm.row(i), w) + shift * w[i])
                .collect()
        },
    )
}

/// Column layout of the explicit binary feature matrix `F` (`n × m`,
/// `m = Σ_j cells_j`) behind an Isolation Kernel Gram matrix `G = FFᵀ/t`.
struct FeatureLayout<'a> {
    maps: &'a [FeatureIndexMap],
    offsets: Vec<usize>,
    width: usize,
}

impl<'a> FeatureLayout<'a> {
    fn new<T: Scalar, P: Partitioner<T> + ?Sized>(partitioning: &P, maps: &'a [FeatureIndexMap]) -> Result<Self> {
        let t = partitioning.n_trees();
        if maps
            .iter()
            .any(|m| m.partition() != partitioning.id() || m.n_trees() != t)
        {
            return Err(Error::ProvenanceMismatch);
        }
        let mut offsets = Vec::with_capacity(t);
        let mut width = 0;
        for j in 0..t {
            offsets.push(width);
            width += partitioning.cells_in_tree(j);
        }
        Ok(Self { maps, offsets, width })
    }

    fn t(&self) -> usize {
        self.offsets.len()
    }

    #[inline]
    fn columns<'b>(&'b self, i: usize) -> impl Iterator<Item = usize> + 'b {
        self.maps[i]
            .cells()
            .iter()
            .zip(&self.offsets)
            .map(|(&c, &o)| o + c as usize)
    }

    /// `Fᵀ v`
    fn project<T: Scalar>(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.width];
        for (i, &vi) in v.iter().enumerate() {
            for c in self.columns(i) {
                out[c] += vi;
            }
        }
        out
    }

    /// `F u`
    fn expand<T: Scalar>(&self, u: &[T]) -> Vec<T> {
        (0..self.maps.len())
            .map(|i| self.columns(i).map(|c| u[c]).sum())
            .collect()
    }

    /// `FᵀF + diag`, dense.
    fn normal_matrix<T: Scalar>(&self, diag: T) -> Matrix<T> {
        let mut m = Matrix::zeros(self.width, self.width);
        let mut cols = Vec::with_capacity(self.t());
        for i in 0..self.maps.len() {
            cols.clear();
            cols.extend(self.columns(i));
            for &a in &cols {
                let row = m.row_mut(a);
                for &b in &cols {
                    row[b] += T::one();
                }
            }
        }
        for a in 0..self.width {
            m[(a, a)] += diag;
        }
        m
    }
}

/// Posterior weights for an Isolation Kernel Gram matrix given implicitly by
/// the sample feature maps. Uses the Woodbury identity
/// `(FFᵀ/t + cI)⁻¹ = (I − F(tcI + FᵀF)⁻¹Fᵀ)/c` with `c = nλ`, so the
/// factorized system has one row per cell instead of one per sample.
pub fn posterior_weights_from_maps<T: Scalar, P: Partitioner<T> + ?Sized>(
    partitioning: &P,
    maps: &[FeatureIndexMap],
    k_vec: &[T],
    lambda: T,
) -> Result<PosteriorWeights<T>> {
    let n = maps.len();
    check_system(n, k_vec, lambda)?;
    let layout = FeatureLayout::new(partitioning, maps)?;
    let t = T::from_count(layout.t());
    let c = T::from_count(n) * lambda;
    let ldl = Ldl::factorize(layout.normal_matrix(t * c))?;
    refined_solve(
        k_vec,
        lambda,
        |b| {
            let u = ldl.solve(&layout.project(b))?;
            let fu = layout.expand(&u);
            Ok(b.iter().zip(&fu).map(|(&bi, &fi)| (bi - fi) / c).collect())
        },
        |w| {
            let gw = layout.expand(&layout.project(w));
            gw.iter().zip(w).map(|(&g, &wi)| g / t + c * wi).collect()
        },
    )
}

/// Posterior weights for an implicit Isolation Kernel Gram matrix by
/// conjugate gradients. Each iteration costs `O(n·t)`, so this suits wide
/// feature spaces where neither `G` nor `FᵀF` is cheap to factorize.
pub fn posterior_weights_iterative<T: Scalar, P: Partitioner<T> + ?Sized>(
    partitioning: &P,
    maps: &[FeatureIndexMap],
    k_vec: &[T],
    lambda: T,
) -> Result<PosteriorWeights<T>> {
    let n = maps.len();
    check_system(n, k_vec, lambda)?;
    let layout = FeatureLayout::new(partitioning, maps)?;
    let t = T::from_count(layout.t());
    let c = T::from_count(n) * lambda;
    let apply = |w: &[T]| -> Vec<T> {
        let gw = layout.expand(&layout.project(w));
        gw.iter().zip(w).map(|(&g, &wi)| g / t + c * wi).collect()
    };
    let max_iter = (4 * n).clamp(50, 20_000);
    let rel = T::epsilon().sqrt() * T::lit(1e-4);
    let cg = |b: &[T]| -> Result<Vec<T>> {
        let stop = inf_norm(b) * rel;
        let mut x = vec![T::zero(); n];
        let mut r = b.to_vec();
        let mut p = r.clone();
        let mut rr = crate::scalar::dot(&r, &r);
        for _ in 0..max_iter {
            if inf_norm(&r) <= stop {
                break;
            }
            let ap = apply(&p);
            let alpha = rr / crate::scalar::dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = crate::scalar::dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        Ok(x)
    };
    refined_solve(k_vec, lambda, cg, apply)
}

/// Feature-space widths up to which a direct factorization is used.
const DIRECT_SOLVE_LIMIT: usize = 2000;

/// Posterior weights for an Isolation Kernel given by sample feature maps,
/// choosing between the dense, Woodbury and conjugate-gradient routes by
/// problem shape. All routes meet the same residual tolerance.
pub fn posterior_weights_isolation<T: Scalar, P: Partitioner<T> + ?Sized>(
    partitioning: &P,
    maps: &[FeatureIndexMap],
    k_vec: &[T],
    lambda: T,
) -> Result<PosteriorWeights<T>> {
    let (n, m) = (maps.len(), feature_space_width(partitioning));
    if n <= m.min(DIRECT_SOLVE_LIMIT) {
        posterior_weights(&gram_matrix(maps)?, k_vec, lambda)
    } else if m <= DIRECT_SOLVE_LIMIT {
        posterior_weights_from_maps(partitioning, maps, k_vec, lambda)
    } else {
        posterior_weights_iterative(partitioning, maps, k_vec, lambda)
    }
}

/// Width `Σ_j cells_j` of the feature-space system for `partitioning`.
pub fn feature_space_width<T: Scalar, P: Partitioner<T> + ?Sized>(partitioning: &P) -> usize {
    (0..partitioning.n_trees()).map(|j| partitioning.cells_in_tree(j)).sum()
}

/// Per-tree accumulated weight of each site, `p[j][k] = (1/n) Σ_i w_i 1(ζ_ij = k)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SiteProbabilities<T> {
    partition: PartitionId,
    p: Vec<Vec<T>>,
}

impl<T: Scalar> SiteProbabilities<T> {
    pub fn partition(&self) -> PartitionId {
        self.partition
    }

    pub fn tree(&self, j: usize) -> &[T] {
        &self.p[j]
    }

    pub fn n_trees(&self) -> usize {
        self.p.len()
    }

    pub fn row_sums(&self) -> Vec<T> {
        self.p.iter().map(|r| r.iter().copied().sum()).collect()
    }
}

/// Accumulates posterior weights onto the sites of the parameter-space
/// partitioning. Negative weights are kept unless `clip_negative` is set.
pub fn site_probabilities<T: Scalar, P: Partitioner<T> + ?Sized>(
    weights: &PosteriorWeights<T>,
    param_maps: &[FeatureIndexMap],
    partitioning: &P,
    clip_negative: bool,
) -> Result<SiteProbabilities<T>> {
    check_dim(weights.len(), param_maps.len())?;
    let t = partitioning.n_trees();
    if param_maps
        .iter()
        .any(|m| m.partition() != partitioning.id() || m.n_trees() != t)
    {
        return Err(Error::ProvenanceMismatch);
    }
    let inv_n = T::one() / T::from_count(weights.len());
    let w: Vec<T> = if clip_negative {
        weights.w.iter().map(|&v| v.max(T::zero())).collect()
    } else {
        weights.w.clone()
    };
    // fixed summation order (sample index) per tree
    let p = (0..t)
        .into_par_iter()
        .map(|j| {
            let mut row = vec![T::zero(); partitioning.cells_in_tree(j)];
            for (m, &wi) in param_maps.iter().zip(&w) {
                row[m.cells()[j] as usize] += wi;
            }
            row.iter_mut().for_each(|v| *v *= inv_n);
            row
        })
        .collect();
    Ok(SiteProbabilities {
        partition: partitioning.id(),
        p,
    })
}

/// Per-tree argmax site: the observation's reduced embedding in parameter
/// space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaximaMapping<T> {
    partition: PartitionId,
    cells: Vec<u32>,
    sites: Matrix<T>,
}

impl<T: Scalar> MaximaMapping<T> {
    pub fn partition(&self) -> PartitionId {
        self.partition
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    /// Site coordinates `z*_j`, one row per tree.
    pub fn sites(&self) -> &Matrix<T> {
        &self.sites
    }

    pub fn n_trees(&self) -> usize {
        self.cells.len()
    }

    pub fn as_feature_map(&self) -> FeatureIndexMap {
        FeatureIndexMap::new(self.partition, self.cells.clone())
    }
}

/// Takes the heaviest site of every tree, ties to the lowest index.
pub fn maxima_weighted_mapping<T: Scalar>(
    p: &SiteProbabilities<T>,
    partitioning: &VoronoiPartitioning<T>,
) -> Result<MaximaMapping<T>> {
    if p.partition != partitioning.id() {
        return Err(Error::ProvenanceMismatch);
    }
    check_dim(partitioning.n_trees(), p.n_trees())?;
    let mut cells = Vec::with_capacity(p.n_trees());
    let mut sites = Vec::with_capacity(p.n_trees());
    for (j, row) in p.p.iter().enumerate() {
        check_dim(partitioning.sites_per_tree(), row.len())?;
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        cells.push(best as u32);
        sites.push(partitioning.site(j, best).to_vec());
    }
    Ok(MaximaMapping {
        partition: p.partition,
        cells,
        sites: Matrix::from_rows(&sites)?,
    })
}

/// Fraction of trees where `theta_map` hits the mapping's cell.
pub fn mapping_similarity<T: Scalar>(theta_map: &FeatureIndexMap, mapping: &MaximaMapping<T>) -> Result<T> {
    if theta_map.partition() != mapping.partition || theta_map.n_trees() != mapping.n_trees() {
        return Err(Error::ProvenanceMismatch);
    }
    if mapping.cells.is_empty() {
        return Err(Error::EmptyInput("maxima mapping has no trees"));
    }
    Ok(T::from_count(count_equal(theta_map.cells(), &mapping.cells)) / T::from_count(mapping.n_trees()))
}

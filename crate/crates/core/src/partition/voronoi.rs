use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use super::{Fingerprint, PartitionId, Partitioner};
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{squared_distance, Scalar};
use crate::seed::SeedSpec;

/// One Voronoi diagram: `ξ` sites drawn without replacement from the data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VoronoiTree<T> {
    /// Source row of each site in the training matrix.
    pub site_rows: Vec<usize>,
    pub sites: Matrix<T>,
}

impl<T: Scalar> VoronoiTree<T> {
    /// Index of the nearest site; ties go to the lowest index.
    #[inline]
    pub fn nearest(&self, x: &[T]) -> usize {
        let mut best = 0;
        let mut best_d = T::infinity();
        for (k, site) in self.sites.iter_rows().enumerate() {
            let d = squared_distance(site, x);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VoronoiPartitioning<T> {
    #[serde(skip)]
    id: PartitionId,
    dim: usize,
    sites_per_tree: usize,
    trees: Vec<VoronoiTree<T>>,
}

impl<T: Scalar> VoronoiPartitioning<T> {
    /// Builds `t` diagrams of `xi` sites each. Tree `j` samples its sites
    /// from substream `(seed, tag, j)`, so the result is independent of
    /// the number of worker threads.
    pub fn build(data: &Matrix<T>, xi: usize, t: usize, seed: SeedSpec, tag: &str) -> Result<Self> {
        let n = data.rows();
        if xi == 0 {
            return Err(Error::invalid("number of sites must be at least 1"));
        }
        if xi > n {
            return Err(Error::invalid(format!("number of sites {xi} exceeds sample size {n}")));
        }
        if t == 0 {
            return Err(Error::invalid("number of trees must be at least 1"));
        }
        let trees: Vec<VoronoiTree<T>> = (0..t)
            .into_par_iter()
            .map(|j| {
                let mut rng = seed.substream(tag, j as u64);
                let site_rows = index::sample(&mut rng, n, xi).into_vec();
                let sites = data.select_rows(&site_rows);
                VoronoiTree { site_rows, sites }
            })
            .collect();

        let mut fp = Fingerprint::new("voronoi");
        fp.usize(data.cols());
        fp.usize(xi);
        for tree in &trees {
            for &r in &tree.site_rows {
                fp.usize(r);
            }
            for &v in tree.sites.as_slice() {
                fp.scalar(v);
            }
        }
        Ok(Self {
            id: fp.finish(),
            dim: data.cols(),
            sites_per_tree: xi,
            trees,
        })
    }

    /// Wraps hand-specified site sets, one matrix per tree. Site rows are
    /// recorded as positions within each set.
    pub fn from_sites(trees: Vec<Matrix<T>>) -> Result<Self> {
        let first = trees.first().ok_or(Error::invalid("number of trees must be at least 1"))?;
        let (xi, dim) = (first.rows(), first.cols());
        if xi == 0 {
            return Err(Error::invalid("number of sites must be at least 1"));
        }
        let mut fp = Fingerprint::new("voronoi-fixed");
        fp.usize(dim);
        fp.usize(xi);
        let mut out = Vec::with_capacity(trees.len());
        for sites in trees {
            check_dim(xi, sites.rows())?;
            check_dim(dim, sites.cols())?;
            for &v in sites.as_slice() {
                fp.scalar(v);
            }
            out.push(VoronoiTree {
                site_rows: (0..xi).collect(),
                sites,
            });
        }
        Ok(Self {
            id: fp.finish(),
            dim,
            sites_per_tree: xi,
            trees: out,
        })
    }

    pub fn sites_per_tree(&self) -> usize {
        self.sites_per_tree
    }

    pub fn trees(&self) -> &[VoronoiTree<T>] {
        &self.trees
    }

    pub fn tree(&self, j: usize) -> &VoronoiTree<T> {
        &self.trees[j]
    }

    /// Coordinates of site `cell` of tree `tree`.
    pub fn site(&self, tree: usize, cell: usize) -> &[T] {
        self.trees[tree].sites.row(cell)
    }

    /// Cell (site slot) of `x` in tree `tree`.
    pub fn assign_cell(&self, tree: usize, x: &[T]) -> Result<usize> {
        check_dim(self.dim, x.len())?;
        if tree >= self.trees.len() {
            return Err(Error::invalid(format!("tree index {tree} out of range")));
        }
        Ok(self.trees[tree].nearest(x))
    }

    /// JSON dump of sites per tree for reproducibility audits.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl<T: Scalar> Partitioner<T> for VoronoiPartitioning<T> {
    fn id(&self) -> PartitionId {
        self.id
    }

    fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn cells_in_tree(&self, _tree: usize) -> usize {
        self.sites_per_tree
    }

    #[inline]
    fn locate(&self, tree: usize, x: &[T]) -> usize {
        self.trees[tree].nearest(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> Matrix<f64> {
        let mut rng = SeedSpec::new(seed).substream("test-data", 0);
        let v = (0..n * d).map(|_| rng.random::<f64>()).collect();
        Matrix::from_vec(n, d, v).unwrap()
    }

    fn fixed(sites: &[[f64; 2]]) -> VoronoiPartitioning<f64> {
        VoronoiPartitioning::from_sites(vec![Matrix::from_rows(sites).unwrap()]).unwrap()
    }

    #[test]
    fn exhaustive_subsample_is_permutation() {
        let data = random_data(10, 2, 1);
        let p = VoronoiPartitioning::build(&data, 10, 1, SeedSpec::new(3), "t").unwrap();
        let mut rows = p.tree(0).site_rows.clone();
        rows.sort_unstable();
        assert_eq!(rows, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn build_is_deterministic() {
        let data = random_data(1000, 3, 2);
        let a = VoronoiPartitioning::build(&data, 32, 200, SeedSpec::new(9), "t").unwrap();
        let b = VoronoiPartitioning::build(&data, 32, 200, SeedSpec::new(9), "t").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.id(), b.id());
        let c = VoronoiPartitioning::build(&data, 32, 200, SeedSpec::new(10), "t").unwrap();
        assert_ne!(a.id(), c.id());
    }

    #[test]
    fn sites_are_distinct_rows_within_tree() {
        let data = random_data(50, 2, 4);
        let p = VoronoiPartitioning::build(&data, 20, 30, SeedSpec::new(5), "t").unwrap();
        for tree in p.trees() {
            let mut rows = tree.site_rows.clone();
            rows.sort_unstable();
            rows.dedup();
            assert_eq!(rows.len(), 20);
        }
    }

    #[test]
    fn invalid_sizes() {
        let data = random_data(5, 2, 1);
        assert!(VoronoiPartitioning::build(&data, 6, 1, SeedSpec::new(1), "t").is_err());
        assert!(VoronoiPartitioning::build(&data, 0, 1, SeedSpec::new(1), "t").is_err());
        assert!(VoronoiPartitioning::build(&data, 2, 0, SeedSpec::new(1), "t").is_err());
    }

    #[test]
    fn nearest_site_examples() {
        let p = fixed(&[[0.0, 0.0], [10.0, 10.0]]);
        assert_eq!(p.assign_cell(0, &[1.0, 0.0]).unwrap(), 0);
        // equidistant: lowest index wins
        let p = fixed(&[[0.0, 0.0], [2.0, 0.0]]);
        assert_eq!(p.assign_cell(0, &[1.0, 0.0]).unwrap(), 0);
        let p = fixed(&[[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]]);
        assert_eq!(p.assign_cell(0, &[5.0, 5.0]).unwrap(), 2);
        assert!(matches!(
            p.assign_cell(0, &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn training_sites_map_to_their_own_slot() {
        let data = random_data(200, 3, 8);
        let p = VoronoiPartitioning::build(&data, 16, 10, SeedSpec::new(2), "t").unwrap();
        for (j, tree) in p.trees().iter().enumerate() {
            for (k, &row) in tree.site_rows.iter().enumerate() {
                assert_eq!(p.assign_cell(j, data.row(row)).unwrap(), k);
            }
        }
    }

    #[test]
    fn same_structure_on_any_thread_count() {
        let data = random_data(300, 2, 6);
        let build = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| VoronoiPartitioning::build(&data, 8, 64, SeedSpec::new(11), "t").unwrap())
        };
        assert_eq!(build(1), build(4));
    }

    #[test]
    fn json_dump_lists_sites() {
        let p = fixed(&[[0.0, 0.0], [1.0, 2.0]]);
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(v["trees"][0]["site_rows"], serde_json::json!([0, 1]));
        assert_eq!(v["sites_per_tree"], 2);
    }
}

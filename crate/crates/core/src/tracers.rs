//! "Tracers": a derivative-free search for the parameter whose embedding best
//! matches the maxima weighted mapping.
//!
//! Each round fires tracer points along segments joining every base point to
//! its most distant peer, scores them by the fraction of trees whose maxima
//! cell they hit, fits a line through the best tracers and samples along it.
//! The best tracers become the next round's base points. The search stops
//! once the round's best similarity improves by less than `epsilon`.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kabc::MaximaMapping;
use crate::kernel::count_equal;
use crate::linalg::{symmetric_eigen, Matrix};
use crate::partition::{Partitioner, VoronoiPartitioning};
use crate::scalar::{euclidean_distance, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TracersConfig {
    /// Tracers fired per base point.
    pub n_tr: usize,
    /// Best tracers kept per round.
    pub k_max: usize,
    /// Minimum similarity gain to keep iterating.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Candidates evaluated along the fitted line.
    pub line_samples: usize,
    /// Tracers above this similarity are preferred for the line fit.
    pub select_threshold: f64,
}

impl Default for TracersConfig {
    fn default() -> Self {
        Self {
            n_tr: 50,
            k_max: 20,
            epsilon: 1e-3,
            max_iter: 50,
            line_samples: 200,
            select_threshold: 0.5,
        }
    }
}

impl TracersConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tr == 0 || self.k_max == 0 || self.max_iter == 0 || self.line_samples == 0 {
            return Err(Error::invalid("tracer counts must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("tracer epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TracersResult<T> {
    /// Best point found, in the partitioned (normalized) coordinates.
    pub theta_est: Vec<T>,
    pub similarity: T,
    pub iterations: usize,
    /// Incumbent similarity after each round; non-decreasing.
    pub trajectory: Vec<T>,
    /// Incumbent point after each round.
    pub path: Vec<Vec<T>>,
}

impl<T: Scalar> TracersResult<T> {
    /// Per-round trace as CSV: `iteration,best_similarity,theta1..thetad`.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let d = self.theta_est.len();
        let mut out = String::from("iteration,best_similarity");
        for k in 1..=d {
            out.push_str(&format!(",theta{k}"));
        }
        out.push('\n');
        for (i, (s, theta)) in self.trajectory.iter().zip(&self.path).enumerate() {
            out.push_str(&format!("{},{:?}", i + 1, s));
            for v in theta {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn point_key<T: Scalar>(x: &[T]) -> Vec<u64> {
    x.iter().map(|v| v.as_f64().to_bits()).collect()
}

/// Points `α z_j + (1 − α) z_m` for every base point `z_j` and its most
/// distant peer `z_m`, with `α` running from 1 to 0 in `n_tr` even steps.
/// Duplicates are dropped, first occurrence kept.
pub fn generate_tracer_points<T: Scalar>(base: &Matrix<T>, n_tr: usize) -> Result<Matrix<T>> {
    if base.rows() == 0 {
        return Err(Error::EmptyInput("tracer base set"));
    }
    if n_tr == 0 {
        return Err(Error::invalid("n_tr must be at least 1"));
    }
    let d = base.cols();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut emit = |p: Vec<T>| {
        if seen.insert(point_key(&p)) {
            out.extend(p);
        }
    };
    for j in 0..base.rows() {
        let zj = base.row(j);
        let mut far = j;
        let mut far_d = T::zero();
        for m in 0..base.rows() {
            let dist = euclidean_distance(zj, base.row(m));
            if dist > far_d {
                far_d = dist;
                far = m;
            }
        }
        let zm = base.row(far);
        for i in 0..n_tr {
            let alpha = if n_tr == 1 {
                T::one()
            } else {
                T::one() - T::from_count(i) / T::from_count(n_tr - 1)
            };
            let p = (0..d)
                .map(|k| {
                    if alpha == T::one() {
                        zj[k]
                    } else if alpha == T::zero() {
                        zm[k]
                    } else {
                        alpha * zj[k] + (T::one() - alpha) * zm[k]
                    }
                })
                .collect();
            emit(p);
        }
    }
    let rows = out.len() / d.max(1);
    Matrix::from_vec(rows, d, out)
}

struct Scorer<'a, T> {
    partitioning: &'a VoronoiPartitioning<T>,
    target: &'a [u32],
    t: T,
}

impl<T: Scalar> Scorer<'_, T> {
    fn score(&self, x: &[T]) -> T {
        let cells: Vec<u32> = (0..self.partitioning.n_trees())
            .map(|j| self.partitioning.locate(j, x) as u32)
            .collect();
        T::from_count(count_equal(&cells, self.target)) / self.t
    }

    fn score_all(&self, points: &Matrix<T>) -> Vec<T> {
        (0..points.rows())
            .into_par_iter()
            .map(|i| self.score(points.row(i)))
            .collect()
    }
}

/// Indices of the best tracers, similarity descending then generation order.
fn select_top<T: Scalar>(sims: &[T], k_max: usize, threshold: T) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).expect("finite").then(a.cmp(&b)));
    let above: Vec<usize> = order.iter().copied().filter(|&i| sims[i] > threshold).collect();
    if above.len() >= k_max {
        above.into_iter().take(k_max).collect()
    } else {
        order.into_iter().take(k_max).collect()
    }
}

/// Candidates `θ_b + β τ` along the principal axis of the top tracers, with
/// `θ_b` their similarity-weighted centroid and `τ` spanning twice their
/// spread on either side. `None` when the tracers do not define a direction.
fn line_candidates<T: Scalar>(top: &Matrix<T>, sims: &[T], samples: usize) -> Result<Option<Matrix<T>>> {
    let (k, d) = (top.rows(), top.cols());
    if k < 2 {
        return Ok(None);
    }
    let mass: T = sims.iter().copied().sum();
    let mut centre = vec![T::zero(); d];
    for (row, &s) in top.iter_rows().zip(sims) {
        let w = if mass > T::zero() { s / mass } else { T::one() / T::from_count(k) };
        for (c, &x) in centre.iter_mut().zip(row) {
            *c += w * x;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    for row in top.iter_rows() {
        for a in 0..d {
            let da = row[a] - centre[a];
            for b in 0..d {
                cov[(a, b)] += da * (row[b] - centre[b]);
            }
        }
    }
    let trace: T = (0..d).map(|a| cov[(a, a)]).sum();
    if !(trace > T::epsilon() * T::epsilon()) {
        return Ok(None);
    }
    let (_, vecs) = symmetric_eigen(&cov)?;
    let beta = vecs.row(0);
    let spread = top
        .iter_rows()
        .map(|row| {
            row.iter()
                .zip(&centre)
                .zip(beta)
                .map(|((&x, &c), &b)| (x - c) * b)
                .sum::<T>()
                .abs()
        })
        .fold(T::zero(), T::max);
    if !(spread > T::zero()) {
        return Ok(None);
    }
    let half = T::lit(2.0) * spread;
    let mut out = Vec::with_capacity(samples * d);
    for i in 0..samples {
        let tau = if samples == 1 {
            T::zero()
        } else {
            -half + T::lit(2.0) * half * T::from_count(i) / T::from_count(samples - 1)
        };
        out.extend(centre.iter().zip(beta).map(|(&c, &b)| c + b * tau));
    }
    Ok(Some(Matrix::from_vec(samples, d, out)?))
}

/// Searches parameter space for the point most similar to `mapping`.
pub fn tracers_search<T: Scalar>(
    partitioning: &VoronoiPartitioning<T>,
    mapping: &MaximaMapping<T>,
    config: &TracersConfig,
) -> Result<TracersResult<T>> {
    config.validate()?;
    if partitioning.n_trees() == 0 {
        return Err(Error::invalid("partitioning has no trees"));
    }
    if mapping.n_trees() == 0 {
        return Err(Error::EmptyInput("maxima mapping"));
    }
    if mapping.partition() != partitioning.id() || mapping.n_trees() != partitioning.n_trees() {
        return Err(Error::ProvenanceMismatch);
    }
    let scorer = Scorer {
        partitioning,
        target: mapping.cells(),
        t: T::from_count(mapping.n_trees()),
    };
    let threshold = T::lit(config.select_threshold);
    let epsilon = T::lit(config.epsilon);

    let mut base = mapping.sites().clone();
    let mut previous = T::zero();
    let mut best_sim = T::neg_infinity();
    let mut best_theta: Vec<T> = Vec::new();
    let mut trajectory = Vec::new();
    let mut path = Vec::new();

    for _ in 0..config.max_iter {
        let tracers = generate_tracer_points(&base, config.n_tr)?;
        let sims = scorer.score_all(&tracers);
        let top_idx = select_top(&sims, config.k_max, threshold);
        let top = tracers.select_rows(&top_idx);
        let top_sims: Vec<T> = top_idx.iter().map(|&i| sims[i]).collect();

        let mut round_sim = top_sims[0];
        let mut round_theta = top.row(0).to_vec();
        if let Some(line) = line_candidates(&top, &top_sims, config.line_samples)? {
            let line_sims = scorer.score_all(&line);
            for (i, &s) in line_sims.iter().enumerate() {
                if s > round_sim {
                    round_sim = s;
                    round_theta = line.row(i).to_vec();
                }
            }
        }
        if round_sim > best_sim {
            best_sim = round_sim;
            best_theta = round_theta;
        }
        trajectory.push(best_sim);
        path.push(best_theta.clone());

        if best_sim >= T::one() || round_sim - previous < epsilon {
            break;
        }
        previous = round_sim;
        base = top;
    }

    Ok(TracersResult {
        theta_est: best_theta,
        similarity: best_sim,
        iterations: trajectory.len(),
        trajectory,
        path,
    })
}

//! Comparison estimators: rejection ABC, local-linear regression adjustment,
//! the kernel posterior mean, and the central-tendency reducers they share.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::PairedDataset;
use crate::error::{check_dim, Error, Result};
use crate::kabc::PosteriorWeights;
use crate::linalg::{least_squares, Matrix};
use crate::scalar::{euclidean_distance, Scalar};

/// Number of histogram bins used by [`Estimator::Mode`].
pub const MODE_BINS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rejection,
    Loclinear,
    IkernelMean,
    MaximaWeighted,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Rejection,
        Method::Loclinear,
        Method::IkernelMean,
        Method::MaximaWeighted,
    ];

    /// Name used in JSON and CSV output.
    pub fn name(self) -> &'static str {
        match self {
            Method::Rejection => "rejection",
            Method::Loclinear => "loclinear",
            Method::IkernelMean => "ikernel_mean",
            Method::MaximaWeighted => "maxima_weighted",
        }
    }

    /// Short name accepted on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            Method::IkernelMean => "ikernel",
            Method::MaximaWeighted => "maxima",
            m => m.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || m.short_name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Method::ALL.iter().map(|m| m.short_name()).collect();
                Error::invalid(format!("unknown method '{s}'; valid methods: {}", valid.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Mean,
    Median,
    Mode,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Mean, Estimator::Median, Estimator::Mode];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Mean => "mean",
            Estimator::Median => "median",
            Estimator::Mode => "mode",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown estimator '{s}'; valid estimators: mean, median, mode")))
    }
}

/// A point estimate with its provenance. `estimator` is the reducer applied
/// to accepted draws; the kernel methods record it but do not use it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbcEstimate<T> {
    pub method: Method,
    pub estimator: Estimator,
    pub theta_est: Vec<T>,
    pub accepted_count: usize,
    pub diagnostics: BTreeMap<String, Value>,
}

/// Per-column mean, median or histogram mode of `samples`.
pub fn central_tendency<T: Scalar>(samples: &Matrix<T>, estimator: Estimator) -> Result<Vec<T>> {
    let m = samples.rows();
    if m == 0 {
        return Err(Error::EmptyInput("samples for central tendency"));
    }
    Ok((0..samples.cols())
        .map(|k| {
            let col = samples.column(k);
            match estimator {
                Estimator::Mean => col.iter().copied().sum::<T>() / T::from_count(m),
                Estimator::Median => median(col),
                Estimator::Mode => histogram_mode(&col),
            }
        })
        .collect())
}

fn median<T: Scalar>(mut v: Vec<T>) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        (v[m / 2 - 1] + v[m / 2]) / T::lit(2.0)
    }
}

fn histogram_mode<T: Scalar>(v: &[T]) -> T {
    let lo = v.iter().copied().fold(T::infinity(), T::min);
    let hi = v.iter().copied().fold(T::neg_infinity(), T::max);
    if !(hi > lo) {
        return lo;
    }
    let bins = T::from_count(MODE_BINS);
    let width = (hi - lo) / bins;
    let mut counts = [0usize; MODE_BINS];
    for &x in v {
        let b = ((x - lo) / (hi - lo) * bins).floor().to_usize().unwrap_or(0);
        counts[b.min(MODE_BINS - 1)] += 1;
    }
    let mut best = 0;
    for (b, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = b;
        }
    }
    lo + (T::from_count(best) + T::lit(0.5)) * width
}

struct Acceptance<T> {
    rows: Vec<usize>,
    distances: Vec<T>,
    /// Normalized simulation rows and observation used for the distances.
    sims: Matrix<T>,
    observation: Vec<T>,
}

fn accept<T: Scalar>(ds: &PairedDataset<T>, tolerance_fraction: f64) -> Result<Acceptance<T>> {
    if !(tolerance_fraction > 0.0 && tolerance_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "tolerance fraction must lie in (0, 1], got {tolerance_fraction}"
        )));
    }
    let n = ds.len();
    let keep = (n as f64 * tolerance_fraction).ceil() as usize;
    if keep == 0 {
        return Err(Error::invalid("tolerance fraction accepts no rows"));
    }
    let keep = keep.min(n);
    let norm = ds.normalize_columns();
    let obs = norm.observation();
    let dist: Vec<T> = (0..n)
        .into_par_iter()
        .map(|i| euclidean_distance(norm.sims().row(i), obs))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist[a].partial_cmp(&dist[b]).expect("finite").then(a.cmp(&b)));
    order.truncate(keep);
    Ok(Acceptance {
        distances: order.iter().map(|&i| dist[i]).collect(),
        rows: order,
        sims: norm.sims().clone(),
        observation: obs.to_vec(),
    })
}

fn diagnostics<T: Scalar>(tolerance_fraction: f64, acc: &Acceptance<T>) -> BTreeMap<String, Value> {
    let mut d = BTreeMap::new();
    d.insert("tolerance_fraction".into(), json!(tolerance_fraction));
    let h = acc.distances.last().map_or(0.0, |v| v.as_f64());
    d.insert("max_accepted_distance".into(), json!(h));
    d
}

/// Rejection ABC: keep the `⌈n·tol⌉` rows whose normalized simulation is
/// closest to the observation and reduce their parameters.
pub fn rejection_abc<T: Scalar>(
    ds: &PairedDataset<T>,
    tolerance_fraction: f64,
    estimator: Estimator,
) -> Result<AbcEstimate<T>> {
    let acc = accept(ds, tolerance_fraction)?;
    let theta = central_tendency(&ds.params().select_rows(&acc.rows), estimator)?;
    Ok(AbcEstimate {
        method: Method::Rejection,
        estimator,
        theta_est: theta,
        accepted_count: acc.rows.len(),
        diagnostics: diagnostics(tolerance_fraction, &acc),
    })
}

/// Rejection ABC followed by a local-linear regression adjustment with
/// Epanechnikov weights. Falls back to the plain rejection estimate when the
/// weighted design is singular.
pub fn loclinear_abc<T: Scalar>(
    ds: &PairedDataset<T>,
    tolerance_fraction: f64,
    estimator: Estimator,
) -> Result<AbcEstimate<T>> {
    let acc = accept(ds, tolerance_fraction)?;
    let (m, ds_dim, dq) = (acc.rows.len(), ds.sim_dim(), ds.param_dim());
    if m <= ds_dim + 1 {
        return Err(Error::invalid(format!(
            "local-linear adjustment needs more than {} accepted rows, got {m}; increase the tolerance",
            ds_dim + 1
        )));
    }
    let accepted = ds.params().select_rows(&acc.rows);
    let mut diag = diagnostics(tolerance_fraction, &acc);
    let h = *acc.distances.last().expect("non-empty");

    let status;
    let mut draws = accepted.clone();
    if h > T::zero() {
        let p = ds_dim + 1;
        let mut x = Matrix::zeros(m, p);
        let mut y = Matrix::zeros(m, dq);
        for (r, (&i, &dist)) in acc.rows.iter().zip(&acc.distances).enumerate() {
            let u = dist / h;
            let sw = (T::one() - u * u).max(T::zero()).sqrt();
            x[(r, 0)] = sw;
            for k in 0..ds_dim {
                x[(r, k + 1)] = sw * (acc.sims[(i, k)] - acc.observation[k]);
            }
            for k in 0..dq {
                y[(r, k)] = sw * accepted[(r, k)];
            }
        }
        match least_squares(&x, &y)? {
            Some(coef) => {
                for (r, &i) in acc.rows.iter().enumerate() {
                    for q in 0..dq {
                        let mut adj = T::zero();
                        for k in 0..ds_dim {
                            adj += coef[(k + 1, q)] * (acc.sims[(i, k)] - acc.observation[k]);
                        }
                        draws[(r, q)] -= adj;
                    }
                }
                status = "fitted";
            }
            None => status = "singular_fallback",
        }
    } else {
        status = "zero_bandwidth";
    }
    diag.insert("regression".into(), json!(status));
    diag.insert("fallback".into(), json!(status == "singular_fallback"));
    Ok(AbcEstimate {
        method: Method::Loclinear,
        estimator,
        theta_est: central_tendency(&draws, estimator)?,
        accepted_count: m,
        diagnostics: diag,
    })
}

/// Posterior mean `Σ w̃_i θ_i` with signed normalization `w̃ = w / Σ w`.
pub fn ikernel_point_estimate<T: Scalar>(weights: &PosteriorWeights<T>, params: &Matrix<T>) -> Result<AbcEstimate<T>> {
    check_dim(params.rows(), weights.len())?;
    if weights.is_empty() {
        return Err(Error::EmptyInput("posterior weights"));
    }
    let mass = weights.sum();
    let abs_mass: T = weights.w.iter().map(|w| w.abs()).sum();
    if !(mass.abs() > T::epsilon() * abs_mass) {
        return Err(Error::DegenerateWeightMass);
    }
    let mut theta = vec![T::zero(); params.cols()];
    for (row, &w) in params.iter_rows().zip(&weights.w) {
        let wt = w / mass;
        for (t, &x) in theta.iter_mut().zip(row) {
            *t += wt * x;
        }
    }
    let mut diag = BTreeMap::new();
    diag.insert("lambda".into(), json!(weights.lambda.as_f64()));
    diag.insert("residual_norm".into(), json!(weights.residual_norm.as_f64()));
    diag.insert("weight_sum".into(), json!(mass.as_f64()));
    Ok(AbcEstimate {
        method: Method::IkernelMean,
        estimator: Estimator::Mean,
        theta_est: theta,
        accepted_count: weights.len(),
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn col(v: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    fn weights(w: &[f64]) -> PosteriorWeights<f64> {
        PosteriorWeights {
            w: w.to_vec(),
            lambda: 0.01,
            residual_norm: 0.0,
        }
    }

    #[test]
    fn central_tendency_examples() {
        let one = Matrix::from_rows(&[[1.5, -2.0]]).unwrap();
        for e in Estimator::ALL {
            assert_eq!(central_tendency(&one, e).unwrap(), vec![1.5, -2.0]);
        }
        assert_eq!(central_tendency(&col(&[1.0, 2.0, 100.0]), Estimator::Median).unwrap(), vec![2.0]);
        assert_eq!(central_tendency(&col(&[4.0, 1.0, 3.0, 2.0]), Estimator::Median).unwrap(), vec![2.5]);
        assert_eq!(central_tendency(&col(&[0.0, 0.0, 0.0, 10.0]), Estimator::Mode).unwrap(), vec![0.15625]);
        // the maximum falls in the last bin
        assert_eq!(central_tendency(&col(&[0.0, 10.0, 10.0]), Estimator::Mode).unwrap(), vec![9.84375]);
        assert!(central_tendency(&Matrix::<f64>::zeros(0, 2), Estimator::Mean).is_err());
    }

    fn dataset(params: &[[f64; 2]], sims: &[[f64; 1]], obs: f64) -> PairedDataset<f64> {
        PairedDataset::new(
            Matrix::from_rows(params).unwrap(),
            Matrix::from_rows(sims).unwrap(),
            vec![obs],
        )
        .unwrap()
    }

    #[test]
    fn rejection_nearest_point_recall() {
        let params: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, -(i as f64)]).collect();
        let sims: Vec<[f64; 1]> = (0..10).map(|i| [(i * i) as f64]).collect();
        let ds = dataset(&params, &sims, 49.0);
        let est = rejection_abc(&ds, 0.1, Estimator::Mean).unwrap();
        assert_eq!(est.theta_est, vec![7.0, -7.0]);
        assert_eq!(est.accepted_count, 1);
        let all = rejection_abc(&ds, 1.0, Estimator::Mean).unwrap();
        assert_eq!(all.theta_est, vec![4.5, -4.5]);
    }

    #[test]
    fn rejection_keeps_two_nearest() {
        let ds = dataset(&[[1.0, 0.0], [3.0, 0.0], [10.0, 0.0]], &[[1.0], [2.0], [3.0]], 0.0);
        let est = rejection_abc(&ds, 2.0 / 3.0, Estimator::Mean).unwrap();
        assert_eq!(est.accepted_count, 2);
        assert_eq!(est.theta_est, vec![2.0, 0.0]);
    }

    #[test]
    fn rejection_rejects_bad_tolerance() {
        let ds = dataset(&[[1.0, 0.0]], &[[1.0]], 0.0);
        assert!(rejection_abc(&ds, 0.0, Estimator::Mean).is_err());
        assert!(rejection_abc(&ds, 1.5, Estimator::Mean).is_err());
    }

    #[test]
    fn rejection_matches_uniform_ikernel_mean() {
        let params: Vec<[f64; 2]> = (0..7).map(|i| [i as f64 * 0.3, (i % 3) as f64]).collect();
        let sims: Vec<[f64; 1]> = (0..7).map(|i| [i as f64]).collect();
        let ds = dataset(&params, &sims, 2.5);
        let a = rejection_abc(&ds, 1.0, Estimator::Mean).unwrap();
        let b = ikernel_point_estimate(&weights(&[1.0 / 7.0; 7]), ds.params()).unwrap();
        for (x, y) in a.theta_est.iter().zip(&b.theta_est) {
            assert_relative_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn loclinear_is_exact_on_linear_data() {
        let mut params = Vec::new();
        let mut sims = Vec::new();
        for i in 0..40 {
            let (a, b) = ((i as f64 * 0.37).sin(), (i as f64 * 0.91).cos());
            params.push([a, b]);
            sims.push([3.0 * a - b, a + 2.0 * b]);
        }
        let truth = [0.2, -0.4];
        let obs = vec![3.0 * truth[0] - truth[1], truth[0] + 2.0 * truth[1]];
        let ds = PairedDataset::new(Matrix::from_rows(&params).unwrap(), Matrix::from_rows(&sims).unwrap(), obs).unwrap();
        let est = loclinear_abc(&ds, 0.5, Estimator::Median).unwrap();
        assert_eq!(est.diagnostics["regression"], "fitted");
        for (x, t) in est.theta_est.iter().zip(truth) {
            assert!((x - t).abs() < 1e-12, "{x} vs {t}");
        }
    }

    #[test]
    fn loclinear_zero_spread_equals_rejection() {
        let ds = dataset(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [9.0, 5.0]], &[[4.0], [4.0], [4.0], [7.0]], 4.0);
        let a = loclinear_abc(&ds, 0.75, Estimator::Mean).unwrap();
        let b = rejection_abc(&ds, 0.75, Estimator::Mean).unwrap();
        assert_eq!(a.theta_est, b.theta_est);
        assert_eq!(a.theta_est[1], 5.0);
        assert_eq!(a.diagnostics["regression"], "zero_bandwidth");
    }

    #[test]
    fn loclinear_falls_back_on_singular_design() {
        // two distinct simulation values but a 2-D summary with collinear columns
        let params = Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0], [5.0]]).unwrap();
        let sims = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]]).unwrap();
        let ds = PairedDataset::new(params, sims, vec![0.0, 0.0]).unwrap();
        let a = loclinear_abc(&ds, 1.0, Estimator::Mean).unwrap();
        assert_eq!(a.diagnostics["fallback"], true);
        assert_eq!(a.theta_est, rejection_abc(&ds, 1.0, Estimator::Mean).unwrap().theta_est);
    }

    #[test]
    fn loclinear_needs_enough_rows() {
        let ds = dataset(&[[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]], &[[1.0], [2.0], [3.0]], 0.0);
        assert!(loclinear_abc(&ds, 2.0 / 3.0, Estimator::Mean).is_err());
        assert!(loclinear_abc(&ds, 1.0, Estimator::Mean).is_ok());
    }

    #[test]
    fn ikernel_examples() {
        let params = Matrix::from_rows(&[[0.0, 0.0], [2.0, 4.0]]).unwrap();
        assert_eq!(ikernel_point_estimate(&weights(&[0.5, 0.5]), &params).unwrap().theta_est, vec![1.0, 2.0]);
        assert_eq!(ikernel_point_estimate(&weights(&[0.0, 0.3]), &params).unwrap().theta_est, vec![2.0, 4.0]);
        assert!(matches!(
            ikernel_point_estimate(&weights(&[0.5, -0.5]), &params),
            Err(Error::DegenerateWeightMass)
        ));
        assert!(matches!(
            ikernel_point_estimate(&weights(&[0.0, 0.0]), &params),
            Err(Error::DegenerateWeightMass)
        ));
    }

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(m.short_name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), m.name());
        }
        let err = "bogus".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("rejection, loclinear, ikernel, maxima"), "{err}");
        assert_eq!("mode".parse::<Estimator>().unwrap(), Estimator::Mode);
    }

    #[test]
    fn estimate_json_key_order() {
        let est = ikernel_point_estimate(&weights(&[1.0]), &Matrix::from_rows(&[[3.0]]).unwrap()).unwrap();
        let s = serde_json::to_string(&est).unwrap();
        let keys = ["\"method\"", "\"estimator\"", "\"theta_est\"", "\"accepted_count\"", "\"diagnostics\""];
        let pos: Vec<usize> = keys.iter().map(|k| s.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{s}");
        let back: AbcEstimate<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, est);
    }
}

//! Synthetic benchmark models, error metrics and the MSE-vs-dimension sweep.
//!
//! Both models draw parameters uniformly on a box, thinned near the true
//! parameter `x0` so the region of interest is sparsely sampled:
//!
//! * Gaussian: `y_i = exp(-α_i (x_i - x0_i)^2)`, observation all ones.
//! * Linear: `y_i = α_i (x_i - x0_i) + η_i`, `η_i ~ N(0, η²)`, observation
//!   all zeros. By default `α_i` is chosen so that `max |y_i| = 10`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::Method;
use crate::data::PairedDataset;
use crate::error::{check_dim, Error, Result};
use crate::kernel::RbfKernel;
use crate::linalg::Matrix;
use crate::pipeline::{estimate_many_timed, AbcConfig};
use crate::scalar::{euclidean_distance, Scalar};
use crate::seed::{tags, SeedSpec};

/// Consecutive rejections tolerated by the gap sampler.
pub const STARVATION_LIMIT: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Gaussian,
    Linear,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Gaussian => "gaussian",
            Model::Linear => "linear",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Model::Gaussian),
            "linear" => Ok(Model::Linear),
            _ => Err(Error::invalid(format!("unknown model '{s}'; valid models: gaussian, linear"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub model: Model,
    pub d: usize,
    pub n: usize,
    /// Per-dimension coefficients; `None` selects the model default.
    pub alpha: Option<Vec<f64>>,
    pub x0: Vec<f64>,
    pub eta_stoch: f64,
    pub gap_radius: f64,
    pub gap_depth: f64,
    pub domain: Vec<(f64, f64)>,
}

impl SyntheticSpec {
    /// Unit-box spec with `x0` at the centre and default gap and noise.
    pub fn new(model: Model, d: usize, n: usize) -> Self {
        Self {
            model,
            d,
            n,
            alpha: None,
            x0: vec![0.5; d],
            eta_stoch: 0.0,
            gap_radius: 0.15,
            gap_depth: 0.9,
            domain: vec![(0.0, 1.0); d],
        }
    }

    /// Same spec in dimension `d`: per-dimension vectors are rebuilt from
    /// the first entry, and `x0` is reset to the domain centre.
    pub fn with_dim(&self, d: usize) -> Self {
        let dom = self.domain.first().copied().unwrap_or((0.0, 1.0));
        Self {
            d,
            alpha: self.alpha.as_ref().and_then(|a| a.first()).map(|&a| vec![a; d]),
            x0: vec![(dom.0 + dom.1) / 2.0; d],
            domain: vec![dom; d],
            ..self.clone()
        }
    }

    /// Replaces `x0` with a draw uniform on the middle 40% of each domain
    /// interval.
    pub fn with_random_x0(mut self, seed: SeedSpec) -> Self {
        let mut rng = seed.substream(tags::SYNTHETIC_TRUTH, 0);
        self.x0 = self
            .domain
            .iter()
            .map(|&(lo, hi)| lo + rng.random_range(0.3..=0.7) * (hi - lo))
            .collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        check_dim(self.d, self.x0.len())?;
        check_dim(self.d, self.domain.len())?;
        if let Some(a) = &self.alpha {
            check_dim(self.d, a.len())?;
            if a.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::invalid("alpha coefficients must be positive"));
            }
        }
        for (&x, &(lo, hi)) in self.x0.iter().zip(&self.domain) {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(format!("invalid domain interval ({lo}, {hi})")));
            }
            if !(lo..=hi).contains(&x) {
                return Err(Error::invalid(format!("x0 coordinate {x} outside domain ({lo}, {hi})")));
            }
        }
        if !(self.gap_radius > 0.0) {
            return Err(Error::invalid("gap radius must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gap_depth) {
            return Err(Error::invalid("gap depth must lie in [0, 1]"));
        }
        if !(self.eta_stoch >= 0.0) || !self.eta_stoch.is_finite() {
            return Err(Error::invalid("noise scale must be non-negative"));
        }
        Ok(())
    }

    /// Coefficients actually used: the explicit `alpha`, or 4 for the
    /// Gaussian model and `10 / max(x0 - lo, hi - x0)` for the linear one.
    pub fn effective_alpha(&self) -> Vec<f64> {
        if let Some(a) = &self.alpha {
            return a.clone();
        }
        match self.model {
            Model::Gaussian => vec![4.0; self.d],
            Model::Linear => self
                .x0
                .iter()
                .zip(&self.domain)
                .map(|(&x, &(lo, hi))| 10.0 / (x - lo).max(hi - x))
                .collect(),
        }
    }

    /// Copy with `alpha` filled in, for echoing into output.
    pub fn resolved(&self) -> Self {
        Self {
            alpha: Some(self.effective_alpha()),
            ..self.clone()
        }
    }

    /// Acceptance probability of candidate `x` under the gap.
    pub fn gap_acceptance(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.x0)
            .zip(&self.domain)
            .map(|((&v, &c), &(lo, hi))| ((v - c) / (hi - lo)).powi(2))
            .sum();
        1.0 - self.gap_depth * (-r2 / (self.gap_radius * self.gap_radius)).exp()
    }

    /// Noiseless model output at `x`.
    pub fn response(&self, x: &[f64]) -> Vec<f64> {
        let alpha = self.effective_alpha();
        x.iter()
            .zip(&self.x0)
            .zip(&alpha)
            .map(|((&v, &c), &a)| match self.model {
                Model::Gaussian => (-a * (v - c) * (v - c)).exp(),
                Model::Linear => a * (v - c),
            })
            .collect()
    }
}

fn generate<T: Scalar>(spec: &SyntheticSpec, seed: SeedSpec) -> Result<PairedDataset<T>> {
    spec.validate()?;
    let (d, n) = (spec.d, spec.n);
    let mut rng = seed.substream(tags::SYNTHETIC, 0);
    let noise = Normal::new(0.0, spec.eta_stoch).map_err(|e| Error::invalid(e.to_string()))?;
    let noisy = spec.model == Model::Linear && spec.eta_stoch > 0.0;
    let mut params = Vec::with_capacity(n * d);
    let mut sims = Vec::with_capacity(n * d);
    let mut x = vec![0.0; d];
    for _ in 0..n {
        let mut rejected = 0;
        loop {
            for (v, &(lo, hi)) in x.iter_mut().zip(&spec.domain) {
                *v = rng.random_range(lo..hi);
            }
            if rng.random::<f64>() < spec.gap_acceptance(&x) {
                break;
            }
            rejected += 1;
            if rejected >= STARVATION_LIMIT {
                return Err(Error::AcceptanceStarvation(rejected));
            }
        }
        let mut y = spec.response(&x);
        if noisy {
            for v in &mut y {
                *v += noise.sample(&mut rng);
            }
        }
        params.extend(x.iter().map(|&v| T::lit(v)));
        sims.extend(y.into_iter().map(T::lit));
    }
    let observation = spec.response(&spec.x0).into_iter().map(T::lit).collect();
    PairedDataset::new(Matrix::from_vec(n, d, params)?, Matrix::from_vec(n, d, sims)?, observation)
}

/// Gaussian-model dataset; the observation is the all-ones response at `x0`.
pub fn generate_gaussian_dataset<T: Scalar>(spec: &SyntheticSpec, seed: SeedSpec) -> Result<PairedDataset<T>> {
    if spec.model != Model::Gaussian {
        return Err(Error::invalid("spec model is not gaussian"));
    }
    generate(spec, seed)
}

/// Linear-model dataset; the observation is the noiseless response at `x0`.
pub fn generate_linear_dataset<T: Scalar>(spec: &SyntheticSpec, seed: SeedSpec) -> Result<PairedDataset<T>> {
    if spec.model != Model::Linear {
        return Err(Error::invalid("spec model is not linear"));
    }
    generate(spec, seed)
}

/// Dataset for whichever model `spec` names.
pub fn generate_dataset<T: Scalar>(spec: &SyntheticSpec, seed: SeedSpec) -> Result<PairedDataset<T>> {
    generate(spec, seed)
}

pub fn mse<T: Scalar>(theta_est: &[T], theta_true: &[T]) -> Result<T> {
    check_dim(theta_true.len(), theta_est.len())?;
    if theta_est.is_empty() {
        return Err(Error::EmptyInput("mse of empty vectors"));
    }
    let s: T = theta_est.iter().zip(theta_true).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(s / T::from_count(theta_est.len()))
}

fn check_samples<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::EmptyInput("metric sample"));
    }
    check_dim(a.cols(), b.cols())
}

fn mean_pairwise<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(&[T], &[T]) -> T + Sync) -> T {
    let total: T = (0..a.rows())
        .into_par_iter()
        .map(|i| b.iter_rows().map(|r| f(a.row(i), r)).sum::<T>())
        .collect::<Vec<T>>()
        .into_iter()
        .sum();
    total / (T::from_count(a.rows()) * T::from_count(b.rows()))
}

/// Energy distance `2E‖A−B‖ − E‖A−A′‖ − E‖B−B′‖` over all pairs.
pub fn energy_distance<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    check_samples(a, b)?;
    let ab = mean_pairwise(a, b, euclidean_distance);
    let aa = mean_pairwise(a, a, euclidean_distance);
    let bb = mean_pairwise(b, b, euclidean_distance);
    Ok((T::lit(2.0) * ab - aa - bb).max(T::zero()))
}

/// Square root of the biased MMD² estimate with a Gaussian RBF kernel.
pub fn mmd<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, bandwidth: T) -> Result<T> {
    let k = RbfKernel::new(bandwidth)?;
    check_samples(a, b)?;
    let eval = |x: &[T], y: &[T]| k.eval(x, y);
    let ab = mean_pairwise(a, b, eval);
    let aa = mean_pairwise(a, a, eval);
    let bb = mean_pairwise(b, b, eval);
    Ok((aa + bb - T::lit(2.0) * ab).max(T::zero()).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub dimension: usize,
    pub method: Method,
    pub replicate_seed: u64,
    /// `NaN` when the method failed; see `error`.
    pub mse: f64,
    pub wall_time_ms: f64,
    pub error: Option<String>,
}

/// Runs every method on `replicates` datasets per dimension and records
/// the MSE against the true parameter. Rows come out ordered by dimension,
/// method, replicate. Method failures are recorded per row.
pub fn benchmark_sweep(
    dims: &[usize],
    methods: &[Method],
    replicates: usize,
    template: &SyntheticSpec,
    config: &AbcConfig,
    seed: SeedSpec,
) -> Result<Vec<BenchmarkRow>> {
    if dims.is_empty() || methods.is_empty() {
        return Err(Error::invalid("benchmark needs at least one dimension and one method"));
    }
    if replicates == 0 {
        return Err(Error::invalid("replicates must be at least 1"));
    }
    for &d in dims {
        template.with_dim(d).validate()?;
    }
    config.validate()?;
    let jobs: Vec<(usize, usize)> = dims
        .iter()
        .flat_map(|&d| (0..replicates).map(move |r| (d, r)))
        .collect();
    let results: Vec<Vec<BenchmarkRow>> = jobs
        .par_iter()
        .map(|&(d, r)| run_replicate(d, r, methods, template, config, seed))
        .collect();

    let mut rows = Vec::with_capacity(jobs.len() * methods.len());
    for (di, _) in dims.iter().enumerate() {
        for m in 0..methods.len() {
            for r in 0..replicates {
                rows.push(results[di * replicates + r][m].clone());
            }
        }
    }
    Ok(rows)
}

fn run_replicate(
    d: usize,
    r: usize,
    methods: &[Method],
    template: &SyntheticSpec,
    config: &AbcConfig,
    seed: SeedSpec,
) -> Vec<BenchmarkRow> {
    let rep = seed.child(tags::BENCHMARK, ((d as u64) << 32) | r as u64);
    let row = |method, mse: f64, ms: f64, error: Option<String>| BenchmarkRow {
        dimension: d,
        method,
        replicate_seed: rep.master_seed,
        mse,
        wall_time_ms: ms,
        error,
    };
    let spec = template.with_dim(d).with_random_x0(rep);
    let ds = match generate_dataset::<f64>(&spec, rep) {
        Ok(ds) => ds,
        Err(e) => return methods.iter().map(|&m| row(m, f64::NAN, 0.0, Some(e.to_string()))).collect(),
    };
    estimate_many_timed(&ds, methods, config, rep)
        .into_iter()
        .zip(methods)
        .map(|((res, elapsed), &m)| {
            let ms = elapsed.as_secs_f64() * 1e3;
            match res.and_then(|est| mse(&est.theta_est, &spec.x0)) {
                Ok(v) => row(m, v, ms, None),
                Err(e) => row(m, f64::NAN, ms, Some(e.to_string())),
            }
        })
        .collect()
}

/// Writes `dimension,method,replicate_seed,mse,wall_time_ms`.
pub fn write_benchmark_csv(path: &Path, rows: &[BenchmarkRow]) -> Result<()> {
    let mut out = String::from("dimension,method,replicate_seed,mse,wall_time_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:?},{:.3}\n",
            r.dimension, r.method, r.replicate_seed, r.mse, r.wall_time_ms
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_response_examples() {
        let mut spec = SyntheticSpec::new(Model::Gaussian, 2, 10);
        spec.x0 = vec![0.2, 0.7];
        assert_eq!(spec.response(&[0.2, 0.7]), vec![1.0, 1.0]);
        spec.alpha = Some(vec![1.0, 1.0]);
        spec.domain = vec![(0.0, 2.0); 2];
        let y = spec.response(&[1.2, 0.7]);
        assert_relative_eq!(y[0], (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(y[0], 0.3679, epsilon = 1e-4);
    }

    #[test]
    fn linear_response_examples() {
        let mut spec = SyntheticSpec::new(Model::Linear, 1, 10);
        spec.domain = vec![(0.0, 10.0)];
        spec.x0 = vec![2.0];
        assert_eq!(spec.response(&[2.0]), vec![0.0]);
        spec.alpha = Some(vec![2.0]);
        assert_eq!(spec.response(&[5.0]), vec![6.0]);
    }

    #[test]
    fn linear_default_scaling_reaches_ten() {
        let mut spec = SyntheticSpec::new(Model::Linear, 2, 10);
        spec.x0 = vec![0.3, 0.5];
        let a = spec.effective_alpha();
        assert_relative_eq!(a[0], 10.0 / 0.7);
        assert_eq!(a[1], 20.0);
        let y = spec.response(&[1.0, 0.0]);
        assert_relative_eq!(y[0], 10.0, epsilon = 1e-12);
        assert_relative_eq!(y[1], -10.0, epsilon = 1e-12);
    }

    #[test]
    fn observation_is_noiseless_response_at_truth() {
        let spec = SyntheticSpec::new(Model::Gaussian, 3, 50).with_random_x0(SeedSpec::new(2));
        let ds = generate_gaussian_dataset::<f64>(&spec, SeedSpec::new(2)).unwrap();
        assert_eq!(ds.observation(), &[1.0, 1.0, 1.0]);
        assert_eq!(ds.len(), 50);
        let mut lin = SyntheticSpec::new(Model::Linear, 2, 20);
        lin.eta_stoch = 0.5;
        let ds = generate_linear_dataset::<f64>(&lin, SeedSpec::new(2)).unwrap();
        assert_eq!(ds.observation(), &[0.0, 0.0]);
        assert!(generate_linear_dataset::<f64>(&spec, SeedSpec::new(1)).is_err());
    }

    #[test]
    fn random_truth_stays_in_middle_band() {
        for s in 0..50 {
            let spec = SyntheticSpec::new(Model::Gaussian, 4, 1).with_random_x0(SeedSpec::new(s));
            assert!(spec.x0.iter().all(|&v| (0.3..=0.7).contains(&v)));
            spec.validate().unwrap();
        }
    }

    #[test]
    fn noise_channel_has_requested_scale() {
        let mut spec = SyntheticSpec::new(Model::Linear, 2, 10_000);
        spec.eta_stoch = 0.3;
        let ds = generate_linear_dataset::<f64>(&spec, SeedSpec::new(5)).unwrap();
        let alpha = spec.effective_alpha();
        for k in 0..2 {
            let resid: Vec<f64> = (0..ds.len())
                .map(|i| ds.sims()[(i, k)] - alpha[k] * (ds.params()[(i, k)] - spec.x0[k]))
                .collect();
            let mean = resid.iter().sum::<f64>() / resid.len() as f64;
            let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
            assert!((var.sqrt() - 0.3).abs() < 0.02, "sd {}", var.sqrt());
        }
    }

    #[test]
    fn no_gap_means_no_rejection() {
        let mut spec = SyntheticSpec::new(Model::Gaussian, 2, 10);
        spec.gap_depth = 0.0;
        assert_eq!(spec.gap_acceptance(&[0.5, 0.5]), 1.0);
        assert_eq!(spec.gap_acceptance(&[0.1, 0.9]), 1.0);
    }

    #[test]
    fn starvation_is_reported() {
        let mut spec = SyntheticSpec::new(Model::Gaussian, 1, 5);
        spec.gap_depth = 1.0;
        spec.gap_radius = 1e6;
        let err = generate_gaussian_dataset::<f64>(&spec, SeedSpec::new(1)).unwrap_err();
        assert!(matches!(err, Error::AcceptanceStarvation(STARVATION_LIMIT)));
        assert!(err.to_string().contains("smaller gap depth"));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::new(Model::Linear, 3, 100);
        let a = generate_dataset::<f64>(&spec, SeedSpec::new(8)).unwrap();
        let b = generate_dataset::<f64>(&spec, SeedSpec::new(8)).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset::<f64>(&spec, SeedSpec::new(9)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs() {
        assert!(SyntheticSpec::new(Model::Gaussian, 0, 5).validate().is_err());
        assert!(SyntheticSpec::new(Model::Gaussian, 2, 0).validate().is_err());
        let mut s = SyntheticSpec::new(Model::Gaussian, 2, 5);
        s.x0 = vec![1.5, 0.5];
        assert!(s.validate().is_err());
        let mut s = SyntheticSpec::new(Model::Gaussian, 2, 5);
        s.gap_depth = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5);
        assert_eq!(mse(&[1.5], &[-0.5]).unwrap(), 4.0);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn metric_singletons() {
        let a = Matrix::from_rows(&[[0.0]]).unwrap();
        let b = Matrix::from_rows(&[[3.0]]).unwrap();
        assert_eq!(energy_distance(&a, &b).unwrap(), 6.0);
        assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
        let expected = (2.0 - 2.0 * (-9.0f64 / 2.0).exp()).sqrt();
        assert_relative_eq!(mmd(&a, &b, 1.0).unwrap(), expected, epsilon = 1e-12);
        assert_eq!(mmd(&a, &a, 1.0).unwrap(), 0.0);
        assert!(mmd(&a, &b, 0.0).is_err());
        let c = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(energy_distance(&a, &c).is_err());
    }
}

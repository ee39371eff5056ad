//! End-to-end estimation and the file-based `generate`, `estimate` and
//! `benchmark` runs.
//!
//! Kernel methods work on min-max normalized columns; estimates are mapped
//! back to the original parameter scale before they are returned.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baselines::{ikernel_point_estimate, loclinear_abc, rejection_abc, AbcEstimate, Estimator, Method};
use crate::data::{denormalize_point, load_paired_dataset, save_paired_dataset, write_matrix_csv, PairedDataset};
use crate::error::{Error, Result};
use crate::kabc::{
    maxima_weighted_mapping, posterior_weights, posterior_weights_isolation, site_probabilities, PosteriorWeights,
};
use crate::kernel::{feature_map, feature_maps, kernel_cross_vector, RbfKernel};
use crate::linalg::Matrix;
use crate::partition::{IsolationForest, Partitioner, VoronoiPartitioning};
use crate::scalar::Scalar;
use crate::seed::{tags, SeedSpec};
use crate::synthetic::{benchmark_sweep, generate_dataset, write_benchmark_csv, BenchmarkRow, Model, SyntheticSpec};
use crate::tracers::{tracers_search, TracersConfig, TracersResult};

/// Kernel used on simulation space to weight the samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKernel {
    /// Isolation Kernel over Voronoi partitionings.
    #[default]
    Isolation,
    /// Isolation Kernel over isolation trees.
    Iforest,
    /// Gaussian RBF with median-heuristic bandwidth.
    Rbf,
}

impl FromStr for SimKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isolation" => Ok(SimKernel::Isolation),
            "iforest" => Ok(SimKernel::Iforest),
            "rbf" => Ok(SimKernel::Rbf),
            _ => Err(Error::invalid(format!(
                "unknown simulation kernel '{s}'; valid kernels: isolation, iforest, rbf"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbcConfig {
    /// Sites per tree on parameter space.
    pub xi: usize,
    /// Trees on parameter space.
    pub trees: usize,
    /// Sites (or subsample size) per tree on simulation space.
    pub xi_sim: usize,
    pub trees_sim: usize,
    pub lambda: f64,
    /// Fraction of rows accepted by the rejection-based methods.
    pub tolerance_fraction: f64,
    pub estimator: Estimator,
    pub sim_kernel: SimKernel,
    /// Drop negative posterior weights before accumulating site masses.
    pub clip_negative: bool,
    pub tracers: TracersConfig,
}

impl Default for AbcConfig {
    fn default() -> Self {
        Self {
            xi: 32,
            trees: 200,
            xi_sim: 64,
            trees_sim: 100,
            lambda: 0.01,
            tolerance_fraction: 0.01,
            estimator: Estimator::Mean,
            sim_kernel: SimKernel::Isolation,
            clip_negative: false,
            tracers: TracersConfig::default(),
        }
    }
}

impl AbcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.xi == 0 || self.trees == 0 || self.xi_sim == 0 || self.trees_sim == 0 {
            return Err(Error::invalid("site and tree counts must be at least 1"));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !(self.tolerance_fraction > 0.0 && self.tolerance_fraction <= 1.0) {
            return Err(Error::invalid("tolerance fraction must lie in (0, 1]"));
        }
        self.tracers.validate()
    }
}

/// Posterior weights of every sample against the observation, using the
/// configured simulation-space kernel. `ds` should be normalized.
pub fn simulation_weights<T: Scalar>(
    ds: &PairedDataset<T>,
    config: &AbcConfig,
    seed: SeedSpec,
) -> Result<PosteriorWeights<T>> {
    let n = ds.len();
    let lambda = T::lit(config.lambda);
    let xi = config.xi_sim.min(n);
    match config.sim_kernel {
        SimKernel::Isolation => {
            let p = VoronoiPartitioning::build(ds.sims(), xi, config.trees_sim, seed, tags::PARTITION_SIM)?;
            isolation_weights(&p, ds, lambda)
        }
        SimKernel::Iforest => {
            let p = IsolationForest::build(ds.sims(), xi.max(2), config.trees_sim, seed, tags::PARTITION_SIM)?;
            isolation_weights(&p, ds, lambda)
        }
        SimKernel::Rbf => {
            let k = if n >= 2 {
                RbfKernel::median_heuristic(ds.sims())?
            } else {
                RbfKernel::new(T::one())?
            };
            posterior_weights(&k.gram(ds.sims())?, &k.cross(ds.sims(), ds.observation())?, lambda)
        }
    }
}

fn isolation_weights<T: Scalar, P: Partitioner<T>>(
    p: &P,
    ds: &PairedDataset<T>,
    lambda: T,
) -> Result<PosteriorWeights<T>> {
    let maps = feature_maps(p, ds.sims())?;
    let k = kernel_cross_vector(&maps, &feature_map(p, ds.observation())?)?;
    posterior_weights_isolation(p, &maps, &k, lambda)
}

/// Maxima weighted mapping plus Tracers, in normalized parameter space.
pub fn maxima_search<T: Scalar>(
    ds: &PairedDataset<T>,
    weights: &PosteriorWeights<T>,
    config: &AbcConfig,
    seed: SeedSpec,
) -> Result<(TracersResult<T>, Matrix<T>)> {
    let xi = config.xi.min(ds.len());
    let p = VoronoiPartitioning::build(ds.params(), xi, config.trees, seed, tags::PARTITION_THETA)?;
    let maps = feature_maps(&p, ds.params())?;
    let probs = site_probabilities(weights, &maps, &p, config.clip_negative)?;
    let mapping = maxima_weighted_mapping(&probs, &p)?;
    let result = tracers_search(&p, &mapping, &config.tracers)?;
    Ok((result, mapping.sites().clone()))
}

fn weight_diagnostics<T: Scalar>(w: &PosteriorWeights<T>, d: &mut BTreeMap<String, Value>) {
    d.insert("lambda".into(), json!(w.lambda.as_f64()));
    d.insert("residual_norm".into(), json!(w.residual_norm.as_f64()));
    d.insert("weight_min".into(), json!(w.min().as_f64()));
    d.insert("weight_max".into(), json!(w.max().as_f64()));
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn denormalized<T: Scalar>(ds: &PairedDataset<T>, mut est: AbcEstimate<T>) -> Result<AbcEstimate<T>> {
    est.theta_est = denormalize_point(&est.theta_est, ds.param_ranges())?;
    if est.theta_est.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter estimate"));
    }
    Ok(est)
}

/// Runs each method on `ds` and returns estimates on the original parameter
/// scale, in the order of `methods`. Kernel methods share one weight solve.
pub fn estimate_many<T: Scalar>(
    ds: &PairedDataset<T>,
    methods: &[Method],
    config: &AbcConfig,
    seed: SeedSpec,
) -> Vec<Result<AbcEstimate<T>>> {
    estimate_many_timed(ds, methods, config, seed)
        .into_iter()
        .map(|(r, _)| r)
        .collect()
}

/// [`estimate_many`] with the wall time of each method. The shared weight
/// solve is charged to the first kernel method.
pub fn estimate_many_timed<T: Scalar>(
    ds: &PairedDataset<T>,
    methods: &[Method],
    config: &AbcConfig,
    seed: SeedSpec,
) -> Vec<(Result<AbcEstimate<T>>, Duration)> {
    if let Err(e) = config.validate() {
        let msg = e.to_string();
        return methods
            .iter()
            .map(|_| (Err(Error::invalid(msg.clone())), Duration::ZERO))
            .collect();
    }
    let norm = ds.normalize_columns();
    let mut weights: Option<PosteriorWeights<T>> = None;
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let start = Instant::now();
        let res = (|| {
            let est = match method {
                Method::Rejection => rejection_abc(&norm, config.tolerance_fraction, config.estimator)?,
                Method::Loclinear => loclinear_abc(&norm, config.tolerance_fraction, config.estimator)?,
                Method::IkernelMean | Method::MaximaWeighted => {
                    if weights.is_none() {
                        weights = Some(simulation_weights(&norm, config, seed)?);
                    }
                    let w = weights.as_ref().expect("weights computed");
                    if method == Method::IkernelMean {
                        let mut est = ikernel_point_estimate(w, norm.params())?;
                        weight_diagnostics(w, &mut est.diagnostics);
                        est
                    } else {
                        maxima_estimate(&norm, w, config, seed)?.0
                    }
                }
            };
            denormalized(&norm, est)
        })();
        out.push((res, start.elapsed()));
    }
    out
}

fn maxima_estimate<T: Scalar>(
    norm: &PairedDataset<T>,
    w: &PosteriorWeights<T>,
    config: &AbcConfig,
    seed: SeedSpec,
) -> Result<(AbcEstimate<T>, TracersResult<T>)> {
    let (tr, sites) = maxima_search(norm, w, config, seed)?;
    let mut d = BTreeMap::new();
    weight_diagnostics(w, &mut d);
    d.insert("similarity".into(), json!(tr.similarity.as_f64()));
    d.insert("iterations".into(), json!(tr.iterations));
    d.insert("trajectory".into(), json!(to_f64(&tr.trajectory)));
    let top: Vec<Vec<f64>> = sites
        .iter_rows()
        .map(|r| to_f64(&denormalize_point(r, norm.param_ranges()).expect("matching dimension")))
        .collect();
    d.insert("top_sites".into(), json!(top));
    let est = AbcEstimate {
        method: Method::MaximaWeighted,
        estimator: config.estimator,
        theta_est: tr.theta_est.clone(),
        accepted_count: norm.len(),
        diagnostics: d,
    };
    Ok((est, tr))
}

/// Single-method convenience wrapper around [`estimate_many`].
pub fn estimate<T: Scalar>(
    ds: &PairedDataset<T>,
    method: Method,
    config: &AbcConfig,
    seed: SeedSpec,
) -> Result<AbcEstimate<T>> {
    estimate_many(ds, &[method], config, seed).pop().expect("one result")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Generate,
    #[default]
    Estimate,
    Benchmark,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Generate => "generate",
            Command::Estimate => "estimate",
            Command::Benchmark => "benchmark",
        })
    }
}

/// Everything a run needs. Serialized verbatim into every output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub out: PathBuf,
    pub method: Method,
    pub abc: AbcConfig,
    pub model: Model,
    pub dim: usize,
    pub n: usize,
    pub eta: f64,
    pub gap_radius: f64,
    pub gap_depth: f64,
    pub dims: Vec<usize>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    /// Directory holding `params.csv`, `sims.csv` and `obs.csv`.
    pub data: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub sims: Option<PathBuf>,
    pub obs: Option<PathBuf>,
    /// Write the per-iteration Tracers trace next to the estimate.
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Estimate,
            seed: 0,
            out: PathBuf::from("out"),
            method: Method::MaximaWeighted,
            abc: AbcConfig::default(),
            model: Model::Gaussian,
            dim: 2,
            n: 5000,
            eta: 0.0,
            gap_radius: 0.15,
            gap_depth: 0.9,
            dims: vec![2, 4, 8],
            methods: Method::ALL.to_vec(),
            replicates: 20,
            data: None,
            params: None,
            sims: None,
            obs: None,
            trace: false,
        }
    }
}

impl RunConfig {
    pub fn seed_spec(&self) -> SeedSpec {
        SeedSpec::new(self.seed)
    }

    /// Synthetic spec described by the generation fields, with `x0` unset.
    pub fn synthetic_template(&self, dim: usize) -> SyntheticSpec {
        let mut spec = SyntheticSpec::new(self.model, dim, self.n);
        spec.eta_stoch = self.eta;
        spec.gap_radius = self.gap_radius;
        spec.gap_depth = self.gap_depth;
        spec
    }

    fn input_path(&self, explicit: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        match (explicit, &self.data) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(dir.join(name)),
            (None, None) => Err(Error::invalid(format!("no input given for {name}; pass --data or the file path"))),
        }
    }

    fn write_config(&self, dir: &Path, extra: Option<(&str, Value)>) -> Result<()> {
        let mut v = json!({ "config": self });
        if let Some((k, x)) = extra {
            v[k] = x;
        }
        write_json(&dir.join("config.json"), &v)
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes a synthetic dataset: `params.csv`, `sims.csv`, `obs.csv`,
/// `truth.csv` and `config.json`.
pub fn run_generate(config: &RunConfig) -> Result<SyntheticSpec> {
    let seed = config.seed_spec();
    let spec = config.synthetic_template(config.dim).with_random_x0(seed);
    spec.validate()?;
    let ds = generate_dataset::<f64>(&spec, seed)?;
    ensure_dir(&config.out)?;
    save_paired_dataset(&config.out, &ds)?;
    let truth = Matrix::from_vec(1, spec.d, spec.x0.clone())?;
    write_matrix_csv(&config.out.join("truth.csv"), "theta", &truth)?;
    let resolved = spec.resolved();
    config.write_config(&config.out, Some(("synthetic", serde_json::to_value(&resolved)?)))?;
    Ok(resolved)
}

/// Estimate output: the estimate fields followed by the effective config.
#[derive(Serialize)]
struct EstimateReport<'a> {
    #[serde(flatten)]
    estimate: &'a AbcEstimate<f64>,
    config: &'a RunConfig,
}

/// Loads the dataset, runs `config.method` and writes `estimate.json`.
/// On failure writes `{"error", "config"}` to the same file and returns the
/// error.
pub fn run_estimate(config: &RunConfig) -> Result<AbcEstimate<f64>> {
    ensure_dir(&config.out)?;
    let path = config.out.join("estimate.json");
    let res = estimate_from_files(config);
    match &res {
        Ok((est, trace)) => {
            write_json(&path, &EstimateReport { estimate: est, config })?;
            if let (true, Some(tr)) = (config.trace, trace) {
                tr.write_trace_csv(&config.out.join("trace.csv"))?;
            }
        }
        Err(e) => write_json(&path, &json!({ "error": e.to_string(), "config": config }))?,
    }
    res.map(|(est, _)| est)
}

fn estimate_from_files(config: &RunConfig) -> Result<(AbcEstimate<f64>, Option<TracersResult<f64>>)> {
    let ds = load_paired_dataset::<f64>(
        &config.input_path(&config.params, "params.csv")?,
        &config.input_path(&config.sims, "sims.csv")?,
        &config.input_path(&config.obs, "obs.csv")?,
    )?;
    let seed = config.seed_spec();
    if config.method == Method::MaximaWeighted && config.trace {
        config.abc.validate()?;
        let norm = ds.normalize_columns();
        let w = simulation_weights(&norm, &config.abc, seed)?;
        let (est, tr) = maxima_estimate(&norm, &w, &config.abc, seed)?;
        return Ok((denormalized(&norm, est)?, Some(tr)));
    }
    Ok((estimate(&ds, config.method, &config.abc, seed)?, None))
}

/// Runs the sweep and writes `benchmark.csv` and `config.json`. Failed
/// rows are kept in the table with a `NaN` MSE.
pub fn run_benchmark(config: &RunConfig) -> Result<Vec<BenchmarkRow>> {
    if config.dims.contains(&0) {
        return Err(Error::invalid("dimensions must be at least 1"));
    }
    let template = config.synthetic_template(config.dims.first().copied().unwrap_or(1));
    let rows = benchmark_sweep(
        &config.dims,
        &config.methods,
        config.replicates,
        &template,
        &config.abc,
        config.seed_spec(),
    )?;
    ensure_dir(&config.out)?;
    write_benchmark_csv(&config.out.join("benchmark.csv"), &rows)?;
    let errors: Vec<Value> = rows
        .iter()
        .filter_map(|r| {
            r.error.as_ref().map(|e| {
                json!({
                    "dimension": r.dimension,
                    "method": r.method,
                    "replicate_seed": r.replicate_seed,
                    "error": e,
                })
            })
        })
        .collect();
    config.write_config(&config.out, Some(("errors", Value::Array(errors))))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::mse;

    #[test]
    fn config_json_round_trip_with_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 5, "abc": {"xi": 8}}"#).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.abc.xi, 8);
        assert_eq!(c.abc.trees, 200);
        assert_eq!(c.abc.tracers.k_max, 20);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_abc_config() {
        let mut c = AbcConfig::default();
        assert!(c.validate().is_ok());
        c.lambda = 0.0;
        assert!(c.validate().is_err());
        let c = AbcConfig {
            tolerance_fraction: 0.0,
            ..AbcConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn all_methods_run_on_small_gaussian_data() {
        let spec = SyntheticSpec::new(Model::Gaussian, 2, 400).with_random_x0(SeedSpec::new(3));
        let ds = generate_dataset::<f64>(&spec, SeedSpec::new(3)).unwrap();
        let cfg = AbcConfig {
            tolerance_fraction: 0.05,
            ..AbcConfig::default()
        };
        let res = estimate_many(&ds, &Method::ALL, &cfg, SeedSpec::new(3));
        for (m, r) in Method::ALL.iter().zip(res) {
            let est = r.unwrap();
            assert_eq!(est.method, *m);
            assert_eq!(est.theta_est.len(), 2);
            assert!(mse(&est.theta_est, &spec.x0).unwrap() < 0.1, "{m}: {:?}", est.theta_est);
        }
    }

    #[test]
    fn rbf_and_iforest_kernels_run() {
        let spec = SyntheticSpec::new(Model::Linear, 2, 300);
        let ds = generate_dataset::<f64>(&spec, SeedSpec::new(1)).unwrap();
        for k in [SimKernel::Rbf, SimKernel::Iforest] {
            let cfg = AbcConfig {
                sim_kernel: k,
                ..AbcConfig::default()
            };
            let est = estimate(&ds, Method::IkernelMean, &cfg, SeedSpec::new(1)).unwrap();
            assert!(mse(&est.theta_est, &spec.x0).unwrap() < 0.1, "{k:?}");
        }
    }

    #[test]
    fn estimates_are_in_original_units() {
        let spec = SyntheticSpec::new(Model::Linear, 1, 200);
        let ds = generate_dataset::<f64>(&spec, SeedSpec::new(4)).unwrap();
        let scaled = PairedDataset::new(
            Matrix::from_vec(200, 1, ds.params().as_slice().iter().map(|v| 100.0 + 50.0 * v).collect()).unwrap(),
            ds.sims().clone(),
            ds.observation().to_vec(),
        )
        .unwrap();
        let cfg = AbcConfig {
            tolerance_fraction: 0.1,
            ..AbcConfig::default()
        };
        for m in Method::ALL {
            let a = estimate(&ds, m, &cfg, SeedSpec::new(4)).unwrap().theta_est[0];
            let b = estimate(&scaled, m, &cfg, SeedSpec::new(4)).unwrap().theta_est[0];
            assert!((100.0 + 50.0 * a - b).abs() < 1e-9, "{m}: {a} {b}");
        }
    }
}

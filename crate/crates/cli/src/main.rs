use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ikabc::baselines::{Estimator, Method};
use ikabc::pipeline::{run_benchmark, run_estimate, run_generate, Command, RunConfig, SimKernel};
use ikabc::synthetic::Model;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "ikabc", version, about = "ABC with maxima weighted Isolation Kernel mapping")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic (params, sims, obs) dataset and its true parameter.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Parameter and summary dimension.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        dim: Option<u64>,
    },
    /// Estimate the parameter behind an observation from a CSV triple.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Directory containing params.csv, sims.csv and obs.csv.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        sims: Option<PathBuf>,
        #[arg(long)]
        obs: Option<PathBuf>,
        /// Also write the per-iteration Tracers trace (maxima method only).
        #[arg(long)]
        trace: bool,
    },
    /// Compare methods on synthetic data across dimensions.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated dimensions.
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u64).range(1..))]
        dims: Option<Vec<u64>>,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        methods: Option<Vec<Method>>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        replicates: Option<u64>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    /// Sites per tree on parameter space.
    #[arg(long)]
    xi: Option<usize>,
    /// Trees on parameter space.
    #[arg(long)]
    trees: Option<usize>,
    /// Sites per tree on simulation space.
    #[arg(long)]
    xi_sim: Option<usize>,
    /// Trees on simulation space.
    #[arg(long)]
    trees_sim: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Acceptance fraction for rejection and loclinear.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_parser = parse_estimator)]
    estimator: Option<Estimator>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Simulation-space kernel: isolation, iforest or rbf.
    #[arg(long, value_parser = parse_sim_kernel)]
    sim_kernel: Option<SimKernel>,
    /// Drop negative posterior weights before the maxima mapping.
    #[arg(long)]
    clip_negative: bool,
    /// Tracers per base point.
    #[arg(long)]
    n_tr: Option<usize>,
    /// Top tracers kept per round.
    #[arg(long)]
    k_max: Option<usize>,
    /// Tracers stopping tolerance on similarity gain.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    line_samples: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_parser = parse_model)]
    model: Option<Model>,
    /// Sample size.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: Option<u64>,
    /// Noise scale of the linear model.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    gap_radius: Option<f64>,
    #[arg(long)]
    gap_depth: Option<f64>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: ikabc::Error| e.to_string())
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    s.parse().map_err(|e: ikabc::Error| e.to_string())
}

fn parse_sim_kernel(s: &str) -> Result<SimKernel, String> {
    s.parse().map_err(|e: ikabc::Error| e.to_string())
}

fn parse_model(s: &str) -> Result<Model, String> {
    s.parse().map_err(|e: ikabc::Error| e.to_string())
}

/// Reads a run config, either bare or as the `config` member of a
/// previous run's `config.json`.
fn load_config(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
    if let Some(inner) = v.get_mut("config").filter(|c| c.is_object()) {
        v = inner.take();
    }
    serde_json::from_value(v).map_err(|e| format!("invalid config {}: {e}", path.display()))
}

impl Common {
    fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.seed, c.seed);
        set!(self.out, c.out);
        set!(self.xi, c.abc.xi);
        set!(self.trees, c.abc.trees);
        set!(self.xi_sim, c.abc.xi_sim);
        set!(self.trees_sim, c.abc.trees_sim);
        set!(self.lambda, c.abc.lambda);
        set!(self.tol, c.abc.tolerance_fraction);
        set!(self.estimator, c.abc.estimator);
        set!(self.method, c.method);
        set!(self.sim_kernel, c.abc.sim_kernel);
        set!(self.n_tr, c.abc.tracers.n_tr);
        set!(self.k_max, c.abc.tracers.k_max);
        set!(self.epsilon, c.abc.tracers.epsilon);
        set!(self.max_iter, c.abc.tracers.max_iter);
        set!(self.line_samples, c.abc.tracers.line_samples);
        if self.clip_negative {
            c.abc.clip_negative = true;
        }
    }
}

impl ModelArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(m) = self.model {
            c.model = m;
        }
        if let Some(n) = self.n {
            c.n = n as usize;
        }
        if let Some(v) = self.eta {
            c.eta = v;
        }
        if let Some(v) = self.gap_radius {
            c.gap_radius = v;
        }
        if let Some(v) = self.gap_depth {
            c.gap_depth = v;
        }
    }
}

fn fail(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("{}", json!({ "error": message.to_string() }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Cmd::Generate { common, .. } | Cmd::Estimate { common, .. } | Cmd::Benchmark { common, .. } => common,
    };
    let mut config = match &common.config {
        Some(path) => match load_config(path) {
            Ok(c) => c,
            Err(e) => return fail(e),
        },
        None => RunConfig::default(),
    };
    common.apply(&mut config);
    if let Some(w) = common.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w as usize).build_global() {
            return fail(e);
        }
    }

    match &cli.command {
        Cmd::Generate { model, dim, .. } => {
            config.command = Command::Generate;
            model.apply(&mut config);
            if let Some(d) = dim {
                config.dim = *d as usize;
            }
            match run_generate(&config) {
                Ok(_) => {
                    println!("wrote dataset to {}", config.out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Cmd::Estimate {
            data,
            params,
            sims,
            obs,
            trace,
            ..
        } => {
            config.command = Command::Estimate;
            if data.is_some() {
                config.data = data.clone();
            }
            for (flag, field) in [(params, &mut config.params), (sims, &mut config.sims), (obs, &mut config.obs)] {
                if flag.is_some() {
                    *field = flag.clone();
                }
            }
            config.trace |= *trace;
            match run_estimate(&config) {
                Ok(est) => {
                    println!("{}", serde_json::to_string(&est).expect("estimate serializes"));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Cmd::Benchmark {
            model,
            dims,
            methods,
            replicates,
            ..
        } => {
            config.command = Command::Benchmark;
            model.apply(&mut config);
            if let Some(d) = dims {
                config.dims = d.iter().map(|&v| v as usize).collect();
            }
            if let Some(m) = methods {
                config.methods = m.clone();
            }
            if let Some(r) = replicates {
                config.replicates = *r as usize;
            }
            match run_benchmark(&config) {
                Ok(rows) => {
                    let failed = rows.iter().filter(|r| r.error.is_some()).count();
                    println!("wrote {} rows to {}", rows.len(), config.out.join("benchmark.csv").display());
                    if failed > 0 {
                        fail(format!("{failed} benchmark rows failed; see config.json"))
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(e),
            }
        }
    }
}

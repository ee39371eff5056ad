//! Approximate Bayesian computation with Isolation Kernel embeddings.
//!
//! Parameters and simulated summaries are embedded with data-dependent
//! Isolation Kernels. Kernel ridge weights against the observation give a
//! posterior over partition cells, whose per-tree maxima form a point mapping
//! in parameter space. A tracer search then recovers the parameter value
//! that best matches that mapping.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`.

pub mod baselines;
pub mod data;
pub mod error;
pub mod kabc;
pub mod kernel;
pub mod linalg;
pub mod partition;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod synthetic;
pub mod tracers;

pub use error::{Error, Result};
pub use partition::{IsolationForest, PartitionId, Partitioner, VoronoiPartitioning};
pub use scalar::Scalar;
pub use seed::SeedSpec;

pub type Matrix = linalg::Matrix<f64>;
pub type Dataset = data::PairedDataset<f64>;
pub type Voronoi = partition::VoronoiPartitioning<f64>;
pub type Forest = partition::IsolationForest<f64>;
pub type Weights = kabc::PosteriorWeights<f64>;
pub type Mapping = kabc::MaximaMapping<f64>;
pub type Tracers = tracers::TracersResult<f64>;

pub type Matrix32 = linalg::Matrix<f32>;
pub type Dataset32 = data::PairedDataset<f32>;
pub type Voronoi32 = partition::VoronoiPartitioning<f32>;

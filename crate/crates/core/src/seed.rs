//! Deterministic seeding. Every randomized stage draws from a named substream
//! derived purely from `(master_seed, tag, index)`, so results do not depend
//! on evaluation order or worker count, and adding a stage never shifts the
//! stream of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Substream tags used by the pipeline.
pub mod tags {
    pub const PARTITION_THETA: &str = "partitioning/theta";
    pub const PARTITION_SIM: &str = "partitioning/sim";
    pub const SYNTHETIC: &str = "synthetic";
    pub const SYNTHETIC_TRUTH: &str = "synthetic/x0";
    pub const TRACERS: &str = "tracers";
    pub const BENCHMARK: &str = "benchmark";
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
}

impl SeedSpec {
    pub const fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    fn digest(&self, tag: &str, index: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master_seed.to_le_bytes());
        h.update((tag.len() as u64).to_le_bytes());
        h.update(tag.as_bytes());
        h.update(index.to_le_bytes());
        h.finalize().into()
    }

    /// Random stream for item `index` of stage `tag`.
    pub fn substream(&self, tag: &str, index: u64) -> StreamRng {
        StreamRng::from_seed(self.digest(tag, index))
    }

    /// A derived master seed, for handing a whole sub-run its own `SeedSpec`.
    pub fn child(&self, tag: &str, index: u64) -> SeedSpec {
        let d = self.digest(tag, index);
        SeedSpec::new(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
    }
}

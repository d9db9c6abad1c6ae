//! Seeded random streams.
//!
//! Every run derives its generators from one master seed. Stream `k` is the
//! ChaCha8 stream number `k` keyed by the master seed, so streams never
//! overlap and adding a new consumer does not perturb existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream numbers used by the two-module runtime.
pub mod streams {
    pub const LINK: u64 = 0;
    pub const SHOTS: u64 = 1;
    pub const BOOTSTRAP: u64 = 2;
    pub const TOMOGRAPHY: u64 = 3;
    /// Module `i` draws from `MODULE_BASE + i`.
    pub const MODULE_BASE: u64 = 16;
    /// Experiments in a batch get `BATCH_BASE + index`.
    pub const BATCH_BASE: u64 = 1 << 16;
}

pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream reserved for module `index` (0 = Alice, 1 = Bob, ...).
pub fn module_stream(seed: u64, index: u8) -> SimRng {
    stream(seed, streams::MODULE_BASE + index as u64)
}

/// Independent trial `index` of a numbered family (bootstrap resamples,
/// benchmarking sequences, ...). Families live above the named streams, one
/// block of 2^32 streams each, so results do not depend on how trials are
/// spread over threads.
pub fn trial_stream(seed: u64, family: u64, index: u64) -> SimRng {
    stream(seed, (family << 32) | (index & 0xffff_ffff))
}

pub mod families {
    pub const BOOTSTRAP: u64 = 1;
    pub const RBM: u64 = 2;
    /// Entanglement campaigns averaged into one protocol channel.
    pub const HERALD: u64 = 3;
    /// Sessions producing single-shot histograms.
    pub const SHOTS: u64 = 4;
    /// Sub-experiments of one run (plain vs interleaved benchmarking, ...).
    pub const PART: u64 = 5;
}

/// A fresh master seed for trial `index` of `family`.
pub fn derive_seed(seed: u64, family: u64, index: u64) -> u64 {
    use rand::RngCore;
    trial_stream(seed, family, index).next_u64()
}

pub fn bootstrap_stream(seed: u64, index: u64) -> SimRng {
    trial_stream(seed, families::BOOTSTRAP, index)
}

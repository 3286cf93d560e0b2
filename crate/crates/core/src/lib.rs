//! Sparse-training core.
//!
//! A small deterministic dense-tensor engine with layer-wise reverse-mode
//! differentiation, plus the pieces of an iterative magnitude-momentum
//! pruning regime: per-weight magnitude history, per-layer importance
//! allocation, monotone sparsity masks and the prune-train loop itself.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, dataset
//! loaders and the command-line front end live in the `weightmom` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod allocate;
pub mod data;
pub mod error;
pub mod magtrack;
pub mod netcore;
pub mod pruner;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Seeded generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate-wide generator from a 64-bit seed and a stream id.
///
/// Streams keep independent consumers (initialization, per-epoch shuffling,
/// random baselines) from sharing state, so any epoch can be replayed from
/// the seed alone.
pub fn seeded_rng(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

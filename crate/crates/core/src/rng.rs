//! Seeded sub-streams.
//!
//! Every random decision in a run draws from a ChaCha8 stream keyed by
//! `(seed, purpose, indices...)`. Clients never share a stream, so the
//! order in which a round processes them does not change any draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream purposes. Distinct tags keep e.g. the sampling stream of client 3
/// independent from its minibatch-shuffling stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Sampling = 3,
    Training = 4,
    Partition = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `seed` with a SplitMix64 chain.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, purpose: Stream, parts: &[u64]) -> SimRng {
    let mut key = Vec::with_capacity(parts.len() + 1);
    key.push(purpose as u64);
    key.extend_from_slice(parts);
    SimRng::seed_from_u64(derive_seed(seed, &key))
}

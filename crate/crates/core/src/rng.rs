//! Counter-based random substreams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream whose key
//! is derived by hashing a 64-bit master seed together with a path of integer
//! labels (replication, group, observation, chunk, ...). Streams for distinct
//! paths are independent, so work can be split across threads in any order
//! and still reproduce the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain labels keep substreams of different consumers apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Observation = 1,
    PairSubsample = 2,
    CubicSubsample = 3,
    QuarticSubsample = 4,
    Permutation = 5,
    CommonSubsample = 6,
    Representation = 7,
    Overlap = 8,
    Replication = 9,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a seed and a label path into a 256-bit ChaCha key.
pub fn derive_key(seed: u64, path: &[u64]) -> [u8; 32] {
    let mut state = mix64(seed.wrapping_add(GOLDEN));
    for (pos, &label) in path.iter().enumerate() {
        state = mix64(state ^ mix64(label.wrapping_add((pos as u64 + 1).wrapping_mul(GOLDEN))));
    }
    let mut key = [0u8; 32];
    let mut lane = state;
    for chunk in key.chunks_exact_mut(8) {
        lane = mix64(lane.wrapping_add(GOLDEN));
        chunk.copy_from_slice(&lane.to_le_bytes());
    }
    key
}

/// Derives an independent generator for `(seed, domain, path...)`.
pub fn substream(seed: u64, domain: Domain, path: &[u64]) -> ChaCha8Rng {
    let mut full = Vec::with_capacity(path.len() + 1);
    full.push(domain as u64);
    full.extend_from_slice(path);
    ChaCha8Rng::from_seed(derive_key(seed, &full))
}

/// Derives a child seed, e.g. the per-replication seed of a simulation study.
pub fn child_seed(seed: u64, path: &[u64]) -> u64 {
    let key = derive_key(seed, path);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

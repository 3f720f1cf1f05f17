//! Seed derivation and small shared helpers.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream tags: each logical consumer of randomness derives its own stream
/// from `(seed, tag, ...)` so chains stay reproducible under any scheduling.
pub const STREAM_PRIOR: u64 = 0x01;
pub const STREAM_INNER: u64 = 0x02;
pub const STREAM_OUTER: u64 = 0x03;
pub const STREAM_OUTER_INNER: u64 = 0x04;
pub const STREAM_FINAL_DRAW: u64 = 0x05;
pub const STREAM_REJECTION: u64 = 0x06;
pub const STREAM_CHECK: u64 = 0x07;
pub const STREAM_GREEDY: u64 = 0x08;

/// SplitMix64 step; the standard 64-bit finalizer used to spread seed bits.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha stream from a base seed and a path of tags.
///
/// Every chain (outer, inner-at-step-t, greedy index (i,k), replicate) gets
/// its own tag path, so results are reproducible regardless of scheduling.
/// Derive a child seed from a base seed and a path of tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut state = seed;
    for &tag in tags {
        let mut t = tag;
        state ^= splitmix64(&mut t);
        splitmix64(&mut state);
    }
    let mut s = state;
    splitmix64(&mut s)
}

pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut state = seed;
    for &tag in tags {
        let mut t = tag;
        state ^= splitmix64(&mut t);
        splitmix64(&mut state);
    }
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(bytes)
}

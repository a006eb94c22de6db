//! Deterministic sub-seed derivation.
//!
//! Every pipeline stage draws randomness from its own seed derived from the
//! experiment seed and a stage tag. Stages therefore stay reproducible in
//! isolation: running the probing phase standalone consumes exactly the same
//! random stream as running it inside the full pipeline.

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a named sub-seed from a base seed.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    splitmix64(base ^ h)
}

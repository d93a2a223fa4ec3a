//! Deterministic derivation of independent RNG substreams from one seed.
//!
//! Forest trees, synthetic samples and harness cells each get their own
//! substream so results do not depend on evaluation order or thread count.

/// Mixes `(seed, index)` into a new seed (splitmix64 finalizer).
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! Seed derivation. Every stage and every parallel cell gets its own seed
//! derived from the run's global seed, so results do not depend on execution
//! order.

/// One step of the SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named stage.
pub fn derive(seed: u64, stage: &str) -> u64 {
    stage
        .bytes()
        .fold(splitmix64(seed), |acc, b| splitmix64(acc ^ u64::from(b)))
}

/// Seed for the `n`-th member of a family (a sampling run, a sweep seed).
pub fn derive_nth(seed: u64, n: u64) -> u64 {
    splitmix64(seed ^ splitmix64(n.wrapping_add(1)))
}

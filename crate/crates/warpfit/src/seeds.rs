//! Counter-based seed derivation for reproducible parallelism.
//!
//! Every Monte Carlo loop (bootstrap replicates, limit-law draws) seeds its
//! own RNG from `(master_seed, index)` so the result is identical regardless
//! of how the iterations are scheduled across threads.

/// Derives a per-task seed from a master seed and a task index.
///
/// Uses the splitmix64 finalizer, which decorrelates consecutive indices.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add((index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! Deterministic seed derivation.
//!
//! Every stochastic task in the toolkit (a bootstrap tree, a permutation
//! replicate, a synthetic subject) gets its own RNG seeded from the master
//! seed plus a stable integer path. Work scheduled across threads therefore
//! produces bit-identical output regardless of thread count or execution
//! order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Namespace tags so different task families never share a seed path.
pub const NS_SURV_TREE: u64 = 0x01;
pub const NS_SURV_VIMP: u64 = 0x02;
pub const NS_IMPUTE_TREE: u64 = 0x03;
pub const NS_SYNTH: u64 = 0x04;
pub const NS_IMPUTE_PREDICT: u64 = 0x05;
pub const NS_STRATUM: u64 = 0x06;

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash (master, path...) into a single u64. The path length is folded in so
/// `[a]` and `[a, 0]` never collide.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = mix(master);
    for &p in path {
        h = mix(h ^ p);
    }
    mix(h ^ path.len() as u64)
}

/// ChaCha generator for one task, addressed by its seed path.
pub fn task_rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

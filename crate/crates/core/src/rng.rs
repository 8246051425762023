//! Deterministic seed derivation and stream construction.
//!
//! Every source of randomness in the engine is a [`ChaCha8Rng`] seeded
//! through [`mix`], so a run is a pure function of the seeds recorded in
//! the manifest. Sub-streams are derived by hashing a parent seed together
//! with a purpose label, which keeps strategy, policy and evaluation
//! randomness independent of one another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(init: u64, bytes: &[u8]) -> u64 {
    let mut hash = init;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Derives a child seed from `seed` and a purpose label (FNV-1a, stable
/// across platforms and engine runs).
pub fn mix(seed: u64, label: &str) -> u64 {
    let h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    fnv1a(h, label.as_bytes())
}

/// Derives a child seed from `seed` and two labels (e.g. strategy and
/// policy names for a replicate arm).
pub fn mix2(seed: u64, a: &str, b: &str) -> u64 {
    let h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    let h = fnv1a(h, a.as_bytes());
    let h = fnv1a(h, b"\x00");
    fnv1a(h, b.as_bytes())
}

/// Builds the RNG stream for a derived seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample of `k` items without replacement, by partial
/// Fisher-Yates over a copy of `items`. Deterministic given the stream.
pub fn sample_without_replacement<T: Copy>(items: &[T], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    use rand::Rng;
    let mut pool: Vec<T> = items.to_vec();
    let k = k.min(pool.len());
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

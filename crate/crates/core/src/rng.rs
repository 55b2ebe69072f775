//! Seeded randomness shared by every stochastic routine in the crate.
//!
//! All streams come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`. ChaCha8 is a fixed, published algorithm, so
//! a given seed reproduces the same stream on every platform and in any other
//! implementation of ChaCha8 with the same seeding.
//!
//! Continuous draws are built from raw 64-bit words rather than from
//! distribution objects so the transforms are fully documented here:
//!
//! * [`open_unit`] takes the top 53 bits of a word `k` and returns
//!   `(k + 0.5) / 2^53`, a value strictly inside `(0, 1)`.
//! * [`standard_normal`] is the Box-Muller cosine branch applied to two
//!   consecutive [`open_unit`] draws.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives `count` independent child seeds from a master seed, in order.
///
/// Parallel work consumes these by index so that results do not depend on
/// scheduling.
pub fn derive_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = seeded(master);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Seed for a named sub-task, independent of the order in which sub-tasks
/// are created: the first 8 bytes (little-endian) of
/// `SHA-256(master.to_le_bytes() ‖ tag)`.
pub fn tagged_seed(master: u64, tag: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

const TWO_POW_53: f64 = 9_007_199_254_740_992.0;

pub fn open_unit(rng: &mut Rng) -> f64 {
    let k = rng.next_u64() >> 11;
    (k as f64 + 0.5) / TWO_POW_53
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    let u1 = open_unit(rng);
    let u2 = open_unit(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform index in `0..n` by rejection sampling on a 64-bit word.
pub fn index(rng: &mut Rng, n: usize) -> usize {
    assert!(n > 0, "index range must be non-empty");
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % n) as usize;
        }
    }
}

/// Fisher-Yates shuffle driven by [`index`].
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = index(rng, i + 1);
        items.swap(i, j);
    }
}

/// `k` distinct indices from `0..n`, via a partial Fisher-Yates pass.
pub fn sample_without_replacement(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + index(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_unit_stays_inside_interval() {
        let mut rng = seeded(7);
        for _ in 0..10_000 {
            let u = open_unit(&mut rng);
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normal_draws_have_unit_moments() {
        let mut rng = seeded(11);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn derived_seeds_are_reproducible() {
        assert_eq!(derive_seeds(3, 5), derive_seeds(3, 5));
        assert_ne!(derive_seeds(3, 5), derive_seeds(4, 5));
        assert_eq!(tagged_seed(3, "split"), tagged_seed(3, "split"));
        assert_ne!(tagged_seed(3, "split"), tagged_seed(3, "rsf"));
        assert_ne!(tagged_seed(3, "split"), tagged_seed(4, "split"));
    }

    #[test]
    fn sampling_without_replacement_is_distinct() {
        let mut rng = seeded(1);
        let mut s = sample_without_replacement(&mut rng, 10, 6);
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 6);
        assert!(s.iter().all(|&i| i < 10));
    }
}

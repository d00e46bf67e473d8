//! Deterministic keyed random streams.
//!
//! Every random draw in this crate flows through a [`RngStream`] keyed by
//! `(master_seed, device_id, round, coordinate)`. Identical keys yield
//! identical streams on every platform, so simulations are reproducible
//! from a single master seed regardless of device execution order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Key identifying one logical random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub device_id: u64,
    pub round: u64,
    pub coordinate: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, device_id: u64, round: u64, coordinate: u64) -> Self {
        Self {
            master_seed,
            device_id,
            round,
            coordinate,
        }
    }

    /// Key for crate-level streams that are not tied to a device/round,
    /// e.g. device sampling or dataset generation. `purpose` disambiguates.
    pub fn root(master_seed: u64, purpose: u64) -> Self {
        Self::new(master_seed, u64::MAX, u64::MAX, purpose)
    }
}

// splitmix64 finalizer; chains the key words so that permuted components
// produce unrelated seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic pseudo-random stream (ChaCha8 keyed from a [`StreamKey`]).
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn from_key(key: StreamKey) -> Self {
        let w0 = mix(key.master_seed);
        let w1 = mix(w0 ^ key.device_id);
        let w2 = mix(w1 ^ key.round);
        let w3 = mix(w2 ^ key.coordinate);
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&w0.to_le_bytes());
        seed[8..16].copy_from_slice(&w1.to_le_bytes());
        seed[16..24].copy_from_slice(&w2.to_le_bytes());
        seed[24..32].copy_from_slice(&w3.to_le_bytes());
        Self {
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Uniform draw in [0, 1). Consumes exactly one variate.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Bernoulli(p) draw. Consumes exactly one uniform variate.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in [0, n). Consumes one variate.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Standard normal draw (Box-Muller, two uniforms per pair, cached).
    pub fn normal(&mut self) -> f64 {
        // Box-Muller without caching keeps the consumption contract simple:
        // exactly two uniforms per normal.
        let u1 = self.uniform().max(f64::MIN_POSITIVE);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates sample of `k` distinct indices from `0..n`.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_keys_identical_streams() {
        let key = StreamKey::new(7, 3, 11, 2);
        let mut a = RngStream::from_key(key);
        let mut b = RngStream::from_key(key);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn distinct_keys_diverge() {
        let mut a = RngStream::from_key(StreamKey::new(7, 3, 11, 2));
        let mut b = RngStream::from_key(StreamKey::new(7, 3, 11, 3));
        let same = (0..100).filter(|_| a.uniform() == b.uniform()).count();
        assert!(same < 3);
    }

    #[test]
    fn permuted_key_components_diverge() {
        let mut a = RngStream::from_key(StreamKey::new(0, 1, 0, 0));
        let mut b = RngStream::from_key(StreamKey::new(0, 0, 1, 0));
        assert_ne!(a.uniform(), b.uniform());
    }

    #[test]
    fn sample_without_replacement_is_distinct() {
        let mut rng = RngStream::from_key(StreamKey::root(42, 0));
        let s = rng.sample_without_replacement(10, 10);
        let mut sorted = s.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }
}

//! Named, seedable random streams.
//!
//! Every stochastic phase of training draws from its own stream so that
//! switching one phase off never shifts the draws seen by another. A stream
//! is identified by `(seed, label)`; the ChaCha key is the SHA-256 digest of
//! the little-endian seed followed by the UTF-8 label, which makes the
//! sequence identical on every platform.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        Self {
            seed,
            label: label.to_owned(),
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Independent child stream. Depends only on the parent's seed and label,
    /// never on how much of the parent has been consumed.
    pub fn substream(&self, label: &str) -> Self {
        Self::new(self.seed, &format!("{}/{}", self.label, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in [0, n). Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

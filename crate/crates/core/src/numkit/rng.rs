use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::Result;

/// Seeded ChaCha8 stream.
///
/// `seed_from_u64` expands the seed portably, and every draw goes through a
/// 64-bit path, so a seed yields the same values on every platform.
/// Independent substreams come from [`Rng::split`], which keeps the seed and
/// selects a different ChaCha stream id.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator on stream `stream` of the same seed.
    pub fn split(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self { seed: self.seed, inner }
    }

    /// Substream keyed by a string (first 8 bytes of its SHA-256).
    pub fn split_key(&self, key: &str) -> Self {
        let digest = Sha256::digest(key.as_bytes());
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        self.split(u64::from_le_bytes(word))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        self.inner.gen_range(0..n as u64) as usize
    }

    pub fn normal(&mut self, std: f64) -> f64 {
        let z: f64 = self.inner.sample(StandardNormal);
        z * std
    }

    pub fn normal_tensor(&mut self, dims: &[usize], std: f64) -> Result<Tensor> {
        Tensor::from_fn(dims, |_| self.normal(std))
    }

    pub fn uniform_tensor(&mut self, dims: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
        Tensor::from_fn(dims, |_| self.uniform_in(lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
            assert_eq!(a.normal(1.0).to_bits(), b.normal(1.0).to_bits());
            assert_eq!(a.below(13), b.below(13));
        }
    }

    #[test]
    fn split_streams_differ_and_repeat() {
        let root = Rng::new(3);
        let x: Vec<f64> = (0..8)
            .map({
                let mut r = root.split(1);
                move |_| r.uniform()
            })
            .collect();
        let y: Vec<f64> = (0..8)
            .map({
                let mut r = root.split(2);
                move |_| r.uniform()
            })
            .collect();
        let x2: Vec<f64> = (0..8)
            .map({
                let mut r = root.split(1);
                move |_| r.uniform()
            })
            .collect();
        assert_ne!(x, y);
        assert_eq!(x, x2);
        let mut k1 = root.split_key("video-1");
        let mut k2 = root.split_key("video-1");
        assert_eq!(k1.uniform(), k2.uniform());
    }

    #[test]
    fn frozen_first_draws() {
        // Pinned so a change in the generator or its expansion is caught.
        let mut r = Rng::new(0);
        let got: Vec<usize> = (0..8).map(|_| r.below(1000)).collect();
        assert_eq!(got, [709, 465, 699, 60, 879, 549, 935, 803]);
        assert_eq!(r.uniform().to_bits(), 4594726949291776396);
        assert_eq!(Rng::new(0).split_key("STVG:v1").below(1000), 523);
    }
}

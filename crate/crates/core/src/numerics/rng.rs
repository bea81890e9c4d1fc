//! Seeded, splittable random streams.
//!
//! Each stream is a ChaCha keystream keyed by `(seed, lineage)`. Splitting
//! hashes the parent lineage with a label, so children depend only on the
//! path of labels from the root and never on how many draws the parent has
//! made. That is what lets parallel workers reproduce a sequential run.

use ndarray::{ArrayD, IxDyn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Real;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    lineage: u64,
    inner: ChaCha12Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_lineage(seed, 0)
    }

    fn with_lineage(seed: u64, lineage: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&lineage.to_le_bytes());
        key[16..24].copy_from_slice(&splitmix64(seed ^ lineage.rotate_left(17)).to_le_bytes());
        RngStream {
            seed,
            lineage,
            inner: ChaCha12Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lineage(&self) -> u64 {
        self.lineage
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Child stream determined by `(seed, lineage, label)` alone.
    pub fn split(&self, label: u64) -> RngStream {
        let child = splitmix64(self.lineage ^ splitmix64(label.wrapping_add(0xA5A5_5A5A_D00D_F00D)));
        RngStream::with_lineage(self.seed, child)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Rejection sampling keeps the draw exactly uniform.
        let n64 = n as u64;
        let zone = u64::MAX - (u64::MAX % n64);
        loop {
            let x = self.inner.next_u64();
            if x < zone {
                return (x % n64) as usize;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn normal_array<F: Real>(&mut self, shape: &[usize]) -> ArrayD<F> {
        ArrayD::from_shape_simple_fn(IxDyn(shape), || F::cast(self.normal()))
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_label_repeat() {
        let root = RngStream::new(42);
        let mut a = root.split(7);
        let mut b = RngStream::new(42).split(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_ignores_parent_position() {
        let mut root = RngStream::new(3);
        let before = root.split(1).next_u64();
        root.normal_vec(10);
        assert_eq!(root.split(1).next_u64(), before);
    }

    #[test]
    fn sibling_streams_differ() {
        let root = RngStream::new(9);
        let a: Vec<u64> = {
            let mut r = root.split(0);
            (0..1000).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = root.split(1);
            (0..1000).map(|_| r.next_u64()).collect()
        };
        let equal = a.iter().zip(&b).filter(|(x, y)| x == y).count();
        assert_eq!(equal, 0);
    }

    #[test]
    fn normal_mean_near_zero() {
        let mut r = RngStream::new(11).split(2);
        let n = 10_000;
        let mean: f64 = r.normal_vec(n).iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "{mean}");
    }

    #[test]
    fn grandchildren_depend_on_path() {
        let root = RngStream::new(5);
        let mut a = root.split(1).split(2);
        let mut b = root.split(2).split(1);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}

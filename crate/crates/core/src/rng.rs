//! Seeded random streams.
//!
//! Backed by ChaCha8, which is counter based: a `(seed, stream)` pair fixes
//! the whole sequence on every platform, and independent substreams are just
//! different stream ids under the same seed.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream `id` under the same seed. Stream 0 is the parent's
    /// own sequence, so substreams start at 1.
    pub fn substream(&self, id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(id.wrapping_add(1));
        Self {
            seed: self.seed,
            inner,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        let x = lo + (hi - lo) * self.next_f64();
        // rounding can land exactly on `hi`
        if x >= hi {
            lo.max(hi - (hi - lo) * f64::EPSILON)
        } else {
            x
        }
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.next_f64() * n as f64) as usize % n
    }

    /// Standard normal via the Box–Muller transform; the second variate of
    /// each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `n` standard normals as an `n × 1` column.
    pub fn gaussian(&mut self, n: usize) -> Tensor {
        self.gaussian_matrix(n, 1)
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| self.normal()).collect();
        Tensor::matrix(rows, cols, data).expect("sized by construction")
    }

    /// `n` draws from `U[lo, hi)` as an `n × 1` column.
    pub fn uniform(&mut self, lo: f64, hi: f64, n: usize) -> Tensor {
        assert!(lo < hi, "uniform requires lo < hi");
        let data = (0..n).map(|_| self.uniform_in(lo, hi)).collect();
        Tensor::matrix(n, 1, data).expect("sized by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        let xa: Vec<f64> = (0..100).map(|_| a.normal()).collect();
        let xb: Vec<f64> = (0..100).map(|_| b.normal()).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn substreams_differ_and_repeat() {
        let root = Rng::new(9);
        let mut s1 = root.substream(1);
        let mut s2 = root.substream(2);
        let mut s1b = root.substream(1);
        let a: Vec<f64> = (0..8).map(|_| s1.next_f64()).collect();
        let b: Vec<f64> = (0..8).map(|_| s2.next_f64()).collect();
        let c: Vec<f64> = (0..8).map(|_| s1b.next_f64()).collect();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn uniform_stays_in_half_open_box() {
        let mut r = Rng::new(3);
        let u = r.uniform(0.0, 5.0, 100_000);
        assert!(u.data().iter().all(|&x| (0.0..5.0).contains(&x)));
    }

    #[test]
    fn normal_mean_within_clt_bound() {
        let mut r = Rng::new(11);
        let n = 1_000_000;
        let mean = (0..n).map(|_| r.normal()).sum::<f64>() / n as f64;
        // 3σ/√n = 0.003; the stated bound is 0.005
        assert!(mean.abs() < 0.005, "mean {mean}");
    }
}

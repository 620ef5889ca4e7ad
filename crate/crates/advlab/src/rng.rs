//! Deterministic random streams.
//!
//! Every source of randomness in the pipeline is a `(seed, stream_id)` pair
//! backed by a counter-based generator, so independent tasks draw from
//! independent streams without shared state and every experiment row is
//! reproducible in isolation.

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// A deterministic stream of random draws identified by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

// splitmix64 finalizer, used to spread derived stream ids.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RandomStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream with an id mixed from this stream's id and `salt`.
    /// Derivation is pure: it does not consume draws from `self`.
    pub fn derive(&self, salt: u64) -> RandomStream {
        RandomStream::new(self.seed, mix(self.stream_id ^ mix(salt)))
    }

    /// `n` i.i.d. draws from N(mu, var). `var = 0` degenerates to `mu`.
    pub fn draw_gaussian<T: Scalar>(&mut self, mu: T, var: T, n: usize) -> Vec<T> {
        assert!(var >= T::zero(), "variance must be nonnegative");
        let sd = var.sqrt();
        (0..n)
            .map(|_| {
                let z: f64 = self.rng.sample(StandardNormal);
                mu + sd * T::from_f64_lossy(z)
            })
            .collect()
    }

    /// `n` i.i.d. draws with replacement, uniform over `pool`.
    pub fn draw_empirical<T: Scalar>(&mut self, pool: &[T], n: usize) -> Result<Vec<T>> {
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        Ok((0..n)
            .map(|_| pool[self.rng.gen_range(0..pool.len())])
            .collect())
    }

    /// `k` distinct indices drawn uniformly from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        sample(&mut self.rng, n, k).into_vec()
    }

    pub fn gen_range_usize(&mut self, upper: usize) -> usize {
        self.rng.gen_range(0..upper)
    }

    /// Fisher-Yates shuffle of `0..n`, consuming draws from this stream.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }

    pub fn gen_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn fill_bytes(&mut self, buf: &mut [u8]) {
        self.rng.fill_bytes(buf);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_reproduces() {
        let mut a = RandomStream::new(7, 3);
        let mut b = RandomStream::new(7, 3);
        assert_eq!(
            a.draw_gaussian(0.0f64, 1.0, 100),
            b.draw_gaussian(0.0f64, 1.0, 100)
        );
    }

    #[test]
    fn distinct_stream_ids_differ() {
        let mut a = RandomStream::new(7, 0);
        let mut b = RandomStream::new(7, 1);
        assert_ne!(
            a.draw_gaussian(0.0f64, 1.0, 16),
            b.draw_gaussian(0.0f64, 1.0, 16)
        );
    }

    #[test]
    fn zero_variance_is_constant() {
        let mut s = RandomStream::new(1, 0);
        assert_eq!(s.draw_gaussian(2.5f64, 0.0, 5), vec![2.5; 5]);
    }

    #[test]
    fn gaussian_sample_variance_converges() {
        let mut s = RandomStream::new(11, 2);
        let draws = s.draw_gaussian(0.0f64, 4.0, 1_000_000);
        let (mean, var) = crate::stats::mean_variance(&draws);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 4.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn empirical_single_element_pool() {
        let mut s = RandomStream::new(1, 0);
        assert_eq!(s.draw_empirical(&[7.0f64], 4).unwrap(), vec![7.0; 4]);
    }

    #[test]
    fn empirical_empty_pool_rejected() {
        let mut s = RandomStream::new(1, 0);
        assert!(matches!(
            s.draw_empirical::<f64>(&[], 4),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn empirical_coin_is_fair() {
        // binomial: sd of the fraction over 1e6 draws is 5e-4; 0.002 is 4 sigma
        let mut s = RandomStream::new(3, 9);
        let draws = s.draw_empirical(&[0.0f64, 1.0], 1_000_000).unwrap();
        let ones = draws.iter().filter(|&&v| v == 1.0).count() as f64 / 1e6;
        assert!((ones - 0.5).abs() < 0.002, "fraction {ones}");
    }

    #[test]
    fn derive_is_pure_and_distinct() {
        let parent = RandomStream::new(5, 1);
        let mut c1 = parent.derive(0);
        let mut c2 = parent.derive(1);
        let mut c1b = parent.derive(0);
        let a = c1.draw_gaussian(0.0f64, 1.0, 8);
        assert_eq!(a, c1b.draw_gaussian(0.0f64, 1.0, 8));
        assert_ne!(a, c2.draw_gaussian(0.0f64, 1.0, 8));
    }
}

//! Seedable, splittable random source.
//!
//! Backed by ChaCha8. Each `Rng` remembers a 64-bit key; `child(i)` derives a
//! new generator from `(key, i)` alone, so child streams do not depend on how
//! many values the parent has already produced.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Rng {
    key: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Self {
            key: seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream number `index`.
    pub fn child(&self, index: u64) -> Self {
        Self::seed(splitmix64(
            self.key ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)),
        ))
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below called with n = 0");
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// One draw from Beta(a, b).
    pub fn beta(&mut self, a: f64, b: f64) -> Result<f64> {
        let dist = Beta::new(a, b).map_err(|e| Error::InvalidArgument(format!("Beta({a}, {b}): {e}")))?;
        Ok(dist.sample(&mut self.inner))
    }

    pub fn u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Rng::seed(42);
        let mut b = Rng::seed(42);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn child_independent_of_parent_consumption() {
        let a = Rng::seed(7);
        let mut b = Rng::seed(7);
        for _ in 0..13 {
            b.uniform();
        }
        let mut ca = a.child(3);
        let mut cb = b.child(3);
        assert_eq!(ca.u64(), cb.u64());
        assert_ne!(a.child(3).u64(), a.child(4).u64());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Rng::seed(1);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}

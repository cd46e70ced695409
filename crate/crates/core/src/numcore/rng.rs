use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};

/// Seedable random stream backed by ChaCha8.
///
/// ChaCha output is specified bit-for-bit, so identical seeds give identical
/// draws on every platform. There is no global generator; every consumer owns
/// its stream and forks children with [`SeededRng::child`].
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer, used to decorrelate derived seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for the child stream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `(seed, stream)`. Does not advance `self`.
    pub fn child(&self, stream: u64) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, stream))
    }

    /// Forks a fresh stream from the current position, advancing `self`.
    pub fn fork(&mut self) -> SeededRng {
        let s = self.next_u64();
        SeededRng::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.gen_range(0..n)
    }

    /// Standard normal draw (Box-Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> Result<bool> {
        ensure((0.0..=1.0).contains(&p), || {
            format!("bernoulli probability {p} outside [0, 1]")
        })?;
        // p = 1 must always succeed; uniform() < 1 holds for every draw.
        Ok(self.uniform() < p)
    }
}

pub fn bernoulli(rng: &mut SeededRng, p: f64) -> Result<u8> {
    rng.bernoulli(p).map(u8::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn children_differ_and_are_reproducible() {
        let root = SeededRng::new(7);
        let mut c1 = root.child(1);
        let mut c2 = root.child(2);
        let mut c1b = root.child(1);
        let x = c1.next_u64();
        assert_eq!(x, c1b.next_u64());
        assert_ne!(x, c2.next_u64());
    }

    #[test]
    fn bernoulli_extremes() {
        let mut rng = SeededRng::new(3);
        for _ in 0..1000 {
            assert_eq!(bernoulli(&mut rng, 1.0).unwrap(), 1);
            assert_eq!(bernoulli(&mut rng, 0.0).unwrap(), 0);
        }
    }

    #[test]
    fn bernoulli_rejects_out_of_range() {
        let mut rng = SeededRng::new(3);
        assert!(rng.bernoulli(1.5).is_err());
        assert!(rng.bernoulli(-0.1).is_err());
        assert!(rng.bernoulli(f64::NAN).is_err());
    }

    #[test]
    fn bernoulli_high_p_mean() {
        // sd of the mean = sqrt(0.99 * 0.01 / 10000) ~ 0.000995; +-3 sd ~ 0.003
        let mut rng = SeededRng::new(11);
        let hits: u32 = (0..10_000)
            .map(|_| bernoulli(&mut rng, 0.99).unwrap() as u32)
            .sum();
        let mean = hits as f64 / 10_000.0;
        assert!((0.985..=0.995).contains(&mean), "mean {mean}");
    }

    #[test]
    fn normal_moments() {
        let mut rng = SeededRng::new(5);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}

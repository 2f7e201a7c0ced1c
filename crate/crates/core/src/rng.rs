//! Seeded random source.
//!
//! Algorithm `chacha20`: the ChaCha stream cipher with 20 rounds
//! (`rand_chacha::ChaCha20Rng`) keyed from a 64-bit seed via
//! `SeedableRng::seed_from_u64`. Its output is specified by the cipher and
//! is identical on every platform.
//!
//! * Uniform `f64` in `[0, 1)`: the top 53 bits of one `u64` output times 2⁻⁵³.
//! * Standard normal: Marsaglia's polar method. Each accepted pair yields two
//!   samples; the second is cached and returned by the next call.
//! * Child streams: child `i` of a stream with seed `s` is seeded with
//!   `splitmix64(s ^ splitmix64(i))`. Children do not consume parent state.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ALGORITHM_ID: &str = "chacha20";

/// SplitMix64 finalizer, used to derive child seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct Rng {
    seed: u64,
    inner: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm_id(&self) -> &'static str {
        ALGORITHM_ID
    }

    pub fn child_seed(&self, index: u64) -> u64 {
        splitmix64(self.seed ^ splitmix64(index))
    }

    /// Independent stream derived from this stream's seed and `index`.
    pub fn child(&self, index: u64) -> Rng {
        Rng::new(self.child_seed(index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform sample in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform sample in `[lo, hi)`; returns `lo` when `lo == hi`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(Error::InvalidRange { lo, hi });
        }
        Ok(lo + (hi - lo) * self.next_f64())
    }

    /// Uniform integer in `[0, n)` by rejection (no modulo bias).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % n;
            }
        }
    }

    /// Uniform integer in the closed range `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi);
        lo + self.below((hi - lo) as u64 + 1) as usize
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let k = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * k);
                return u * k;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

impl std::fmt::Debug for Rng {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Rng")
            .field("algorithm", &ALGORITHM_ID)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// `n` i.i.d. standard-normal samples.
pub fn rng_normal(rng: &mut Rng, n: usize) -> Tensor<f64> {
    Tensor::from_fn(&[n], |_| rng.normal())
}

/// `n` i.i.d. samples from `Uniform[lo, hi)`.
pub fn rng_uniform(rng: &mut Rng, lo: f64, hi: f64, n: usize) -> Result<Tensor<f64>> {
    if lo > hi {
        return Err(Error::InvalidRange { lo, hi });
    }
    Ok(Tensor::from_fn(&[n], |_| lo + (hi - lo) * rng.next_f64()))
}

//! Counter-based deterministic random numbers.
//!
//! Each draw hashes `(seed, counter)` with the SplitMix64 finalizer, so a
//! stream is fully determined by the seed and the number of draws taken.
//! Only integer arithmetic and `libm` are involved; streams are identical
//! across platforms.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    /// Independent stream for a named sub-purpose (e.g. one per training step).
    pub fn derive(seed: u64, stream: u64) -> Self {
        Rng::new(mix(seed ^ mix(stream.wrapping_add(GOLDEN))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0);
        // Lemire's multiply-shift; the bias is below 2^-64 * bound.
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller (one value per pair of uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    pub fn normal_tensor(&mut self, shape: &[usize], mean: f64, std: f64) -> Tensor {
        Tensor::from_fn(shape, |_| mean + std * self.normal())
    }

    /// Samples `N(mean, std²)` restricted to `[lo, hi]` by rejection.
    pub fn truncated_normal(
        &mut self,
        shape: &[usize],
        mean: f64,
        std: f64,
        lo: f64,
        hi: f64,
    ) -> Result<Tensor> {
        if !(lo < hi) {
            return Err(Error::config(format!("truncation bounds [{lo}, {hi}] are empty")));
        }
        if !(std >= 0.0) {
            return Err(Error::config(format!("standard deviation {std} must be positive")));
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut tries = 0;
            loop {
                let v = mean + std * self.normal();
                if (lo..=hi).contains(&v) {
                    data.push(v);
                    break;
                }
                tries += 1;
                if tries >= MAX_REJECTIONS {
                    return Err(Error::config(format!(
                        "truncated normal N({mean}, {std}) has negligible mass in [{lo}, {hi}]"
                    )));
                }
            }
        }
        Tensor::new(shape, data)
    }
}

//! SplitMix64 counter-based generator and the seed-mixing rule.
//!
//! Every random quantity in the crate is a pure function of a seed: the
//! generator state is a Weyl counter and each output is the SplitMix64
//! finalizer applied to it.

use crate::special::normal_quantile;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output finalizer.
pub fn splitmix64_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tag` into `seed`; used to derive trial, row and stream seeds.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    splitmix64_finalize(seed ^ splitmix64_finalize(tag.wrapping_add(GOLDEN_GAMMA)))
}

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    counter: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { counter: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(GOLDEN_GAMMA);
        splitmix64_finalize(self.counter)
    }

    /// Uniform on the open interval (0, 1) with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inverse-CDF transform.
    pub fn standard_normal(&mut self) -> f64 {
        normal_quantile(self.next_f64())
    }
}

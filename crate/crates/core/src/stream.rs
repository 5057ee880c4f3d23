//! Counter-based pseudorandom stream.
//!
//! Every value is a pure function of `(seed, key, counter)`, so records can be
//! generated in any order or in parallel and still come out identical.
//!
//! Mixing function (all arithmetic wrapping on `u64`):
//!
//! ```text
//! splitmix64(z):
//!     z += 0x9E3779B97F4A7C15
//!     z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!     z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!     return z ^ (z >> 31)
//!
//! word(seed, key, counter) = splitmix64(splitmix64(splitmix64(seed) ^ key) ^ counter)
//! ```
//!
//! A word maps to a uniform double in `[0, 1)` as `(word >> 11) * 2^-53`.
//! Normal deviates use Box-Muller on the words at counters `2i` and `2i + 1`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A stream keyed by `(seed, key)`, indexed by a counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterStream {
    base: u64,
}

impl CounterStream {
    pub fn new(seed: u64, key: u64) -> Self {
        Self {
            base: splitmix64(splitmix64(seed) ^ key),
        }
    }

    #[inline]
    pub fn word(&self, counter: u64) -> u64 {
        splitmix64(self.base ^ counter)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.word(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal deviate number `index`.
    pub fn normal(&self, index: u64) -> f64 {
        let u1 = 1.0 - self.uniform(2 * index); // (0, 1]
        let u2 = self.uniform(2 * index + 1);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

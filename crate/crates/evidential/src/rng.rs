//! Seeded, splittable random number stream.
//!
//! Every stochastic routine in this crate takes an [`RngStream`] so that runs
//! are reproducible from a single 64-bit seed. Streams can be split into
//! independent child streams; parallel workers each own a child, which keeps
//! results byte-identical regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

/// A counter-based random stream. Identical seeds produce identical sample
/// sequences on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha12Rng,
}

// splitmix64: decorrelates child seeds derived from (seed, index).
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Seed this stream was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child stream. Children with distinct indices are
    /// statistically independent of each other and of the parent.
    pub fn split(&self, index: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(1))))
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Chi-squared draw with `k` degrees of freedom (`k > 0`, not necessarily
    /// an integer).
    pub fn chi_squared(&mut self, k: f64) -> f64 {
        ChiSquared::new(k)
            .expect("chi-squared degrees of freedom must be positive")
            .sample(&mut self.rng)
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

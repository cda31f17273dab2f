//! Stream-indexed random numbers.
//!
//! Every Monte Carlo sample owns a `(seed, stream_id)` pair and draws from a
//! ChaCha8 generator keyed by `seed` on stream `stream_id`. Sample `i` of an
//! experiment always reads from stream `salt ^ i`, so the numbers it sees do
//! not depend on how samples are spread over worker threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Stream for sample `index` of an experiment tagged with `salt`.
    pub const fn for_sample(seed: u64, salt: u64, index: u64) -> Self {
        Self::new(seed, salt ^ index)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Experiment salts. The low 48 bits are left free for sample indices.
pub mod salt {
    pub const GAMMA: u64 = 0x01 << 48;
    pub const GAMMA_PILOT: u64 = 0x02 << 48;
    pub const BIG_SIGMA2: u64 = 0x03 << 48;
    pub const SIGMA2: u64 = 0x04 << 48;
    pub const BRUNET: u64 = 0x05 << 48;
    pub const DISORDER: u64 = 0x10 << 48;
    pub const THERMAL: u64 = 0x11 << 48;
    pub const BRIDGE_INIT: u64 = 0x12 << 48;
    pub const DISORDER_ALT: u64 = 0x13 << 48;
    pub const BRIDGE_ALT: u64 = 0x14 << 48;
    pub const PERMUTATION: u64 = 0x20 << 48;
}

#[inline]
pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = rng.sample(StandardNormal);
    T::lit(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_replays() {
        let s = RngStream::new(7, 42);
        let a: Vec<u64> = (0..16).map(|_| 0).scan(s.rng(), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..16).map(|_| 0).scan(s.rng(), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::new(7, 1).rng();
        let mut b = RngStream::new(7, 2).rng();
        let xa: Vec<u64> = (0..8).map(|_| a.random()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.random()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let n = 20_000;
        let mut a = RngStream::new(3, salt::GAMMA ^ 5).rng();
        let mut b = RngStream::new(3, salt::GAMMA ^ 6).rng();
        let mut sxy = 0.0;
        for _ in 0..n {
            let x: f64 = normal(&mut a);
            let y: f64 = normal(&mut b);
            sxy += x * y;
        }
        let corr = sxy / n as f64;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr = {corr}");
    }
}

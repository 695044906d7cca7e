//! Counter-based random streams.
//!
//! Each stream is a ChaCha8 keystream selected by `(seed, stream id)`, so any
//! sub-stream (a column, a block of observations, one observation) can be
//! regenerated independently of how work is scheduled.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gauss::std_quantile;

pub struct Stream(ChaCha8Rng);

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Stream(rng)
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inverse CDF.
    pub fn normal(&mut self) -> f64 {
        std_quantile(self.uniform()).expect("uniform draw lies in (0, 1)")
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

/// Packs a purpose tag and a block number into a stream id.
pub fn stream_id(purpose: u32, block: u32) -> u64 {
    ((purpose as u64) << 32) | block as u64
}
